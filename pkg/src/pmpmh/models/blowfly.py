"""Nicholson's blowfly population model with latent survival and birth counts.

With 0-based times ``i = 0..T-1`` (the usual ``t = i + 1``)::

    S_i ~ Binom(N_{i-1}, exp(-delta * eps_i))          N_{-1} = N0
    R_i ~ Po(P * g(N_{i-tau-1}) * e_i),  i >= tau      g(n) = n exp(-n / N0)
    N_i = S_i + R_i  (R_i = 0 for i < tau)
    y_i ~ Po(phi * N_i)

The environmental noise ``eps`` and ``e`` is drawn once and then treated as
known. The birth noise ``e`` is stored for birth times only (``e[j]`` belongs
to time ``tau + j``).

The two latent count processes are sampled one at a time from their full
conditionals. Given R, the survival counts form a first-order Markov chain.
Given S, birth counts less than ``tau + 1`` steps apart do not interact, so
a block of at most ``tau`` births can be updated with a transition density
that ignores the previous birth count.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from ..exceptions import ConfigurationError, PMPMHError
from ..grid import StateQuantileGrid
from ..sampler import ChainOutput, ChainState, WithinCellProposal, update_states_sweep
from ..ssm import NONNEGATIVE_INTEGER, BlockScheme, ModelSpec

TAU = 5
N0 = 50.0


@dataclass(frozen=True)
class BlowflyParams:
    delta: float
    P: float
    beta_eps: float
    beta_e: float
    phi: float

    names = ("delta", "P", "beta_eps", "beta_e", "phi")

    def as_array(self):
        return np.array([self.delta, self.P, self.beta_eps, self.beta_e, self.phi])

    def is_valid(self) -> bool:
        return bool(np.all(self.as_array() > 0))


BLOWFLY_THETA = BlowflyParams(0.7, 50.0, 1.0, 0.1, 1.0)


@dataclass(frozen=True, eq=False)
class BlowflyData:
    """Observed counts plus the known environmental noise."""

    y: np.ndarray
    eps: np.ndarray
    e: np.ndarray
    tau: int = TAU
    n0: float = N0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "eps", np.asarray(self.eps, dtype=float))
        object.__setattr__(self, "e", np.asarray(self.e, dtype=float))
        if len(y) <= self.tau:
            raise ConfigurationError(f"need T > tau={self.tau}, got T={len(y)}")
        if self.eps.shape != y.shape or self.e.shape != (len(y) - self.tau,):
            raise ConfigurationError("noise vectors do not match the series length")
        if np.any(self.eps <= 0) or np.any(self.e <= 0):
            raise ConfigurationError("noise values must be strictly positive")

    @property
    def n_times(self) -> int:
        return len(self.y)

    def truncate(self, T: int) -> "BlowflyData":
        return BlowflyData(self.y[:T], self.eps[:T], self.e[:T - self.tau], self.tau, self.n0)


@dataclass
class BlowflyState:
    """Survival counts ``S`` and birth counts ``R`` (zero before ``tau``)."""

    S: np.ndarray
    R: np.ndarray
    tau: int = TAU

    @property
    def N(self) -> np.ndarray:
        return self.S + self.R


def binom_logpmf(k, n, p):
    """Binomial log pmf, ``-inf`` outside ``0 <= k <= n``; safe at ``p`` in {0, 1}."""
    k, n = np.asarray(k, dtype=float), np.asarray(n, dtype=float)
    ok = (k >= 0) & (k <= n)
    kk = np.where(ok, k, 0.0)
    nn = np.where(ok, n, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (gammaln(nn + 1) - gammaln(kk + 1) - gammaln(nn - kk + 1)
               + xlogy(kk, p) + xlog1py(nn - kk, -p))
    return np.where(ok, out, -np.inf)


def poisson_logpmf(k, lam):
    """Poisson log pmf, ``-inf`` for negative counts; ``lam = 0`` puts all mass on 0."""
    k = np.asarray(k, dtype=float)
    ok = k >= 0
    kk = np.where(ok, k, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = xlogy(kk, lam) - lam - gammaln(kk + 1)
    return np.where(ok, out, -np.inf)


def _birth_scale(n, n0):
    return n * np.exp(-n / n0)


def _survival(theta: BlowflyParams, eps):
    return np.exp(-theta.delta * eps)


def simulate_blowfly(theta: BlowflyParams, T: int, rng: np.random.Generator, tau: int = TAU,
                     n0: float = N0):
    """Simulate ``(BlowflyState, BlowflyData)``; the noise is stored in the data."""
    if T <= tau:
        raise ConfigurationError(f"need T > tau={tau}, got T={T}")
    eps = rng.gamma(theta.beta_eps, 1.0 / theta.beta_eps, T)
    e = rng.gamma(theta.beta_e, 1.0 / theta.beta_e, T - tau)
    # guard against gamma draws that underflow to exactly zero
    eps = np.maximum(eps, np.finfo(float).tiny)
    e = np.maximum(e, np.finfo(float).tiny)
    S = np.zeros(T)
    R = np.zeros(T)
    surv = _survival(theta, eps)
    for i in range(T):
        n_prev = n0 if i == 0 else S[i - 1] + R[i - 1]
        S[i] = rng.binomial(int(n_prev), surv[i])
        if i >= tau:
            n_lag = n0 if i - tau - 1 < 0 else S[i - tau - 1] + R[i - tau - 1]
            R[i] = rng.poisson(theta.P * _birth_scale(n_lag, n0) * e[i - tau])
    y = rng.poisson(theta.phi * (S + R)).astype(float)
    return BlowflyState(S, R, tau), BlowflyData(y, eps, e, tau, n0)


def blowfly_log_likelihood(state: BlowflyState, data: BlowflyData, theta: BlowflyParams) -> float:
    """``log p(S, R, y | theta, eps, e)``."""
    S, R = np.asarray(state.S, dtype=float), np.asarray(state.R, dtype=float)
    tau, n0 = data.tau, data.n0
    if np.any(R[:tau] != 0):
        return -np.inf
    N = S + R
    n_prev = np.concatenate(([n0], N[:-1]))
    total = binom_logpmf(S, n_prev, _survival(theta, data.eps)).sum()
    n_lag = np.concatenate(([n0], N))[:len(N) - tau]
    lam = theta.P * _birth_scale(n_lag, n0) * data.e
    total += poisson_logpmf(R[tau:], lam).sum()
    total += poisson_logpmf(data.y, theta.phi * N).sum()
    return float(total)


def _clipped(index, size):
    index = np.asarray(index)
    return np.clip(index, 0, size - 1), (index >= 0) & (index < size)


def survival_conditional_spec(data: BlowflyData, R: np.ndarray) -> ModelSpec:
    """Full conditional of ``S`` given the birth counts ``R`` (read live).

    Observation factors at time ``i`` collect everything else that depends
    on ``S_i``: the data term and the birth count ``tau + 1`` steps later.
    """
    T, tau, n0 = data.n_times, data.tau, data.n0
    eps, e = data.eps, data.e

    def log_initial(x, th):
        return binom_logpmf(x, n0, math.exp(-th.delta * eps[0]))

    def log_transition(x, xp, th, t):
        t = np.asarray(t)
        return binom_logpmf(x, xp + R[t - 1], np.exp(-th.delta * eps[t]))

    def log_observation(y_t, x, th, t):
        t = np.asarray(t)
        n = x + R[t]
        out = poisson_logpmf(y_t, th.phi * n)
        later, has_later = _clipped(t + tau + 1, T)
        birth = poisson_logpmf(R[later], th.P * _birth_scale(n, n0) * e[later - tau])
        return out + np.where(has_later, birth, 0.0)

    return ModelSpec(log_initial=log_initial, log_transition=log_transition,
                     log_observation=log_observation, state_support=NONNEGATIVE_INTEGER,
                     param_names=BlowflyParams.names, time_homogeneous=False,
                     name="blowfly-survival")


def birth_conditional_spec(data: BlowflyData, S: np.ndarray, R: np.ndarray) -> ModelSpec:
    """Full conditional of the births ``R[tau:]`` given ``S`` (both read live).

    Times are local: ``j`` is global time ``tau + j``; pass ``y[tau:]``.
    The transition into ``j`` is the birth density given the population
    ``tau + 1`` steps earlier and ignores the previous birth count, so the
    spec is only exact for blocks of at most ``tau`` births.
    """
    T, tau, n0 = data.n_times, data.tau, data.n0
    eps, e = data.eps, data.e

    def birth_density(x, th, j):
        j = np.asarray(j)
        lag, has_lag = _clipped(j - 1, T)
        n_lag = np.where(has_lag, S[lag] + R[lag], n0)
        return poisson_logpmf(x, th.P * _birth_scale(n_lag, n0) * e[j])

    def log_initial(x, th):
        return birth_density(x, th, 0)

    def log_transition(x, xp, th, t):
        return birth_density(x, th, t)

    def log_observation(y_t, x, th, t):
        i = np.asarray(t) + tau
        n = S[i] + x
        out = poisson_logpmf(y_t, th.phi * n)
        nxt, has_next = _clipped(i + 1, T)
        surv = binom_logpmf(S[nxt], n, np.exp(-th.delta * eps[nxt]))
        later, has_later = _clipped(i + tau + 1, T)
        birth = poisson_logpmf(R[later], th.P * _birth_scale(n, n0) * e[later - tau])
        return out + np.where(has_next, surv, 0.0) + np.where(has_later, birth, 0.0)

    return ModelSpec(log_initial=log_initial, log_transition=log_transition,
                     log_observation=log_observation, state_support=NONNEGATIVE_INTEGER,
                     param_names=BlowflyParams.names, time_homogeneous=False,
                     name="blowfly-births")


def blowfly_conditional_specs(fixed_dimension: str, data: BlowflyData, state: BlowflyState):
    """ModelSpec for the free dimension: ``"R"`` fixed gives the S-conditional,
    ``"S"`` fixed gives the R-conditional (over times ``tau..T-1``)."""
    if fixed_dimension == "R":
        return survival_conditional_spec(data, state.R)
    if fixed_dimension == "S":
        return birth_conditional_spec(data, state.S, state.R)
    raise ConfigurationError(f"fixed_dimension must be 'S' or 'R', got {fixed_dimension!r}")


def initial_state(data: BlowflyData, theta: Optional[BlowflyParams] = None) -> BlowflyState:
    """A feasible starting point near ``N = y / phi``.

    Survival takes its expected value given the previous population, capped
    at the target count, and births make up the rest. The population is
    kept at one or more so that every later count stays possible.
    """
    theta = BLOWFLY_THETA if theta is None else theta
    target = np.maximum(np.rint(data.y / theta.phi), 1.0)
    surv = np.exp(-theta.delta * data.eps)
    T, tau, n0 = data.n_times, data.tau, data.n0
    S, R = np.zeros(T), np.zeros(T)
    for i in range(T):
        n_prev = n0 if i == 0 else S[i - 1] + R[i - 1]
        if i < tau:
            S[i] = min(target[i], n_prev)
            continue
        n_lag = n0 if i - tau - 1 < 0 else S[i - tau - 1] + R[i - tau - 1]
        # births need a positive rate, which underflows for very large lags
        if theta.P * n_lag * math.exp(-n_lag / n0) * data.e[i - tau] > 0:
            S[i] = min(np.rint(n_prev * surv[i]), target[i])
            R[i] = target[i] - S[i]
        else:
            S[i] = min(target[i], n_prev)
    return BlowflyState(S, R, tau)


def _log_gamma_pdf(v, shape, rate):
    if v <= 0:
        return -np.inf
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1) * math.log(v) - rate * v


def _log_inv_gamma_pdf(v, shape, scale):
    if v <= 0:
        return -np.inf
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1) * math.log(v) - scale / v


def _gamma_noise_loglik(noise, beta):
    n = len(noise)
    return float(n * (beta * math.log(beta) - math.lgamma(beta))
                 + (beta - 1) * np.log(noise).sum() - beta * noise.sum())


class BlowflyUpdater:
    """Parameter step given the latent counts.

    ``P`` and ``phi`` are drawn from their conjugate gamma conditionals;
    ``delta``, ``beta_eps`` and ``beta_e`` take uniform random-walk
    Metropolis-Hastings steps. Gamma priors use shape and rate.
    """

    def __init__(self, delta_prior=(0.007, 0.01), P_prior=(50.0, 1.0),
                 beta_eps_prior=(100.0, 100.0), beta_e_prior=(10.0, 1.0),
                 phi_prior=(0.01, 0.01), widths=(0.03, 0.5, 0.05)):
        self.delta_prior = tuple(delta_prior)
        self.P_prior = tuple(P_prior)
        self.beta_eps_prior = tuple(beta_eps_prior)
        self.beta_e_prior = tuple(beta_e_prior)
        self.phi_prior = tuple(phi_prior)
        self.widths = tuple(widths)
        self.accepted = np.zeros(3, dtype=np.int64)
        self.proposed = np.zeros(3, dtype=np.int64)

    def log_prior(self, th: BlowflyParams) -> float:
        return (_log_gamma_pdf(th.delta, *self.delta_prior)
                + _log_gamma_pdf(th.P, *self.P_prior)
                + _log_inv_gamma_pdf(th.beta_eps, *self.beta_eps_prior)
                + _log_inv_gamma_pdf(th.beta_e, *self.beta_e_prior)
                + _log_gamma_pdf(th.phi, *self.phi_prior))

    def P_conditional(self, state: BlowflyState, data: BlowflyData):
        """Shape and rate of the gamma full conditional of ``P``."""
        tau = data.tau
        N = state.S + state.R
        n_lag = np.concatenate(([data.n0], N))[:len(N) - tau]
        rate = self.P_prior[1] + float((_birth_scale(n_lag, data.n0) * data.e).sum())
        return self.P_prior[0] + float(state.R[tau:].sum()), rate

    def phi_conditional(self, state: BlowflyState, data: BlowflyData):
        """Shape and rate of the gamma full conditional of ``phi``."""
        return (self.phi_prior[0] + float(data.y.sum()),
                self.phi_prior[1] + float((state.S + state.R).sum()))

    def _delta_target(self, delta, state, data):
        lp = _log_gamma_pdf(delta, *self.delta_prior)
        if lp == -np.inf:
            return lp
        N = state.S + state.R
        n_prev = np.concatenate(([data.n0], N[:-1]))
        return lp + float(binom_logpmf(state.S, n_prev, np.exp(-delta * data.eps)).sum())

    def _beta_target(self, beta, noise, prior):
        lp = _log_inv_gamma_pdf(beta, *prior)
        return lp if lp == -np.inf else lp + _gamma_noise_loglik(noise, beta)

    def __call__(self, state: BlowflyState, data: BlowflyData, th: BlowflyParams,
                 rng: np.random.Generator) -> BlowflyParams:
        shape, rate = self.P_conditional(state, data)
        th = replace(th, P=rng.gamma(shape, 1.0 / rate))
        shape, rate = self.phi_conditional(state, data)
        th = replace(th, phi=rng.gamma(shape, 1.0 / rate))
        targets = (
            ("delta", lambda v: self._delta_target(v, state, data)),
            ("beta_eps", lambda v: self._beta_target(v, data.eps, self.beta_eps_prior)),
            ("beta_e", lambda v: self._beta_target(v, data.e, self.beta_e_prior)),
        )
        for i, (name, target) in enumerate(targets):
            cur = getattr(th, name)
            cand = cur + self.widths[i] * (rng.random() - 0.5)
            self.proposed[i] += 1
            if cand <= 0:
                continue
            if math.log(rng.random()) < target(cand) - target(cur):
                th = replace(th, **{name: cand})
                self.accepted[i] += 1
        return th


def blowfly_theta_update(state: BlowflyState, data: BlowflyData, theta: BlowflyParams, rng,
                         updater: Optional[BlowflyUpdater] = None) -> BlowflyParams:
    updater = BlowflyUpdater() if updater is None else updater
    return updater(state, data, theta, rng)


def blowfly_grid(n_cells: int = 20, proportionality: float = 0.25, q: float = 0.01):
    """State-centred integer grid with variance proportional to the current count."""
    return StateQuantileGrid(n_cells, proportionality=proportionality, q=q,
                             integer_states=True, clamp_lower_at_zero=True)


def run_blowfly_chain(data: BlowflyData, theta_init: BlowflyParams, n_iter: int,
                      rng: np.random.Generator, gridder=None,
                      proposal: WithinCellProposal = WithinCellProposal(),
                      block_size: int = 4, overlap: int = 1,
                      state_init: Optional[BlowflyState] = None,
                      updater: Optional[BlowflyUpdater] = None, thin: int = 1,
                      sink=None, exact_reverse: bool = True) -> ChainOutput:
    """PMPMH for the blowfly model: parameters, then S given R, then R given S.

    Parameters
    ----------
    gridder : GridStrategy, optional
        Shared by both dimensions; defaults to :func:`blowfly_grid`.
    block_size : int
        At most ``tau`` so that the birth-conditional spec is exact.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    tau, T = data.tau, data.n_times
    if block_size > tau:
        raise ConfigurationError(f"block_size must be <= tau={tau} for the birth updates")
    gridder = blowfly_grid() if gridder is None else gridder
    updater = BlowflyUpdater() if updater is None else updater
    state = initial_state(data, theta_init) if state_init is None else state_init
    S = np.array(state.S, dtype=float)
    R = np.array(state.R, dtype=float)
    current = BlowflyState(S, R, tau)
    s_spec = survival_conditional_spec(data, R)
    r_spec = birth_conditional_spec(data, S, R)
    s_blocks = BlockScheme(T, block_size, overlap)
    r_blocks = BlockScheme(T - tau, block_size, overlap)
    s_chain = ChainState(x=S, theta=theta_init)
    r_chain = ChainState(x=R[tau:], theta=theta_init)
    y_r = data.y[tau:]
    theta = theta_init
    thetas, lps, kept, kept_it = [], [], [], []
    t0 = time.perf_counter()
    for m in range(1, n_iter + 1):
        theta = updater(current, data, theta, rng)
        s_chain.theta = r_chain.theta = theta
        update_states_sweep(s_chain, s_spec, gridder, proposal, s_blocks, data.y, rng,
                            exact_reverse)
        update_states_sweep(r_chain, r_spec, gridder, proposal, r_blocks, y_r, rng,
                            exact_reverse)
        tv = theta.as_array()
        lp = blowfly_log_likelihood(current, data, theta) + updater.log_prior(theta)
        thetas.append(tv)
        lps.append(lp)
        keep = m % thin == 0
        states = np.concatenate((S, R[tau:]))
        if keep:
            kept.append(states)
            kept_it.append(m)
        if sink is not None:
            try:
                sink(m, tv, states if keep else None)
            except Exception as exc:
                raise PMPMHError(f"output sink failed at iteration {m}: {exc}") from exc
    wall = time.perf_counter() - t0
    names = tuple(f"S{i + 1}" for i in range(T)) + tuple(f"R{i + 1}" for i in range(tau, T))
    labels = (tuple(f"S[{a + 1}:{b}]" for a, b in s_blocks)
              + tuple(f"R[{a + tau + 1}:{b + tau}]" for a, b in r_blocks))
    return ChainOutput(
        param_names=BlowflyParams.names,
        state_names=names,
        theta=np.array(thetas),
        states=np.array(kept).reshape(len(kept), len(names)),
        state_iterations=np.array(kept_it, dtype=np.int64),
        log_posterior=np.array(lps),
        accepted=np.concatenate((s_chain.accepted, r_chain.accepted)),
        proposed=np.concatenate((s_chain.proposed, r_chain.proposed)),
        block_labels=labels,
        wall_time=wall,
    )
