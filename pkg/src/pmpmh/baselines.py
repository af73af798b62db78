"""Particle Gibbs and particle Gibbs with ancestor sampling.

The state update is a conditional SMC sweep with bootstrap proposals from
the model's transition density and multinomial resampling whenever the
effective sample size of the weights drops below ``threshold * P``. The
reference trajectory is kept in the last particle slot. With ancestor
sampling, the reference's ancestor is redrawn at each resampling step in
proportion to the particle weight times the density of the reference
continuing from that particle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import ConfigurationError, ModelDefinitionError, ParticleDegeneracyError, PMPMHError
from .models.blowfly import (
    BlowflyData,
    BlowflyParams,
    BlowflyState,
    BlowflyUpdater,
    _birth_scale,
    binom_logpmf,
    blowfly_log_likelihood,
    initial_state,
    poisson_logpmf,
)
from .rng import categorical, categorical_many
from .sampler import ChainOutput, _identity_update, _log_prior
from .ssm import ModelSpec, log_joint_likelihood, theta_vector


@dataclass
class ParticleSystem:
    """Particles, normalized weights and ancestor indices of one sweep.

    ``ancestors[t]`` gives, for each particle at ``t``, its parent at
    ``t - 1`` (``ancestors[0]`` is the identity). ``resampled[t]`` tells
    whether the step into ``t`` resampled.
    """

    particles: np.ndarray
    weights: np.ndarray
    ancestors: np.ndarray
    resampled: np.ndarray

    def lineage(self, k: int) -> np.ndarray:
        """Particle indices along the ancestry of particle ``k`` at the final time."""
        T = self.particles.shape[0]
        idx = np.empty(T, dtype=np.intp)
        idx[-1] = k
        for t in range(T - 1, 0, -1):
            idx[t - 1] = self.ancestors[t, idx[t]]
        return idx


def _normalized(logw, t):
    if np.isnan(logw).any():
        raise ModelDefinitionError(f"NaN particle weight at t={t}")
    m = logw.max()
    if m == -np.inf:
        raise ParticleDegeneracyError(f"all particle weights are zero at t={t}", t, logw.copy())
    w = np.exp(logw - m)
    return w / w.sum()


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def _check_csmc_args(P, threshold):
    if P < 2:
        raise ConfigurationError("need at least 2 particles")
    if not 0.0 <= threshold <= 1.0:
        raise ConfigurationError("resampling threshold must lie in [0, 1]")


def csmc_sweep(model: ModelSpec, y, theta, reference, P: int, threshold: float = 0.5,
               ancestor_sampling: bool = False, rng: Optional[np.random.Generator] = None,
               return_system: bool = False):
    """One conditional SMC sweep; returns a trajectory drawn from the final weights.

    Parameters
    ----------
    reference : array
        Current trajectory, kept in particle slot ``P - 1``.
    threshold : float
        Resample when ``ESS / P < threshold`` (1 resamples every step, 0 never).
    ancestor_sampling : bool
        Redraw the reference's ancestor at resampling steps (PGAS).
    return_system : bool
        Also return the :class:`ParticleSystem`.
    """
    _check_csmc_args(P, threshold)
    if model.sample_initial is None or model.sample_transition is None:
        raise ConfigurationError("model has no simulators for bootstrap proposals")
    y = np.asarray(y)
    ref = np.asarray(reference, dtype=float)
    T = len(y)
    if ref.shape != (T,):
        raise ConfigurationError("reference length does not match the observations")
    X = np.empty((T, P))
    A = np.empty((T, P), dtype=np.intp)
    W = np.empty((T, P))
    res = np.zeros(T, dtype=bool)
    A[0] = np.arange(P)
    X[0, :-1] = model.sample_initial(theta, P - 1, rng)
    X[0, -1] = ref[0]
    logw = np.asarray(model.log_observation(y[0], X[0], theta, 0), dtype=float)
    W[0] = w = _normalized(logw, 0)
    for t in range(1, T):
        ess = 1.0 / float(w @ w)
        if ess < threshold * P:
            a = np.empty(P, dtype=np.intp)
            a[:-1] = categorical_many(rng, w, P - 1)
            if ancestor_sampling:
                la = _log(w) + np.asarray(model.log_transition(ref[t], X[t - 1], theta, t))
                a[-1] = categorical(rng, _normalized(la, t))
            else:
                a[-1] = P - 1
            prev = np.zeros(P)
            res[t] = True
        else:
            a = np.arange(P)
            prev = _log(w)
        A[t] = a
        X[t, :-1] = model.sample_transition(X[t - 1, a[:-1]], theta, t, rng)
        X[t, -1] = ref[t]
        logw = prev + np.asarray(model.log_observation(y[t], X[t], theta, t), dtype=float)
        W[t] = w = _normalized(logw, t)
    system = ParticleSystem(X, W, A, res)
    k = categorical(rng, w)
    path = X[np.arange(T), system.lineage(k)]
    return (path, system) if return_system else path


def _run_particle_gibbs(model, y, theta_updater, P, threshold, ancestor_sampling, n_iter, rng,
                        theta_init, x_init, sink, thin):
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    y = np.asarray(y)
    T = len(y)
    x = np.array(y if x_init is None else x_init, dtype=float)
    theta = theta_init
    update = _identity_update if theta_updater is None else theta_updater
    thetas, lps, kept, kept_it = [], [], [], []
    moved = 0
    t0 = time.perf_counter()
    for m in range(1, n_iter + 1):
        theta = update(x, y, theta, rng)
        new = csmc_sweep(model, y, theta, x, P, threshold, ancestor_sampling, rng)
        moved += int(not np.array_equal(new, x))
        x = new
        tv = theta_vector(theta)
        thetas.append(tv)
        lps.append(log_joint_likelihood(model, x, y, theta) + _log_prior(update, theta))
        keep = m % thin == 0
        if keep:
            kept.append(x.copy())
            kept_it.append(m)
        if sink is not None:
            try:
                sink(m, tv, x if keep else None)
            except Exception as exc:
                raise PMPMHError(f"output sink failed at iteration {m}: {exc}") from exc
    return ChainOutput(
        param_names=tuple(model.param_names),
        state_names=tuple(f"x{t + 1}" for t in range(T)),
        theta=np.array(thetas).reshape(n_iter, -1),
        states=np.array(kept).reshape(len(kept), T),
        state_iterations=np.array(kept_it, dtype=np.int64),
        log_posterior=np.array(lps),
        accepted=np.array([moved]),
        proposed=np.array([n_iter]),
        block_labels=(f"x[1:{T}]",),
        wall_time=time.perf_counter() - t0,
    )


def run_pg(model: ModelSpec, y, theta_updater: Optional[Callable], P: int, threshold: float,
           n_iter: int, rng: np.random.Generator, theta_init, x_init=None, sink=None,
           thin: int = 1) -> ChainOutput:
    """Particle Gibbs: parameter update, then one conditional SMC sweep per iteration.

    The "acceptance" counter records iterations in which the trajectory changed.
    """
    return _run_particle_gibbs(model, y, theta_updater, P, threshold, False, n_iter, rng,
                               theta_init, x_init, sink, thin)


def run_pgas(model: ModelSpec, y, theta_updater: Optional[Callable], P: int, threshold: float,
             n_iter: int, rng: np.random.Generator, theta_init, x_init=None, sink=None,
             thin: int = 1) -> ChainOutput:
    """Particle Gibbs with ancestor sampling (see :func:`run_pg`)."""
    return _run_particle_gibbs(model, y, theta_updater, P, threshold, True, n_iter, rng,
                               theta_init, x_init, sink, thin)


BLOWFLY_MODES = ("joint", "S", "R")


def blowfly_csmc_sweep(data: BlowflyData, theta: BlowflyParams, state: BlowflyState, P: int,
                       threshold: float = 0.5, ancestor_sampling: bool = False,
                       rng: Optional[np.random.Generator] = None,
                       mode: str = "joint") -> BlowflyState:
    """Conditional SMC for the blowfly counts.

    ``mode="joint"`` moves ``(S, R)`` together; ``"S"`` moves survival counts
    with births fixed; ``"R"`` moves births with survival fixed. Particles
    carry whole paths because births depend on the population ``tau + 1``
    steps back; for the same reason ancestor sampling weights include the
    reference's next ``tau + 2`` time steps.
    """
    _check_csmc_args(P, threshold)
    if mode not in BLOWFLY_MODES:
        raise ConfigurationError(f"mode must be one of {BLOWFLY_MODES}")
    T, tau, n0 = data.n_times, data.tau, data.n0
    y, eps, e = data.y, data.eps, data.e
    surv = np.exp(-theta.delta * eps)
    ref_S, ref_R = np.asarray(state.S, dtype=float), np.asarray(state.R, dtype=float)
    S = np.tile(ref_S, (P, 1))
    R = np.tile(ref_R, (P, 1))
    move_S = mode in ("joint", "S")
    move_R = mode in ("joint", "R")
    first = 0 if move_S else tau

    def n_at(i, Sx, Rx):
        return n0 if i < 0 else Sx[:, i] + Rx[:, i]

    def birth_mean(i, Sx, Rx):
        return theta.P * _birth_scale(n_at(i - tau - 1, Sx, Rx), n0) * e[i - tau]

    def local_weight(i, Sx, Rx):
        n = Sx[:, i] + Rx[:, i]
        lw = poisson_logpmf(y[i], theta.phi * n)
        if mode == "S" and i + tau + 1 < T:
            # fixed births that depend on this population
            lw = lw + poisson_logpmf(Rx[:, i + tau + 1], birth_mean(i + tau + 1, Sx, Rx))
        if mode == "R" and i + 1 < T:
            lw = lw + binom_logpmf(Sx[:, i + 1], n, surv[i + 1])
        return lw

    def proposal_density(i, Sx, Rx):
        out = 0.0
        if move_S:
            out = out + binom_logpmf(Sx[:, i], n_at(i - 1, Sx, Rx), surv[i])
        if move_R and i >= tau:
            out = out + poisson_logpmf(Rx[:, i], birth_mean(i, Sx, Rx))
        return out

    def propagate(i, Sx, Rx):
        k = P - 1
        if move_S:
            n_prev = np.broadcast_to(n_at(i - 1, Sx, Rx), (P,))[:k]
            Sx[:k, i] = rng.binomial(n_prev.astype(np.int64), surv[i])
        if move_R and i >= tau:
            lam = np.broadcast_to(birth_mean(i, Sx, Rx), (P,))[:k]
            Rx[:k, i] = rng.poisson(lam)

    def continuation(i, Sx, Rx):
        """Log target of each particle's past joined to the reference's future,
        up to terms that do not depend on the particle."""
        hyb_S, hyb_R = Sx.copy(), Rx.copy()
        hyb_S[:, i:] = ref_S[i:]
        hyb_R[:, i:] = ref_R[i:]
        out = np.zeros(P)
        for j in range(i, min(i + tau + 2, T)):
            out += proposal_density(j, hyb_S, hyb_R) + local_weight(j, hyb_S, hyb_R)
        return out

    propagate(first, S, R)
    logw = local_weight(first, S, R)
    w = _normalized(logw, first)
    for i in range(first + 1, T):
        if 1.0 / float(w @ w) < threshold * P:
            a = np.empty(P, dtype=np.intp)
            a[:-1] = categorical_many(rng, w, P - 1)
            if ancestor_sampling:
                a[-1] = categorical(rng, _normalized(_log(w) + continuation(i, S, R), i))
            else:
                a[-1] = P - 1
            S, R = S[a], R[a]
            # the reference slot keeps its own future, whatever its ancestor
            S[-1, i:], R[-1, i:] = ref_S[i:], ref_R[i:]
            prev = np.zeros(P)
        else:
            prev = _log(w)
        propagate(i, S, R)
        logw = prev + local_weight(i, S, R)
        w = _normalized(logw, i)
    k = categorical(rng, w)
    return BlowflyState(S[k].copy(), R[k].copy(), tau)


def run_blowfly_particle_gibbs(data: BlowflyData, theta_init: BlowflyParams, P: int,
                               threshold: float, n_iter: int, rng: np.random.Generator,
                               ancestor_sampling: bool = True, mode: str = "joint",
                               state_init: Optional[BlowflyState] = None,
                               updater: Optional[BlowflyUpdater] = None, thin: int = 1,
                               sink=None) -> ChainOutput:
    """PG/PGAS for the blowfly model; ``mode="conditional"`` sweeps S then R."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    modes = ("S", "R") if mode == "conditional" else (mode,)
    updater = BlowflyUpdater() if updater is None else updater
    state = initial_state(data, theta_init) if state_init is None else state_init
    tau, T = data.tau, data.n_times
    theta = theta_init
    thetas, lps, kept, kept_it = [], [], [], []
    moved = np.zeros(len(modes), dtype=np.int64)
    t0 = time.perf_counter()
    for m in range(1, n_iter + 1):
        theta = updater(state, data, theta, rng)
        for d, md in enumerate(modes):
            new = blowfly_csmc_sweep(data, theta, state, P, threshold, ancestor_sampling, rng, md)
            moved[d] += int(not (np.array_equal(new.S, state.S)
                                 and np.array_equal(new.R, state.R)))
            state = new
        tv = theta.as_array()
        thetas.append(tv)
        lps.append(blowfly_log_likelihood(state, data, theta) + updater.log_prior(theta))
        keep = m % thin == 0
        states = np.concatenate((state.S, state.R[tau:]))
        if keep:
            kept.append(states)
            kept_it.append(m)
        if sink is not None:
            try:
                sink(m, tv, states if keep else None)
            except Exception as exc:
                raise PMPMHError(f"output sink failed at iteration {m}: {exc}") from exc
    names = tuple(f"S{i + 1}" for i in range(T)) + tuple(f"R{i + 1}" for i in range(tau, T))
    return ChainOutput(
        param_names=BlowflyParams.names,
        state_names=names,
        theta=np.array(thetas),
        states=np.array(kept).reshape(len(kept), len(names)),
        state_iterations=np.array(kept_it, dtype=np.int64),
        log_posterior=np.array(lps),
        accepted=moved,
        proposed=np.full(len(modes), n_iter),
        block_labels=tuple(f"{md}[1:{T}]" for md in modes),
        wall_time=time.perf_counter() - t0,
    )
