"""Estimator-style wrappers around the samplers.

Each estimator takes its configuration in ``__init__``, runs its chains in
``fit`` and exposes fitted results as attributes with a trailing underscore.
``predict`` returns the posterior mean of the latent states.
"""

from __future__ import annotations

import copy
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .baselines import run_blowfly_particle_gibbs, run_pg, run_pgas
from .diagnostics import summarize
from .exceptions import ConfigurationError
from .grid import (
    DataQuantileGrid,
    EqualGrid,
    GridStrategy,
    StateQuantileGrid,
    sigma_for_span,
)
from .models import registry
from .models.blowfly import BlowflyData, blowfly_grid, run_blowfly_chain
from .rng import derive_stream
from .sampler import WithinCellProposal, run_chain
from .ssm import BlockScheme


def make_gridder(approach: int, n_cells: int, span: Optional[float] = None,
                 sigma: Optional[float] = None, proportionality: Optional[float] = None,
                 q: Optional[float] = None, integer_states: bool = False,
                 clamp_lower_at_zero: bool = False) -> GridStrategy:
    """Grid strategy for Approach 1 (equal cells), 2 (data-centred) or 3 (state-centred).

    Approaches 2 and 3 take either ``sigma`` directly or a finite-cell
    ``span``; Approach 3 alternatively takes ``proportionality`` (variance
    proportional to the current state).
    """
    if approach == 1:
        if span is None:
            raise ConfigurationError("approach 1 needs a span")
        return EqualGrid(n_cells, span)
    if approach not in (2, 3):
        raise ConfigurationError(f"approach must be 1, 2 or 3, got {approach}")
    if proportionality is None and sigma is None:
        if span is None:
            raise ConfigurationError("give span, sigma or proportionality")
        sigma = sigma_for_span(span, n_cells, q)
    if approach == 2:
        if proportionality is not None:
            raise ConfigurationError("proportionality applies to approach 3 only")
        return DataQuantileGrid(n_cells, sigma, integer_states)
    return StateQuantileGrid(n_cells, sigma=sigma, proportionality=proportionality, q=q,
                             integer_states=integer_states,
                             clamp_lower_at_zero=clamp_lower_at_zero)


def _master_seed(random_state) -> int:
    if random_state is None:
        return int(np.random.SeedSequence().entropy % (2 ** 63))
    if isinstance(random_state, (int, np.integer)) and random_state >= 0:
        return int(random_state)
    raise ConfigurationError("random_state must be None or a non-negative int")


def chain_stream(seed: int, chain: int) -> np.random.Generator:
    """Generator for chain ``chain`` of a run seeded with ``seed``."""
    return derive_stream(seed, ("chain", chain))


class _ChainEstimator(BaseEstimator):
    """Shared fit/predict plumbing; subclasses pass a per-chain runner to ``_fit_chains``."""

    def _check_run_args(self):
        if self.n_iter < 1:
            raise ConfigurationError("n_iter must be >= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ConfigurationError("burn_in must lie in [0, n_iter)")
        if self.n_chains < 1:
            raise ConfigurationError("n_chains must be >= 1")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")

    def _resolve_model(self):
        entry = registry(self.model) if isinstance(self.model, str) else None
        if entry is not None and entry.spec is None:
            raise ConfigurationError(f"model {self.model!r} has its own sampler class")
        model = entry.spec if entry else self.model
        theta = self.theta_init if self.theta_init is not None else (entry and entry.theta)
        if theta is None:
            raise ConfigurationError("theta_init is required for a custom model")
        updater = self.theta_updater
        if updater == "default":
            updater = entry.updater() if entry and entry.updater else None
        return model, theta, updater

    def _fit_chains(self, y, runner):
        self._check_run_args()
        seed = _master_seed(self.random_state)
        self.chains_ = [runner(c, chain_stream(seed, c)) for c in range(self.n_chains)]
        self.seed_ = seed
        self.summary_ = summarize(self.chains_, self.burn_in)
        kept = [o.states[o.state_iterations > self.burn_in] for o in self.chains_]
        self.state_mean_ = np.concatenate(kept).mean(axis=0)
        self.theta_mean_ = np.concatenate([o.theta[self.burn_in:] for o in self.chains_]).mean(0)
        self.acceptance_rates_ = np.array([o.acceptance_rates for o in self.chains_])
        self.n_times_ = len(y)
        return self

    def predict(self, X=None):
        """Posterior mean of each latent state (``X`` is ignored)."""
        check_is_fitted(self, "state_mean_")
        return self.state_mean_.copy()


class PMPMHSampler(_ChainEstimator):
    """Discretized-HMM block Metropolis-Hastings sampler.

    Parameters
    ----------
    model : str or ModelSpec
        Registered model name (``"gaussian-mixture-1"``, ``"gaussian-mixture-2"``,
        ``"linear-gaussian"``) or a custom :class:`ModelSpec`.
    theta_init : parameter object, optional
        Starting parameters; registered models default to their preset.
    theta_updater : callable, "default" or None
        ``None`` keeps the parameters fixed.
    approach : {1, 2, 3}
    n_cells, span, sigma, proportionality, q
        Grid settings, see :func:`make_gridder`.
    block_size, overlap : int
    tail_variance, tail_poisson_mean : float
        Within-cell proposal for unbounded cells.
    n_iter, burn_in, n_chains, thin : int
    random_state : int or None
    """

    def __init__(self, model="gaussian-mixture-1", theta_init=None, theta_updater="default",
                 approach=3, n_cells=10, span=3.0, sigma=None, proportionality=None, q=None,
                 block_size=4, overlap=1, tail_variance=5.0, tail_poisson_mean=2.0,
                 n_iter=1000, burn_in=0, n_chains=1, thin=10, x_init=None,
                 exact_reverse=True, random_state=None):
        self.model = model
        self.theta_init = theta_init
        self.theta_updater = theta_updater
        self.approach = approach
        self.n_cells = n_cells
        self.span = span
        self.sigma = sigma
        self.proportionality = proportionality
        self.q = q
        self.block_size = block_size
        self.overlap = overlap
        self.tail_variance = tail_variance
        self.tail_poisson_mean = tail_poisson_mean
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.n_chains = n_chains
        self.thin = thin
        self.x_init = x_init
        self.exact_reverse = exact_reverse
        self.random_state = random_state

    def fit(self, y, x=None):
        """Run the chains on the observation series ``y``."""
        y = check_array(y, ensure_2d=False, dtype=float).ravel()
        model, theta, updater_src = self._resolve_model()
        proposal = WithinCellProposal(self.tail_variance, self.tail_poisson_mean)
        blocks = BlockScheme(len(y), self.block_size, self.overlap)
        x_init = self.x_init if x is None else x

        def runner(c, rng):
            # updaters keep acceptance counters, so each chain gets its own copy
            updater = _fresh(updater_src)
            gridder = make_gridder(self.approach, self.n_cells, self.span, self.sigma,
                                   self.proportionality, self.q)
            th = theta[c] if isinstance(theta, (list, tuple)) else theta
            return run_chain(model, y, updater, gridder, proposal, blocks, self.n_iter, rng,
                             th, x_init, thin=self.thin, exact_reverse=self.exact_reverse)

        return self._fit_chains(y, runner)


class PGASSampler(_ChainEstimator):
    """Particle Gibbs with ancestor sampling and bootstrap proposals.

    Parameters
    ----------
    n_particles : int
    threshold : float
        Resample when the weight ESS falls below ``threshold * n_particles``.
    """

    ancestor_sampling = True

    def __init__(self, model="gaussian-mixture-1", theta_init=None, theta_updater="default",
                 n_particles=25, threshold=0.5, n_iter=1000, burn_in=0, n_chains=1, thin=10,
                 x_init=None, random_state=None):
        self.model = model
        self.theta_init = theta_init
        self.theta_updater = theta_updater
        self.n_particles = n_particles
        self.threshold = threshold
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.n_chains = n_chains
        self.thin = thin
        self.x_init = x_init
        self.random_state = random_state

    def fit(self, y, x=None):
        y = check_array(y, ensure_2d=False, dtype=float).ravel()
        model, theta, updater_src = self._resolve_model()
        run = run_pgas if self.ancestor_sampling else run_pg
        x_init = self.x_init if x is None else x

        def runner(c, rng):
            th = theta[c] if isinstance(theta, (list, tuple)) else theta
            return run(model, y, _fresh(updater_src), self.n_particles, self.threshold,
                       self.n_iter, rng, th, x_init, thin=self.thin)

        return self._fit_chains(y, runner)


class PGSampler(PGASSampler):
    """Particle Gibbs without ancestor sampling."""

    ancestor_sampling = False


class BlowflySampler(_ChainEstimator):
    """Samplers for the blowfly model: PMPMH over S then R, or PG/PGAS.

    Parameters
    ----------
    method : {"pmpmh", "pgas", "pg"}
    mode : {"conditional", "joint"}
        Particle methods only: move ``(S, R)`` together or one process at a time.
    """

    def __init__(self, method="pmpmh", theta_init=None, n_cells=20, proportionality=0.25,
                 q=0.01, block_size=4, overlap=1, tail_poisson_mean=2.0, n_particles=100,
                 threshold=0.5, mode="conditional", n_iter=1000, burn_in=0, n_chains=1,
                 thin=10, random_state=None):
        self.method = method
        self.theta_init = theta_init
        self.n_cells = n_cells
        self.proportionality = proportionality
        self.q = q
        self.block_size = block_size
        self.overlap = overlap
        self.tail_poisson_mean = tail_poisson_mean
        self.n_particles = n_particles
        self.threshold = threshold
        self.mode = mode
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.n_chains = n_chains
        self.thin = thin
        self.random_state = random_state

    def fit(self, data: BlowflyData):
        if not isinstance(data, BlowflyData):
            raise ConfigurationError("BlowflySampler.fit expects BlowflyData")
        if self.method not in ("pmpmh", "pgas", "pg"):
            raise ConfigurationError(f"unknown method {self.method!r}")
        entry = registry("blowfly")
        theta = entry.theta if self.theta_init is None else self.theta_init

        def runner(c, rng):
            th = theta[c] if isinstance(theta, (list, tuple)) else theta
            if self.method == "pmpmh":
                gridder = blowfly_grid(self.n_cells, self.proportionality, self.q)
                proposal = WithinCellProposal(tail_poisson_mean=self.tail_poisson_mean)
                return run_blowfly_chain(data, th, self.n_iter, rng, gridder, proposal,
                                         self.block_size, self.overlap, thin=self.thin)
            return run_blowfly_particle_gibbs(data, th, self.n_particles, self.threshold,
                                              self.n_iter, rng, self.method == "pgas",
                                              self.mode, thin=self.thin)

        return self._fit_chains(data.y, runner)


def _fresh(updater):
    """A fresh copy of a stateful updater (``updater`` itself when stateless)."""
    if updater is None or not hasattr(updater, "accepted"):
        return updater
    new = copy.deepcopy(updater)
    new.accepted = np.zeros_like(new.accepted)
    new.proposed = np.zeros_like(new.proposed)
    return new
