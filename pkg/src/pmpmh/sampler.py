"""Point mass proposal Metropolis-Hastings updates for latent states.

One block update:

1. build a grid over the block and its two neighbours, and the grid-cell
   HMM conditioned on the neighbours' cells;
2. forward filter and backward sample a cell path;
3. draw a continuous state inside each sampled cell;
4. accept or reject with the Metropolis-Hastings ratio, where the proposal
   density is the path probability times the within-cell densities.

For grids that are built around the current state, the reverse proposal
density is evaluated on the grid rebuilt around the proposed block, which
keeps the kernel reversible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .exceptions import (
    DegenerateApproximationError,
    DegenerateGridError,
    FilteringDegeneracyError,
    ModelDefinitionError,
    PMPMHError,
)
from .ffbs import backward_sample, forward_filter, path_log_probability
from .grid import Grid, GridStrategy, locate_cell, locate_path
from .hmm import PROBABILITY_FLOOR, DiscreteHmm, build_discrete_hmm
from .ssm import BlockScheme, ModelSpec, log_block_conditional, log_joint_likelihood, theta_vector

_LOG2 = math.log(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_PROPOSAL_FAILURES = (DegenerateApproximationError, DegenerateGridError, FilteringDegeneracyError)


@dataclass(frozen=True)
class WithinCellProposal:
    """Distribution of a state given its grid cell.

    Bounded cells are sampled uniformly (over the contained integers for
    count states). Unbounded continuous cells use a Gaussian with mean at
    the finite boundary and variance ``tail_variance``, truncated to the
    cell. Unbounded count cells use a Poisson(``tail_poisson_mean``) offset
    so that its support starts one past the boundary (upper cell) or at the
    boundary going down (lower cell).
    """

    tail_variance: float = 5.0
    tail_poisson_mean: float = 2.0

    def sample(self, grid: Grid, t: int, n: int, rng: np.random.Generator) -> float:
        lo, hi = grid.cell_bounds(t, n)
        if grid.integer:
            if math.isinf(hi):
                return lo + 1.0 + rng.poisson(self.tail_poisson_mean)
            if math.isinf(lo):
                return hi - rng.poisson(self.tail_poisson_mean)
            first = lo if n == 0 else lo + 1.0
            return first + math.floor(rng.random() * (hi - first + 1.0))
        if math.isinf(hi):
            return lo + abs(rng.normal()) * math.sqrt(self.tail_variance)
        if math.isinf(lo):
            return hi - abs(rng.normal()) * math.sqrt(self.tail_variance)
        while True:
            v = hi - (hi - lo) * rng.random()
            if v > lo or n == 0:
                return v

    def log_density(self, grid: Grid, t: int, n: int, x: float) -> float:
        lo, hi = grid.cell_bounds(t, n)
        if grid.integer:
            lam = self.tail_poisson_mean
            if math.isinf(hi):
                k = x - lo - 1.0
                return k * math.log(lam) - lam - math.lgamma(k + 1.0)
            if math.isinf(lo):
                k = hi - x
                return k * math.log(lam) - lam - math.lgamma(k + 1.0)
            first = lo if n == 0 else lo + 1.0
            return -math.log(hi - first + 1.0)
        if math.isinf(hi) or math.isinf(lo):
            d = (x - lo) if math.isinf(hi) else (hi - x)
            v = self.tail_variance
            return _LOG2 - _HALF_LOG_2PI - 0.5 * math.log(v) - 0.5 * d * d / v
        return -math.log(hi - lo)

    def sample_block(self, grid: Grid, start: int, cells, rng) -> np.ndarray:
        """Draw one state in each of ``cells`` at times ``start, start + 1, ...``."""
        cells = np.asarray(cells, dtype=np.intp)
        L = len(cells)
        if grid.dense:
            _check_cells(grid, cells)
            u = rng.random(L)
            z = rng.standard_normal(L)
            k = rng.poisson(self.tail_poisson_mean, L).astype(float)
            return _kernels.within_sample(grid.dense_cuts(start, start + L), grid.lower,
                                          grid.upper, grid.integer, cells, u, z, k,
                                          math.sqrt(self.tail_variance))
        lo, hi = _block_bounds(grid, start, cells)
        up, down = np.isinf(hi), np.isinf(lo)
        u = rng.random(L)
        if grid.integer:
            k = rng.poisson(self.tail_poisson_mean, L)
            first = np.where(cells == 0, lo, lo + 1.0)
            with np.errstate(invalid="ignore"):
                v = first + np.floor(u * (hi - first + 1.0))
            v = np.where(up, lo + 1.0 + k, v)
            return np.where(down, hi - k, v)
        z = np.abs(rng.standard_normal(L)) * math.sqrt(self.tail_variance)
        with np.errstate(invalid="ignore"):
            v = hi - (hi - lo) * u
            v = np.where((v > lo) | (cells == 0), v, hi)
        v = np.where(up, lo + z, v)
        return np.where(down, hi - z, v)

    def log_density_block(self, grid: Grid, start: int, cells, xs) -> float:
        """Sum of within-cell log densities of ``xs`` given ``cells``."""
        cells = np.asarray(cells, dtype=np.intp)
        xs = np.asarray(xs, dtype=float)
        if grid.dense:
            _check_cells(grid, cells)
            return float(_kernels.within_log_density(
                grid.dense_cuts(start, start + len(cells)), grid.lower, grid.upper, grid.integer,
                cells, xs, self.tail_variance, self.tail_poisson_mean))
        lo, hi = _block_bounds(grid, start, cells)
        up, down = np.isinf(hi), np.isinf(lo)
        with np.errstate(invalid="ignore", divide="ignore"):
            if grid.integer:
                lam = self.tail_poisson_mean
                k = np.where(up, xs - lo - 1.0, hi - xs)
                tail = k * math.log(lam) - lam - gammaln(k + 1.0)
                first = np.where(cells == 0, lo, lo + 1.0)
                inner = -np.log(hi - first + 1.0)
            else:
                d = np.where(up, xs - lo, hi - xs)
                v = self.tail_variance
                tail = _LOG2 - _HALF_LOG_2PI - 0.5 * math.log(v) - 0.5 * d * d / v
                inner = -np.log(hi - lo)
        return float(np.where(up | down, tail, inner).sum())


def _check_cells(grid: Grid, cells: np.ndarray):
    if len(cells) and (cells.min() < 0 or cells.max() >= grid.cells_at(grid.start)):
        raise IndexError("cell index out of range")


def _block_bounds(grid: Grid, start: int, cells: np.ndarray):
    """Lower and upper bounds of ``cells[i]`` at time ``start + i``."""
    if grid.dense:
        C = grid.dense_cuts(start, start + len(cells))
        K = C.shape[1]
        if np.any((cells < 0) | (cells > K)):
            raise IndexError("cell index out of range")
        rows = np.arange(len(cells))
        lo = np.where(cells == 0, grid.lower, C[rows, np.maximum(cells - 1, 0)])
        hi = np.where(cells == K, grid.upper, C[rows, np.minimum(cells, K - 1)])
        return lo, hi
    bounds = np.array([grid.cell_bounds(start + i, int(n)) for i, n in enumerate(cells)],
                      dtype=float).reshape(len(cells), 2)
    return bounds[:, 0], bounds[:, 1]


def within_cell_sample(proposal: WithinCellProposal, grid: Grid, t: int, n: int,
                       rng: np.random.Generator) -> float:
    """Draw one state inside cell ``n`` of ``grid`` at time ``t``."""
    return proposal.sample(grid, t, n, rng)


def proposal_log_density(hmm: DiscreteHmm, grid: Grid, proposal: WithinCellProposal, x_block,
                         start: Optional[int] = None, left_cell: Optional[int] = None,
                         right_cell: Optional[int] = None, filtered=None) -> float:
    """Log density of a proposed block: cell-path probability times within-cell densities."""
    start = hmm.start if start is None else start
    x_block = np.asarray(x_block, dtype=float)
    cells = locate_path(grid, start, x_block)
    return (path_log_probability(hmm, cells, left_cell, right_cell, filtered)
            + proposal.log_density_block(grid, start, cells, x_block))


def _boundary_cells(grid: Grid, left, right, start, stop):
    lc = None if left is None else locate_cell(grid, start - 1, left)
    rc = None if right is None else locate_cell(grid, stop, right)
    return lc, rc


def acceptance_log_ratio(model: ModelSpec, hmm: DiscreteHmm, grid: Grid,
                         proposal: WithinCellProposal, x_current, x_proposed, y_block, theta,
                         left=None, right=None, reverse_hmm: Optional[DiscreteHmm] = None,
                         reverse_grid: Optional[Grid] = None) -> float:
    """Log Metropolis-Hastings ratio for replacing ``x_current`` by ``x_proposed``.

    ``hmm`` and ``grid`` define the forward proposal ``q(x' | x)``. The
    reverse density ``q(x | x')`` uses ``reverse_hmm``/``reverse_grid`` when
    given (grids centred on the state), else the same ones. ``left`` and
    ``right`` are the neighbouring states, ``None`` at the series ends.
    """
    start, stop = hmm.start, hmm.stop
    x_current = np.asarray(x_current, dtype=float)
    x_proposed = np.asarray(x_proposed, dtype=float)
    rhmm = hmm if reverse_hmm is None else reverse_hmm
    rgrid = grid if reverse_grid is None else reverse_grid
    lc, rc = _boundary_cells(grid, left, right, start, stop)
    log_q_fwd = proposal_log_density(hmm, grid, proposal, x_proposed, start, lc, rc)
    log_q_rev = proposal_log_density(rhmm, rgrid, proposal, x_current, start, lc, rc)
    log_p_new = log_block_conditional(model, x_proposed, left, right, y_block, theta, start)
    log_p_old = log_block_conditional(model, x_current, left, right, y_block, theta, start)
    return _combine(log_p_new, log_p_old, log_q_rev, log_q_fwd)


def _combine(log_p_new, log_p_old, log_q_rev, log_q_fwd):
    if any(math.isnan(v) for v in (log_p_new, log_p_old, log_q_rev, log_q_fwd)):
        raise ModelDefinitionError("NaN in acceptance ratio terms")
    if log_p_old == -math.inf:
        # escaping a zero-density state: accept any supported proposal
        return math.inf if log_p_new > -math.inf else -math.inf
    ratio = (log_p_new - log_p_old) + (log_q_rev - log_q_fwd)
    if math.isnan(ratio):
        raise ModelDefinitionError("acceptance ratio is NaN")
    return ratio


@dataclass
class ChainState:
    """Current position of a chain plus per-block acceptance counts."""

    x: np.ndarray
    theta: object
    iteration: int = 0
    accepted: np.ndarray = None
    proposed: np.ndarray = None

    def ensure_counters(self, n_blocks: int):
        if self.accepted is None or len(self.accepted) != n_blocks:
            self.accepted = np.zeros(n_blocks, dtype=np.int64)
            self.proposed = np.zeros(n_blocks, dtype=np.int64)


class HmmCache:
    """Reuse a whole-series grid and HMM while the parameters stay unchanged.

    Only valid for grid strategies that do not look at the current state.
    """

    def __init__(self):
        self._key = None
        self._value = None

    def get(self, model, gridder, y, x, theta, floor):
        key = theta_vector(theta)
        if self._key is not None and np.array_equal(self._key, key):
            return self._value
        grid = gridder.build(y, x, theta, 0, len(y))
        hmm = build_discrete_hmm(model, grid, theta, y, None, floor)
        self._key, self._value = key.copy(), (grid, hmm)
        return self._value


def pmpmh_block_update(model: ModelSpec, y, x: np.ndarray, theta, start: int, stop: int,
                       gridder: GridStrategy, proposal: WithinCellProposal,
                       rng: np.random.Generator, exact_reverse: bool = True,
                       cached: Optional[tuple] = None,
                       floor: Optional[float] = PROBABILITY_FLOOR) -> bool:
    """Propose and accept/reject states ``x[start:stop]`` in place.

    Returns True when the proposal was accepted. Failures to build a valid
    proposal (degenerate grid or HMM) count as rejections.
    """
    T = len(x)
    left = x[start - 1] if start > 0 else None
    right = x[stop] if stop < T else None
    y_block = y[start:stop]
    try:
        if cached is not None:
            grid, full = cached
            hmm = full.block(start, stop)
        else:
            grid = gridder.build(y, x, theta, max(0, start - 1), min(T, stop + 1))
            hmm = build_discrete_hmm(model, grid, theta, y, (start, stop), floor)
        lc, rc = _boundary_cells(grid, left, right, start, stop)
        filt = forward_filter(hmm, lc)
    except _PROPOSAL_FAILURES:
        return False
    cells = backward_sample(hmm, filt, rc, rng)
    x_new = proposal.sample_block(grid, start, cells, rng)
    log_q_fwd = (path_log_probability(hmm, cells, lc, rc, filt)
                 + proposal.log_density_block(grid, start, cells, x_new))

    x_old = x[start:stop]
    if gridder.depends_on_state and exact_reverse and cached is None:
        x_prop_full = x.copy()
        x_prop_full[start:stop] = x_new
        try:
            rgrid = gridder.build(y, x_prop_full, theta, max(0, start - 1), min(T, stop + 1))
            rhmm = build_discrete_hmm(model, rgrid, theta, y, (start, stop), floor)
            rfilt = forward_filter(rhmm, lc)
        except _PROPOSAL_FAILURES:
            return False
    else:
        rgrid, rhmm, rfilt = grid, hmm, filt
    log_q_rev = proposal_log_density(rhmm, rgrid, proposal, x_old, start, lc, rc, rfilt)

    log_p_new = log_block_conditional(model, x_new, left, right, y_block, theta, start)
    log_p_old = log_block_conditional(model, x_old, left, right, y_block, theta, start)
    ratio = _combine(log_p_new, log_p_old, log_q_rev, log_q_fwd)
    if ratio >= 0 or math.log(rng.random()) < ratio:
        x[start:stop] = x_new
        return True
    return False


def update_states_sweep(state: ChainState, model: ModelSpec, gridder: GridStrategy,
                        proposal: WithinCellProposal, blocks: BlockScheme, y,
                        rng: np.random.Generator, exact_reverse: bool = True,
                        cache: Optional[HmmCache] = None,
                        floor: Optional[float] = PROBABILITY_FLOOR) -> ChainState:
    """Update every block of ``state.x`` once, left to right.

    An overlapping state is proposed in the earlier block and then serves as
    the (updated) left neighbour of the next block.
    """
    state.ensure_counters(len(blocks))
    cached = None
    if not gridder.depends_on_state:
        cache = cache if cache is not None else HmmCache()
        try:
            cached = cache.get(model, gridder, y, state.x, state.theta, floor)
        except _PROPOSAL_FAILURES:
            state.proposed += 1
            return state
    for d, (start, stop) in enumerate(blocks):
        state.proposed[d] += 1
        if pmpmh_block_update(model, y, state.x, state.theta, start, stop, gridder, proposal,
                              rng, exact_reverse, cached, floor):
            state.accepted[d] += 1
    return state


@dataclass
class ChainOutput:
    """Samples and bookkeeping from one chain.

    ``theta`` has one row per iteration. ``states`` holds the retained
    (possibly thinned) state vectors, with ``state_iterations`` giving their
    iteration numbers (1-based).
    """

    param_names: Sequence[str]
    state_names: Sequence[str]
    theta: np.ndarray
    states: np.ndarray
    state_iterations: np.ndarray
    log_posterior: np.ndarray
    accepted: np.ndarray
    proposed: np.ndarray
    block_labels: Sequence[str] = ()
    wall_time: float = 0.0

    @property
    def n_iter(self) -> int:
        return len(self.theta)

    @property
    def acceptance_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.accepted / np.maximum(self.proposed, 1)


def _identity_update(x, y, theta, rng):
    return theta


def _log_prior(theta_updater, theta):
    fn = getattr(theta_updater, "log_prior", None)
    return 0.0 if fn is None else float(fn(theta))


def run_chain(model: ModelSpec, y, theta_updater: Optional[Callable], gridder: GridStrategy,
              proposal: WithinCellProposal, blocks: BlockScheme, n_iter: int,
              rng: np.random.Generator, theta_init, x_init=None, sink: Optional[Callable] = None,
              thin: int = 1, exact_reverse: bool = True,
              floor: Optional[float] = PROBABILITY_FLOOR) -> ChainOutput:
    """Metropolis-within-Gibbs: parameter update, then one PMPMH state sweep.

    Parameters
    ----------
    theta_updater : callable ``(x, y, theta, rng) -> theta`` or None
        Draw from (or MH-step towards) ``p(theta | x, y)``. ``None`` keeps
        the parameters fixed. An optional ``log_prior`` attribute is used
        for the recorded log posterior.
    x_init : array, optional
        Initial states; defaults to the observations.
    sink : callable ``(iteration, theta_vec, states_or_None)``, optional
        Streaming consumer, called once per iteration.
    thin : int
        Keep every ``thin``-th state vector (parameters are never thinned).
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    y = np.asarray(y)
    x0 = np.array(y if x_init is None else x_init, dtype=float)
    state = ChainState(x=x0, theta=theta_init)
    state.ensure_counters(len(blocks))
    update = _identity_update if theta_updater is None else theta_updater
    cache = HmmCache()
    T = len(y)
    thetas, lps, kept, kept_it = [], [], [], []
    t0 = time.perf_counter()
    for m in range(1, n_iter + 1):
        state.theta = update(state.x, y, state.theta, rng)
        update_states_sweep(state, model, gridder, proposal, blocks, y, rng, exact_reverse,
                            cache, floor)
        state.iteration = m
        tv = theta_vector(state.theta)
        lp = log_joint_likelihood(model, state.x, y, state.theta) + _log_prior(update, state.theta)
        thetas.append(tv)
        lps.append(lp)
        keep = m % thin == 0
        if keep:
            kept.append(state.x.copy())
            kept_it.append(m)
        if sink is not None:
            try:
                sink(m, tv, state.x if keep else None)
            except Exception as exc:
                raise PMPMHError(f"output sink failed at iteration {m}: {exc}") from exc
    wall = time.perf_counter() - t0
    return ChainOutput(
        param_names=tuple(model.param_names),
        state_names=tuple(f"x{t + 1}" for t in range(T)),
        theta=np.array(thetas).reshape(n_iter, -1),
        states=np.array(kept).reshape(len(kept), T),
        state_iterations=np.array(kept_it, dtype=np.int64),
        log_posterior=np.array(lps),
        accepted=state.accepted.copy(),
        proposed=state.proposed.copy(),
        block_labels=tuple(f"x[{a + 1}:{b}]" for a, b in blocks),
        wall_time=wall,
    )
