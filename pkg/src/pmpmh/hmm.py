"""Discrete HMM approximation of a state-space model on a grid.

Each HMM quantity is approximated with one midpoint node per cell::

    P(B_1 = n)            ~ L_1(n) p(xi_1(n))
    P(B_t = n | B_t-1 = k) ~ L_t(n) L_t-1(k) p(xi_t(n) | xi_t-1(k))
    p(y_t | B_t = n)      ~ L_t(n) p(y_t | xi_t(n))

Initial and transition probabilities are normalized, floored at 0.01 and
renormalized so the proposal chain never becomes near-reducible. Emission
weights stay unnormalized likelihood weights (floored only to stay
positive).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DegenerateApproximationError, ModelDefinitionError
from .grid import Grid

PROBABILITY_FLOOR = 0.01
EMISSION_FLOOR = 1e-300
_LOG_EMISSION_FLOOR = np.log(EMISSION_FLOOR)


def floor_and_normalize(weights, floor: Optional[float] = PROBABILITY_FLOOR, axis: int = -1):
    """Normalize non-negative weights, raise entries below ``floor``, renormalize.

    Works along ``axis`` so a whole stack of transition rows can be handled
    at once. ``floor=None`` (or 0) only normalizes.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or np.isnan(w).any():
        raise ValueError("weights must be non-negative")
    total = w.sum(axis=axis, keepdims=True)
    if np.any(~(total > 0)):
        raise DegenerateApproximationError("all weights are zero")
    p = w / total
    if floor:
        p = np.maximum(p, floor)
        p = p / p.sum(axis=axis, keepdims=True)
    return p


def _normalize_log_weights(logw, floor, what, allow_dead_rows=False):
    """Exponentiate, normalize and floor log weights along the last axis.

    With ``allow_dead_rows`` (used for transition rows under a positive
    floor), a row whose weights are all zero becomes uniform, which is what
    flooring every entry at the same value gives.
    """
    logw = np.asarray(logw, dtype=float)
    m = logw.max(axis=-1, keepdims=True)
    if not np.isfinite(m).all():
        # max propagates NaN, so one check on the row maxima covers both cases
        if np.isnan(m).any():
            raise ModelDefinitionError(f"{what} density returned NaN")
        if np.any(m == np.inf) or not (allow_dead_rows and floor):
            raise DegenerateApproximationError(f"all {what} weights are zero")
        dead = m == -np.inf
        logw = np.where(dead, 0.0, logw)
        m = np.where(dead, 0.0, m)
    p = np.exp(logw - m)
    p /= p.sum(axis=-1, keepdims=True)
    if floor:
        np.maximum(p, floor, out=p)
        p /= p.sum(axis=-1, keepdims=True)
    return p


def _as_float_array(v):
    return np.asarray(v, dtype=float)


def approx_initial(model, grid: Grid, theta, floor: Optional[float] = PROBABILITY_FLOOR):
    """Cell probabilities at the first time index."""
    mids, lens = grid.geometry(0)
    with np.errstate(divide="ignore"):
        logw = np.log(lens) + _as_float_array(model.log_initial(mids, theta))
    return _normalize_log_weights(logw, floor, "initial")


def approx_transition_row(model, grid: Grid, theta, t: int, k: int,
                          floor: Optional[float] = PROBABILITY_FLOOR):
    """Probabilities of each cell at ``t`` given cell ``k`` at ``t - 1``.

    The from-cell length is kept in the weights as in the midpoint formula;
    it is constant along the row and drops out on normalization.
    """
    mids, lens = grid.geometry(t)
    pmids, plens = grid.geometry(t - 1)
    with np.errstate(divide="ignore"):
        logw = (np.log(lens) + np.log(plens[k])
                + _as_float_array(model.log_transition(mids, pmids[k], theta, t)))
    return _normalize_log_weights(logw, floor, "transition", allow_dead_rows=True)


def approx_transition_matrix(model, grid: Grid, theta, t: int,
                             floor: Optional[float] = PROBABILITY_FLOOR):
    """Row-stochastic matrix from the cells at ``t - 1`` (rows) to ``t`` (columns)."""
    return _transition_stack(model, grid, theta, [t], floor)[0]


def approx_log_emission(model, grid: Grid, theta, t: int, y_t):
    """Log emission weights ``log(L_t(n) p(y_t | xi_t(n)))`` floored at log(1e-300)."""
    mids, lens = grid.geometry(t)
    with np.errstate(divide="ignore"):
        logw = np.log(lens) + _as_float_array(model.log_observation(y_t, mids, theta, t))
    if np.isnan(logw).any():
        raise ModelDefinitionError("observation density returned NaN")
    if np.all(logw == -np.inf):
        raise DegenerateApproximationError(f"all emission weights are zero at t={t}")
    return np.maximum(logw, _LOG_EMISSION_FLOOR)


def approx_emission(model, grid: Grid, theta, t: int, y_t):
    """Emission weights over cells (not normalized over cells)."""
    return np.exp(approx_log_emission(model, grid, theta, t, y_t))


def _dense_rows(grid: Grid, t0: int, t1: int):
    """Stacked ``(mids, lens)`` for times ``t0 .. t1 - 1`` or None if counts vary."""
    if grid.dense:
        grid.dense_cuts(t0, t1)
        mids, lens = grid.dense_geometry
        return mids[t0 - grid.start:t1 - grid.start], lens[t0 - grid.start:t1 - grid.start]
    geo = [grid.geometry(t) for t in range(t0, t1)]
    if len({len(g[0]) for g in geo}) > 1:
        return None
    return np.stack([g[0] for g in geo]), np.stack([g[1] for g in geo])


def _log_emission_stack(model, grid: Grid, theta, y, start, stop):
    rows = _dense_rows(grid, start, stop)
    if rows is None:
        return tuple(approx_log_emission(model, grid, theta, t, y[t]) for t in range(start, stop))
    mids, lens = rows
    yy = np.asarray(y)[start:stop]
    tt = np.arange(start, stop)[:, None]
    with np.errstate(divide="ignore"):
        logw = np.log(lens) + _as_float_array(model.log_observation(yy[:, None], mids, theta, tt))
    if np.isnan(logw).any():
        raise ModelDefinitionError("observation density returned NaN")
    dead = np.all(logw == -np.inf, axis=1)
    if dead.any():
        raise DegenerateApproximationError(
            f"all emission weights are zero at t={start + int(np.argmax(dead))}")
    return np.maximum(logw, _LOG_EMISSION_FLOOR)


def _transition_stack(model, grid: Grid, theta, times, floor):
    """Transition matrices into each time in ``times``.

    Returns a 3-D array when every time has the same cell count, else a list.
    """
    times = list(times)
    if not times:
        return []
    contiguous = all(b == a + 1 for a, b in zip(times, times[1:]))
    rows = _dense_rows(grid, times[0] - 1, times[-1] + 1) if contiguous else None
    if rows is not None:
        mids, lens = rows
        loglens = np.log(lens)
        tt = np.asarray(times)[:, None, None]
        with np.errstate(divide="ignore"):
            logw = (_as_float_array(model.log_transition(mids[1:, None, :], mids[:-1, :, None],
                                                         theta, tt))
                    + loglens[1:, None, :] + loglens[:-1, :, None])
        return _normalize_log_weights(logw, floor, "transition", allow_dead_rows=True)
    out = []
    for t in times:
        mids, lens = grid.geometry(t)
        pmids, plens = grid.geometry(t - 1)
        with np.errstate(divide="ignore"):
            logw = (_as_float_array(model.log_transition(mids[None, :], pmids[:, None], theta, t))
                    + np.log(lens)[None, :] + np.log(plens)[:, None])
        out.append(_normalize_log_weights(logw, floor, "transition", allow_dead_rows=True))
    return out


@dataclass(frozen=True, eq=False)
class DiscreteHmm:
    """Grid-cell HMM over times ``start, ..., stop - 1``.

    Attributes
    ----------
    initial : array or None
        Cell probabilities at ``start``; present only when ``start == 0``.
    entry : array or None
        Transition matrix from ``start - 1`` into ``start`` (block updates
        conditioned on a preceding cell).
    transitions : tuple of arrays or 3-D array
        ``transitions[i]`` is the matrix into time ``start + 1 + i``;
        row = from-cell, column = to-cell. Stored as one array when every
        time has the same number of cells.
    exit : array or None
        Transition matrix from ``stop - 1`` into ``stop`` (conditioning on a
        following cell).
    log_emissions : tuple of arrays or 2-D array
        Log emission weights per time.
    """

    start: int
    stop: int
    initial: Optional[np.ndarray]
    entry: Optional[np.ndarray]
    transitions: tuple
    exit: Optional[np.ndarray]
    log_emissions: tuple

    @property
    def n_times(self) -> int:
        return self.stop - self.start

    @property
    def dense(self) -> bool:
        """Arrays rather than per-time tuples (equal cell counts throughout)."""
        return isinstance(self.log_emissions, np.ndarray) and (
            self.n_times == 1 or isinstance(self.transitions, np.ndarray))

    @property
    def emissions(self):
        return tuple(np.exp(e) for e in self.log_emissions)

    def n_cells(self, t: int) -> int:
        return len(self.log_emissions[t - self.start])

    def block(self, start: int, stop: int) -> "DiscreteHmm":
        """Restrict a wider HMM to ``[start, stop)``, turning the adjacent
        transitions into entry/exit matrices."""
        if not self.start <= start < stop <= self.stop:
            raise IndexError(f"block [{start}, {stop}) outside [{self.start}, {self.stop})")
        if start == self.start:
            initial, entry = self.initial, self.entry
        else:
            initial, entry = None, self.transitions[start - self.start - 1]
        exit_ = self.exit if stop == self.stop else self.transitions[stop - self.start - 1]
        a = start - self.start
        return DiscreteHmm(
            start=start,
            stop=stop,
            initial=initial,
            entry=entry,
            transitions=self.transitions[a:a + stop - start - 1],
            exit=exit_,
            log_emissions=self.log_emissions[a:a + stop - start],
        )


def build_discrete_hmm(model, grid: Grid, theta, y, block=None,
                       floor: Optional[float] = PROBABILITY_FLOOR) -> DiscreteHmm:
    """Assemble the grid-cell HMM for the whole series or one block.

    Parameters
    ----------
    y : array_like
        Full observation series (indexed by absolute time).
    block : (start, stop), optional
        Restrict to ``[start, stop)``. The grid must then also cover
        ``start - 1`` when ``start > 0`` and ``stop`` when ``stop < T``, which
        yield the entry and exit matrices.
    """
    T = len(y)
    start, stop = (0, T) if block is None else block
    if not 0 <= start < stop <= T:
        raise IndexError(f"block [{start}, {stop}) outside series of length {T}")
    initial = approx_initial(model, grid, theta, floor) if start == 0 else None
    into = list(range(max(start, 1), min(stop + 1, T)))
    if grid.homogeneous and model.time_homogeneous and into:
        mat = approx_transition_matrix(model, grid, theta, into[0], floor)
        mats = np.repeat(mat[None], len(into), axis=0)
    else:
        mats = _transition_stack(model, grid, theta, into, floor)
    entry = mats[0] if start > 0 else None
    exit_ = mats[-1] if stop < T else None
    inner = mats[int(start > 0):len(mats) - int(stop < T)]
    if isinstance(inner, list):
        inner = tuple(inner)
    log_em = _log_emission_stack(model, grid, theta, y, start, stop)
    return DiscreteHmm(start=start, stop=stop, initial=initial, entry=entry,
                       transitions=inner, exit=exit_, log_emissions=log_em)
