"""Deterministic per-time partitions of the state space.

A :class:`Grid` stores, for each covered time index, an increasing vector of
finite cut points ``c_0 < ... < c_{K-1}``. Cells are indexed ``0..K`` and are
half-open ``(c_{n-1}, c_n]``; the lowest cell is closed below, so every
in-support state belongs to exactly one cell. Cells touching an unbounded
side get an artificial length (the mean interior cell length) and a midpoint
half that length beyond the adjacent cut point.

Three construction strategies are provided, mirroring the usual choices:
equal cells around the data mean, Gaussian quantiles around each
observation, and Gaussian quantiles around the current latent state.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri

from . import _kernels
from .exceptions import ConfigurationError, DegenerateGridError

SigmaLike = Union[float, Callable]


@dataclass(frozen=True, eq=False)
class Grid:
    """Cut points for time indices ``start, ..., start + len(cuts) - 1``.

    Parameters
    ----------
    cuts : sequence of 1-D arrays
        Strictly increasing finite cut points per time.
    artificial_length : array
        Length assigned to unbounded cells, per time.
    start : int
        First covered (0-based) time index.
    lower, upper : float
        Support bounds; ``-inf``/``inf`` mean the outer cell is unbounded.
    integer : bool
        Cells hold integer states; lengths count contained integers and
        midpoints are rounded to integers.
    n_cells : int
        Nominal number of cells (per-time counts may be smaller after
        duplicate cut points collapse under rounding).
    homogeneous : bool
        All times share the same cut points.
    """

    cuts: tuple
    artificial_length: np.ndarray
    start: int = 0
    lower: float = -np.inf
    upper: float = np.inf
    integer: bool = False
    n_cells: int = 0
    homogeneous: bool = False

    def __post_init__(self):
        if isinstance(self.cuts, np.ndarray) and self.cuts.ndim == 2:
            matrix = np.asarray(self.cuts, dtype=float)
            cuts = tuple(matrix)
        else:
            cuts = tuple(np.asarray(c, dtype=float) for c in self.cuts)
            sizes = {len(c) for c in cuts}
            matrix = np.vstack(cuts) if len(sizes) == 1 and cuts and len(cuts[0]) else None
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "_matrix", matrix)
        art = np.broadcast_to(np.asarray(self.artificial_length, dtype=float), (len(cuts),))
        object.__setattr__(self, "artificial_length", art)
        if not self.n_cells:
            object.__setattr__(self, "n_cells", max(len(c) for c in cuts) + 1)
        if matrix is not None:
            rows = (matrix,)
        else:
            rows = cuts
        for c in rows:
            if c.ndim == 1:
                c = c[None, :]
            if np.any(np.diff(c, axis=1) <= 0) or not np.isfinite(c).all():
                raise ConfigurationError("cut points must be finite and strictly increasing")
            if c.shape[1] == 0 and not (np.isfinite(self.lower) and np.isfinite(self.upper)):
                raise ConfigurationError("a single-cell grid needs a bounded support")
            if c.shape[1] and (c[:, 0].min() < self.lower or c[:, -1].max() > self.upper):
                raise ConfigurationError("cut points lie outside the support bounds")
        unbounded = not (np.isfinite(self.lower) and np.isfinite(self.upper))
        if unbounded and np.any(art <= 0):
            raise ConfigurationError("artificial_length must be positive")

    @classmethod
    def _from_matrix(cls, matrix: np.ndarray, artificial_length: np.ndarray, start: int,
                     n_cells: int) -> "Grid":
        """Unbounded continuous grid from a valid cut matrix, skipping validation."""
        self = object.__new__(cls)
        for name, value in (("cuts", tuple(matrix)), ("_matrix", matrix),
                            ("artificial_length", artificial_length), ("start", start),
                            ("lower", -np.inf), ("upper", np.inf), ("integer", False),
                            ("n_cells", n_cells), ("homogeneous", False)):
            object.__setattr__(self, name, value)
        return self

    @property
    def dense(self) -> bool:
        """True when every covered time has the same number of cells."""
        return self._matrix is not None

    @property
    def n_times(self) -> int:
        return len(self.cuts)

    @property
    def stop(self) -> int:
        return self.start + len(self.cuts)

    def cut_points(self, t: int) -> np.ndarray:
        return self.cuts[self._offset(t)]

    def cells_at(self, t: int) -> int:
        return len(self.cuts[self._offset(t)]) + 1

    def _offset(self, t: int) -> int:
        i = t - self.start
        if not 0 <= i < len(self.cuts):
            raise IndexError(f"time {t} outside grid range [{self.start}, {self.stop})")
        return i

    @cached_property
    def _geometry(self):
        if self._matrix is not None:
            mids, lens = self.dense_geometry
            return tuple(zip(mids, lens))
        return tuple(_geometry(c, a, self.lower, self.upper, self.integer)
                     for c, a in zip(self.cuts, self.artificial_length))

    @cached_property
    def dense_geometry(self):
        """``(midpoints, lengths)`` as ``(n_times, n_cells)`` arrays; dense grids only."""
        if self._matrix is None:
            raise ValueError("grid has varying cell counts")
        return _geometry(self._matrix, self.artificial_length, self.lower, self.upper,
                         self.integer)

    def dense_cuts(self, t0: int, t1: int) -> np.ndarray:
        """Cut-point rows for times ``t0 .. t1 - 1``; dense grids only."""
        self._offset(t0)
        self._offset(t1 - 1)
        return self._matrix[t0 - self.start:t1 - self.start]

    def geometry(self, t: int):
        """Return ``(midpoints, lengths)`` of every cell at time ``t``."""
        return self._geometry[self._offset(t)]

    def cell_bounds(self, t: int, n: int):
        """Return ``(lo, hi)`` of cell ``n``; the cell is ``(lo, hi]`` (``[lo, hi]`` for n=0)."""
        c = self.cut_points(t)
        if not 0 <= n <= len(c):
            raise IndexError(f"cell {n} out of range for {len(c) + 1} cells")
        lo = self.lower if n == 0 else c[n - 1]
        hi = self.upper if n == len(c) else c[n]
        return lo, hi


def _geometry(c, art, lower, upper, integer):
    """Midpoints and lengths for one cut vector or a matrix of cut rows."""
    c = np.asarray(c, dtype=float)
    one = c.ndim == 1
    c = np.atleast_2d(c)
    art = np.broadcast_to(np.asarray(art, dtype=float), c.shape[:1])
    R, K = c.shape
    if K == 0:
        mid = np.rint((lower + upper) / 2) if integer else (lower + upper) / 2
        length = upper - lower + (1.0 if integer else 0.0)
        mids, lens = np.full((R, 1), mid), np.full((R, 1), length)
        return (mids[0], lens[0]) if one else (mids, lens)
    mids = np.empty((R, K + 1))
    lens = np.empty((R, K + 1))
    lo, hi = c[:, :-1], c[:, 1:]
    lens[:, 1:K] = hi - lo
    if integer:
        mids[:, 1:K] = np.rint((lo + 1 + hi) / 2)
    else:
        mids[:, 1:K] = (lo + hi) / 2
    if np.isfinite(lower):
        lens[:, 0] = c[:, 0] - lower + (1 if integer else 0)
        mids[:, 0] = (lower + c[:, 0]) / 2
    else:
        lens[:, 0] = art
        mids[:, 0] = c[:, 0] - art / 2
    if np.isfinite(upper):
        lens[:, K] = upper - c[:, -1]
        mids[:, K] = (c[:, -1] + upper + (1 if integer else 0)) / 2
    else:
        lens[:, K] = art
        mids[:, K] = c[:, -1] + art / 2
    if integer:
        mids[:, 0] = np.minimum(np.rint(mids[:, 0]), c[:, 0])
        mids[:, K] = np.maximum(np.rint(mids[:, K]), c[:, -1] + 1)
    return (mids[0], lens[0]) if one else (mids, lens)


def locate_cell(grid: Grid, t: int, x) -> Union[int, np.ndarray]:
    """Index of the cell containing ``x`` at time ``t`` (0-based)."""
    idx = np.searchsorted(grid.cut_points(t), x, side="left")
    return int(idx) if np.ndim(idx) == 0 else idx


def locate_path(grid: Grid, start: int, xs) -> np.ndarray:
    """Cell indices of ``xs[i]`` at times ``start + i``."""
    xs = np.asarray(xs, dtype=float)
    if grid.dense:
        # searchsorted(side="left") counts the cut points strictly below x
        return _kernels.locate(grid.dense_cuts(start, start + len(xs)), xs)
    return np.fromiter(
        (np.searchsorted(grid.cut_points(start + i), v, side="left") for i, v in enumerate(xs)),
        dtype=np.intp,
        count=len(xs),
    )


def cell_geometry(grid: Grid, t: int, n: int):
    """Return ``(midpoint, length)`` of cell ``n`` at time ``t``."""
    mids, lens = grid.geometry(t)
    if not 0 <= n < len(mids):
        raise IndexError(f"cell {n} out of range for {len(mids)} cells")
    return float(mids[n]), float(lens[n])


def build_equal_grid(y, n_cells: int, span: float, start: int = 0) -> Grid:
    """``n_cells - 2`` equal finite cells of total width ``span`` centred on ``mean(y)``.

    The same cut points are used at every time index, and the two outer
    cells are unbounded with artificial length ``span / (n_cells - 2)``.
    """
    if n_cells < 3:
        raise ConfigurationError(f"equal grids need n_cells >= 3, got {n_cells}")
    if not span > 0:
        raise ConfigurationError("span must be positive")
    y = np.asarray(y, dtype=float)
    centre = float(np.mean(y))
    cuts = centre + span * (np.arange(n_cells - 1) / (n_cells - 2) - 0.5)
    T = len(y)
    return Grid(
        cuts=(cuts,) * (T - start),
        artificial_length=span / (n_cells - 2),
        start=start,
        n_cells=n_cells,
        homogeneous=True,
    )


def cut_probabilities(n_cells: int, q: Optional[float] = None) -> np.ndarray:
    """Cumulative probabilities of the ``n_cells - 1`` cut points.

    With ``q=None`` the cells are equally probable (``i / n_cells``). With a
    tail probability ``q`` the finite cells lie between the ``q`` and
    ``1 - q`` quantiles, split into ``n_cells - 2`` equally probable parts.
    """
    if n_cells < 3:
        raise ConfigurationError(f"quantile grids need n_cells >= 3, got {n_cells}")
    if q is None:
        return np.arange(1, n_cells) / n_cells
    if not 0 < q < 0.5:
        raise ConfigurationError("tail probability q must lie in (0, 0.5)")
    return q + (1 - 2 * q) * np.arange(n_cells - 1) / (n_cells - 2)


def sigma_for_span(span: float, n_cells: int, q: Optional[float] = None) -> float:
    """Gaussian scale whose finite quantile cells cover ``span`` units."""
    probs = cut_probabilities(n_cells, q)
    return span / (ndtri(probs[-1]) - ndtri(probs[0]))


def quantile_grid(
    centres,
    sigmas,
    n_cells: int,
    q: Optional[float] = None,
    integer_states: bool = False,
    clamp_lower_at_zero: bool = False,
    start: int = 0,
) -> Grid:
    """Cut points at Gaussian quantiles around per-time centres.

    Rounded cut points that coincide are merged, so the number of cells at
    a time can drop below ``n_cells``. With ``clamp_lower_at_zero``
    negative cut points are raised to zero and the support is bounded below
    at zero.
    """
    centres = np.asarray(centres, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if np.any(~(sigmas > 0)):
        raise ConfigurationError("quantile grid scales must be positive")
    if not np.isfinite(centres).all():
        raise ConfigurationError("quantile grid centres must be finite")
    z = ndtri(cut_probabilities(n_cells, q))
    raw = centres[:, None] + (sigmas[:, None] if sigmas.ndim else sigmas) * z[None, :]
    lower = 0.0 if clamp_lower_at_zero else -np.inf
    if not (integer_states or clamp_lower_at_zero):
        # increasing by construction: positive scales times increasing quantiles
        art = (raw[:, -1] - raw[:, 0]) / (n_cells - 2)
        return Grid._from_matrix(raw, art, start, n_cells)
    cuts = []
    art = np.empty(len(centres))
    for i, row in enumerate(raw):
        if integer_states:
            row = np.rint(row)
        if clamp_lower_at_zero:
            row = np.maximum(row, 0.0)
        row = np.unique(row)
        if len(row) < 2:
            raise DegenerateGridError(
                f"time {start + i}: only {len(row)} distinct cut point(s) after rounding"
            )
        cuts.append(row)
        art[i] = (row[-1] - row[0]) / (len(row) - 1)
    return Grid(cuts=tuple(cuts), artificial_length=art, start=start, lower=lower,
                integer=integer_states, n_cells=n_cells)


def build_data_quantile_grid(
    y, n_cells: int, sigma_y, integer_states: bool = False, start: int = 0, stop=None
) -> Grid:
    """Quantiles of ``Normal(y_t, sigma_y^2)`` at ``i / n_cells`` for each time."""
    y = np.asarray(y, dtype=float)
    stop = len(y) if stop is None else stop
    sig = np.asarray(sigma_y, dtype=float)
    if sig.ndim:
        sig = sig[start:stop]
    return quantile_grid(y[start:stop], sig, n_cells, None, integer_states, False, start)


def build_state_quantile_grid(
    x_current,
    n_cells: int,
    sigma_x,
    integer_states: bool = False,
    clamp_lower_at_zero: bool = False,
    q: Optional[float] = None,
    start: int = 0,
    stop=None,
) -> Grid:
    """Quantiles of ``Normal(x_t, sigma_x(t)^2)`` around the current states.

    ``q=None`` gives equally probable cells (as for data quantiles);
    otherwise the finite cells span the ``q`` to ``1 - q`` quantiles.
    """
    x_current = np.asarray(x_current, dtype=float)
    stop = len(x_current) if stop is None else stop
    sig = np.asarray(sigma_x, dtype=float)
    if sig.ndim:
        sig = sig[start:stop]
    return quantile_grid(x_current[start:stop], sig, n_cells, q, integer_states,
                         clamp_lower_at_zero, start)


class GridStrategy:
    """How a sampler obtains a grid for a range of times.

    ``build(y, x, theta, start, stop)`` returns a grid covering at least
    ``[start, stop)``. ``depends_on_state`` tells the sampler whether the
    grid must be rebuilt around a proposed state for the reverse move.
    """

    depends_on_state = False
    n_cells: int

    def build(self, y, x, theta, start, stop) -> Grid:  # pragma: no cover - interface
        raise NotImplementedError


class EqualGrid(GridStrategy):
    """Equal finite cells spanning ``span`` units around the data mean."""

    def __init__(self, n_cells: int, span: float):
        if n_cells < 3:
            raise ConfigurationError(f"equal grids need n_cells >= 3, got {n_cells}")
        self.n_cells = n_cells
        self.span = span
        self._cache = None

    def build(self, y, x, theta, start=0, stop=None):
        if self._cache is None or self._cache[0] is not y:
            self._cache = (y, build_equal_grid(y, self.n_cells, self.span))
        return self._cache[1]


def _resolve_sigma(sigma, theta, centres):
    if callable(sigma):
        return np.asarray(sigma(theta, centres), dtype=float)
    return float(sigma)


class DataQuantileGrid(GridStrategy):
    """Gaussian quantiles around each observation.

    ``sigma`` is a scalar or a callable ``(theta, y_t) -> scale``.
    """

    def __init__(self, n_cells: int, sigma: SigmaLike, integer_states: bool = False):
        cut_probabilities(n_cells)
        self.n_cells = n_cells
        self.sigma = sigma
        self.integer_states = integer_states

    def build(self, y, x, theta, start=0, stop=None):
        y = np.asarray(y, dtype=float)
        stop = len(y) if stop is None else stop
        sig = _resolve_sigma(self.sigma, theta, y[start:stop])
        return quantile_grid(y[start:stop], sig, self.n_cells, None, self.integer_states,
                             False, start)


class StateQuantileGrid(GridStrategy):
    """Gaussian quantiles around the current latent states.

    Give either ``sigma`` (scalar or callable ``(theta, x_t) -> scale``) or
    ``proportionality``, in which case the variance at time ``t`` is
    ``proportionality * max(x_t, min_centre)``.
    """

    depends_on_state = True

    def __init__(
        self,
        n_cells: int,
        sigma: Optional[SigmaLike] = None,
        proportionality: Optional[float] = None,
        q: Optional[float] = None,
        integer_states: bool = False,
        clamp_lower_at_zero: bool = False,
        min_centre: float = 1.0,
    ):
        cut_probabilities(n_cells, q)
        if (sigma is None) == (proportionality is None):
            raise ConfigurationError("give exactly one of sigma or proportionality")
        if proportionality is not None and not proportionality > 0:
            raise ConfigurationError("proportionality must be positive")
        self.n_cells = n_cells
        self.sigma = sigma
        self.proportionality = proportionality
        self.q = q
        self.integer_states = integer_states
        self.clamp_lower_at_zero = clamp_lower_at_zero
        self.min_centre = min_centre

    def scales(self, theta, centres):
        if self.proportionality is not None:
            return np.sqrt(self.proportionality * np.maximum(centres, self.min_centre))
        return _resolve_sigma(self.sigma, theta, centres)

    def build(self, y, x, theta, start=0, stop=None):
        x = np.asarray(x, dtype=float)
        stop = len(x) if stop is None else stop
        centres = x[start:stop]
        return quantile_grid(centres, self.scales(theta, centres), self.n_cells, self.q,
                             self.integer_states, self.clamp_lower_at_zero, start)
