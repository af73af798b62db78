"""State-space model abstraction and exact log-density evaluation.

A model is described by three log-density callables. They must broadcast
over numpy arrays in their state arguments, and accept the (0-based) time
index either as an int or as an integer array broadcastable against the
states. That contract lets the grid machinery evaluate whole transition
matrices, and several time points, in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError, DimensionError, ModelDefinitionError

REAL = "real"
NONNEGATIVE_INTEGER = "nonnegative-integer"


@dataclass(frozen=True)
class ModelSpec:
    """One state-space model, given as log-densities.

    Parameters
    ----------
    log_initial : callable ``(x1, theta) -> array``
    log_transition : callable ``(x_t, x_prev, theta, t) -> array``
        Density of the state at time ``t`` (``1 <= t < T``) given ``t - 1``.
    log_observation : callable ``(y_t, x_t, theta, t) -> array``
    state_support : {"real", "nonnegative-integer"}
    param_names : sequence of str
        Labels of the entries of ``theta_vector(theta)``.
    time_homogeneous : bool
        True when ``log_transition`` ignores ``t``; lets equal grids reuse a
        single transition matrix.
    sample_initial, sample_transition : callable, optional
        ``(theta, size, rng)`` and ``(x_prev, theta, t, rng)`` samplers used
        by the particle baselines as bootstrap proposals.
    """

    log_initial: Callable[..., Any]
    log_transition: Callable[..., Any]
    log_observation: Callable[..., Any]
    state_support: str = REAL
    param_names: Sequence[str] = ()
    time_homogeneous: bool = False
    sample_initial: Optional[Callable[..., Any]] = None
    sample_transition: Optional[Callable[..., Any]] = None
    name: str = "ssm"

    def __post_init__(self):
        if self.state_support not in (REAL, NONNEGATIVE_INTEGER):
            raise ConfigurationError(f"unknown state_support {self.state_support!r}")

    @property
    def integer_states(self) -> bool:
        return self.state_support == NONNEGATIVE_INTEGER


def theta_vector(theta) -> np.ndarray:
    """Flatten a parameter object to a float vector."""
    if hasattr(theta, "as_array"):
        return np.asarray(theta.as_array(), dtype=float)
    if theta is None:
        return np.empty(0)
    return np.atleast_1d(np.asarray(theta, dtype=float))


def in_support(model: ModelSpec, x) -> np.ndarray:
    """Elementwise support membership."""
    x = np.asarray(x, dtype=float)
    if model.integer_states:
        return (x >= 0) & (x == np.floor(x))
    return np.isfinite(x)


def _checked_sum(values, what: str) -> float:
    values = np.asarray(values, dtype=float)
    if np.isnan(values).any():
        raise ModelDefinitionError(f"{what} returned NaN")
    return float(values.sum())


def log_joint_likelihood(model: ModelSpec, x, y, theta) -> float:
    """Complete-data log-likelihood ``log p(x_{1:T}, y_{1:T} | theta)``.

    Returns ``-inf`` when any state lies outside the model support or any
    factor has zero density.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if x.ndim != 1 or x.shape != y.shape[:1]:
        raise DimensionError(f"state length {x.shape} does not match observations {y.shape}")
    T = x.shape[0]
    if T < 1:
        raise DimensionError("need at least one time point")
    if not in_support(model, x).all():
        return -np.inf
    t = np.arange(T)
    total = _checked_sum(model.log_initial(x[0], theta), "log_initial")
    if T > 1:
        total += _checked_sum(model.log_transition(x[1:], x[:-1], theta, t[1:]), "log_transition")
    total += _checked_sum(model.log_observation(y, x, theta, t), "log_observation")
    return total


def log_block_conditional(
    model: ModelSpec,
    x_block,
    left,
    right,
    y_block,
    theta,
    start: int = 0,
    n_times: Optional[int] = None,
) -> float:
    """Unnormalized log full conditional of a block of consecutive states.

    Collects every factor of the joint likelihood that involves ``x_block``:
    the initial density when ``start == 0``, the transition in from ``left``,
    the within-block transitions, the transition out to ``right`` and the
    block's observation densities.

    Parameters
    ----------
    x_block, y_block : array_like
        States and observations at times ``start, ..., start + len - 1``.
    left, right : float or None
        States immediately before and after the block; ``None`` at the
        series ends.
    start : int
        0-based time index of the first block state.
    n_times : int, optional
        Series length. When given, a missing boundary that is not at a
        series end raises.
    """
    x_block = np.asarray(x_block, dtype=float)
    y_block = np.asarray(y_block)
    ell = x_block.shape[0]
    if ell < 1 or y_block.shape[:1] != (ell,):
        raise DimensionError("block states and observations must have equal positive length")
    if left is None and start > 0:
        raise ConfigurationError("left boundary may only be absent for a block starting at t=0")
    if n_times is not None and right is None and start + ell < n_times:
        raise ConfigurationError("right boundary may only be absent for the final block")
    if not in_support(model, x_block).all():
        return -np.inf
    # every transition touching the block, evaluated in one call
    x_to = x_block if right is None else np.append(x_block, right)
    x_from = x_to[:-1] if left is None else np.concatenate(([left], x_to[:-1]))
    t_to = np.arange(start + (left is None), start + ell + (right is not None))
    if left is None:
        total = _checked_sum(model.log_initial(x_block[0], theta), "log_initial")
        x_to = x_to[1:]
    else:
        total = 0.0
    if len(x_to):
        total += _checked_sum(model.log_transition(x_to, x_from, theta, t_to), "log_transition")
    t = np.arange(start, start + ell)
    total += _checked_sum(model.log_observation(y_block, x_block, theta, t), "log_observation")
    return total


@dataclass(frozen=True)
class BlockScheme:
    """Overlapping blocks of consecutive time indices (0-based, stop exclusive).

    Blocks start every ``block_size - overlap`` steps; the last block is
    shortened at the series end rather than extended past it. A block size
    of at least ``n_times`` gives a single whole-series block.
    """

    n_times: int
    block_size: int
    overlap: int = 1
    starts: tuple = field(init=False)

    def __post_init__(self):
        if self.n_times < 1:
            raise ConfigurationError("n_times must be positive")
        if self.block_size < 1:
            raise ConfigurationError("block_size must be a positive integer")
        if not 0 <= self.overlap < self.block_size:
            raise ConfigurationError("overlap must satisfy 0 <= overlap < block_size")
        if self.block_size >= self.n_times:
            starts = (0,)
        else:
            starts = tuple(range(0, self.n_times, self.block_size - self.overlap))
        object.__setattr__(self, "starts", starts)

    def __iter__(self):
        for s in self.starts:
            yield s, min(s + self.block_size, self.n_times)

    def __len__(self):
        return len(self.starts)
