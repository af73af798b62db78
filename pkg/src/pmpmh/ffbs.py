"""Forward filtering, backward sampling and exact path probabilities.

All routines accept optional boundary cells so that a block of grid-cell
indices can be sampled conditional on the cells of its neighbours: the left
boundary replaces the initial distribution by a row of the entry matrix,
and the right boundary enters as a final pseudo-emission
``P(B_stop = right | B_stop-1 = n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .exceptions import ConfigurationError, FilteringDegeneracyError
from .hmm import DiscreteHmm
from .rng import categorical


@dataclass(frozen=True)
class FilterResult:
    """Normalized filtered vectors and the log of the total normalizer."""

    alphas: tuple
    log_normalizer: float


def _prior(hmm: DiscreteHmm, left_boundary):
    if left_boundary is None:
        if hmm.initial is None:
            raise ConfigurationError("HMM block has no initial distribution; give left_boundary")
        return hmm.initial
    if hmm.entry is None:
        raise ConfigurationError("HMM block has no entry matrix for a left boundary")
    return hmm.entry[left_boundary]


def _exit_column(hmm: DiscreteHmm, right_boundary):
    if hmm.exit is None:
        raise ConfigurationError("HMM block has no exit matrix for a right boundary")
    return hmm.exit[:, right_boundary]


def _trans_array(hmm: DiscreteHmm):
    if hmm.n_times == 1:
        n = len(hmm.log_emissions[0])
        return np.empty((0, n, n))
    return hmm.transitions


def _exit_array(hmm: DiscreteHmm, right_boundary):
    if right_boundary is None:
        return _NO_EXIT, False
    return np.ascontiguousarray(_exit_column(hmm, right_boundary)), True


_NO_EXIT = np.ones(1)


def forward_filter(hmm: DiscreteHmm, left_boundary: Optional[int] = None) -> FilterResult:
    """Filtered cell probabilities given the block's observations.

    Emission weights are exponentiated after subtracting their per-time
    maximum and every step is renormalized; the discarded scale is
    accumulated in ``log_normalizer``.
    """
    pred = _prior(hmm, left_boundary)
    if hmm.dense:
        alphas, log_norm, bad = _kernels.forward(pred, _trans_array(hmm), hmm.log_emissions)
        if bad >= 0:
            raise FilteringDegeneracyError(f"zero filtering weight at t={hmm.start + bad}")
        return FilterResult(alphas, float(log_norm))
    alphas = []
    log_norm = 0.0
    for i, le in enumerate(hmm.log_emissions):
        if i:
            pred = alphas[-1] @ hmm.transitions[i - 1]
        m = le.max()
        a = pred * np.exp(le - m)
        c = a.sum()
        if not c > 0:
            raise FilteringDegeneracyError(f"zero filtering weight at t={hmm.start + i}")
        alphas.append(a / c)
        log_norm += np.log(c) + m
    return FilterResult(tuple(alphas), float(log_norm))


def backward_sample(hmm: DiscreteHmm, filtered: FilterResult, right_boundary: Optional[int],
                    rng: np.random.Generator) -> np.ndarray:
    """Draw a cell path from the exact discrete posterior, last time first."""
    alphas = filtered.alphas
    L = len(alphas)
    if hmm.dense:
        col, has_exit = _exit_array(hmm, right_boundary)
        if has_exit and not alphas[-1] @ col > 0:
            raise FilteringDegeneracyError("right boundary cell is unreachable")
        # uniforms are consumed last time first, as in the loop below
        u = rng.random(L)[::-1].copy()
        return _kernels.backward(alphas, _trans_array(hmm), col, has_exit, u)
    path = np.empty(L, dtype=np.intp)
    w = alphas[-1]
    if right_boundary is not None:
        w = w * _exit_column(hmm, right_boundary)
        if not w.sum() > 0:
            raise FilteringDegeneracyError("right boundary cell is unreachable")
    path[-1] = categorical(rng, w)
    for i in range(L - 2, -1, -1):
        path[i] = categorical(rng, alphas[i] * hmm.transitions[i][:, path[i + 1]])
    return path


def path_log_probability(hmm: DiscreteHmm, path, left_boundary: Optional[int] = None,
                         right_boundary: Optional[int] = None,
                         filtered: Optional[FilterResult] = None) -> float:
    """Exact log posterior probability of a cell path under the discrete HMM.

    Pass the ``filtered`` result of the same HMM and left boundary to avoid
    recomputing the normalizer.
    """
    path = np.asarray(path, dtype=np.intp)
    if filtered is None:
        filtered = forward_filter(hmm, left_boundary)
    if hmm.dense:
        if len(path) != hmm.n_times or path.min() < 0 or path.max() >= hmm.log_emissions.shape[1]:
            raise IndexError("path does not fit the HMM")
        col, has_exit = _exit_array(hmm, right_boundary)
        return float(_kernels.path_log_prob(
            _prior(hmm, left_boundary), _trans_array(hmm), hmm.log_emissions, path, col,
            has_exit, filtered.alphas[-1], filtered.log_normalizer))
    lp = np.log(_prior(hmm, left_boundary)[path[0]]) + hmm.log_emissions[0][path[0]]
    for i in range(1, len(path)):
        lp += np.log(hmm.transitions[i - 1][path[i - 1], path[i]]) + hmm.log_emissions[i][path[i]]
    log_z = filtered.log_normalizer
    if right_boundary is not None:
        col = _exit_column(hmm, right_boundary)
        lp += np.log(col[path[-1]])
        log_z += np.log(filtered.alphas[-1] @ col)
    return float(lp - log_z)


def smoothed_marginals(hmm: DiscreteHmm, left_boundary: Optional[int] = None,
                       right_boundary: Optional[int] = None):
    """Posterior marginal cell probabilities per time (forward-backward)."""
    filt = forward_filter(hmm, left_boundary)
    L = len(filt.alphas)
    beta = np.ones(len(filt.alphas[-1]))
    if right_boundary is not None:
        beta = _exit_column(hmm, right_boundary).copy()
    out = [None] * L
    for i in range(L - 1, -1, -1):
        if i < L - 1:
            le = hmm.log_emissions[i + 1]
            beta = hmm.transitions[i] @ (np.exp(le - le.max()) * beta)
            beta = beta / beta.sum()
        g = filt.alphas[i] * beta
        out[i] = g / g.sum()
    return out
