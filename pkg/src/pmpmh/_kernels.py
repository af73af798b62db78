"""Compiled inner loops for grids whose cell count is the same at every time.

Blocks are short and grids small, so the pure numpy versions in
:mod:`pmpmh.ffbs` and :mod:`pmpmh.sampler` spend most of their time in call
overhead. These kernels do the same arithmetic in one compiled call each.
Random draws are made by the caller and passed in, so results stay tied to
the caller's generator.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_LOG2 = math.log(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def forward(prior, trans, log_em):
    """Normalized filtered rows and log normalizer; ``bad`` is the failing row or -1."""
    L, N = log_em.shape
    alphas = np.empty((L, N))
    log_norm = 0.0
    for i in range(L):
        m = log_em[i, 0]
        for n in range(1, N):
            if log_em[i, n] > m:
                m = log_em[i, n]
        c = 0.0
        for n in range(N):
            if i == 0:
                p = prior[n]
            else:
                p = 0.0
                for k in range(N):
                    p += alphas[i - 1, k] * trans[i - 1, k, n]
            a = p * math.exp(log_em[i, n] - m)
            alphas[i, n] = a
            c += a
        if not c > 0.0:
            return alphas, 0.0, i
        for n in range(N):
            alphas[i, n] /= c
        log_norm += math.log(c) + m
    return alphas, log_norm, -1


@njit(cache=True)
def _draw(w, u):
    N = w.shape[0]
    total = 0.0
    for n in range(N):
        total += w[n]
    v = u * total
    acc = 0.0
    for n in range(N):
        acc += w[n]
        if acc > v:
            return n
    return N - 1


@njit(cache=True)
def backward(alphas, trans, exit_col, has_exit, u):
    """Backward sampling of a cell path given pre-drawn uniforms ``u``."""
    L, N = alphas.shape
    path = np.empty(L, dtype=np.intp)
    w = np.empty(N)
    for n in range(N):
        w[n] = alphas[L - 1, n] * (exit_col[n] if has_exit else 1.0)
    path[L - 1] = _draw(w, u[L - 1])
    for i in range(L - 2, -1, -1):
        nxt = path[i + 1]
        for n in range(N):
            w[n] = alphas[i, n] * trans[i, n, nxt]
        path[i] = _draw(w, u[i])
    return path


@njit(cache=True)
def path_log_prob(prior, trans, log_em, path, exit_col, has_exit, alpha_last, log_norm):
    L = path.shape[0]
    lp = math.log(prior[path[0]]) + log_em[0, path[0]]
    for i in range(1, L):
        lp += math.log(trans[i - 1, path[i - 1], path[i]]) + log_em[i, path[i]]
    if has_exit:
        lp += math.log(exit_col[path[L - 1]])
        z = 0.0
        for n in range(alpha_last.shape[0]):
            z += alpha_last[n] * exit_col[n]
        log_norm += math.log(z)
    return lp - log_norm


@njit(cache=True)
def locate(cuts, xs):
    """Count of cut points strictly below each state (searchsorted, side='left')."""
    L, K = cuts.shape
    out = np.empty(L, dtype=np.intp)
    for i in range(L):
        c = 0
        while c < K and cuts[i, c] < xs[i]:
            c += 1
        out[i] = c
    return out


@njit(cache=True)
def _bounds(cuts, i, n, lower, upper):
    K = cuts.shape[1]
    lo = lower if n == 0 else cuts[i, n - 1]
    hi = upper if n == K else cuts[i, n]
    return lo, hi


@njit(cache=True)
def within_sample(cuts, lower, upper, integer, cells, u, z, k, tail_sd):
    """States inside ``cells``; ``u`` uniform, ``z`` standard normal, ``k`` Poisson draws."""
    L = cells.shape[0]
    out = np.empty(L)
    for i in range(L):
        n = cells[i]
        lo, hi = _bounds(cuts, i, n, lower, upper)
        if integer:
            if math.isinf(hi):
                out[i] = lo + 1.0 + k[i]
            elif math.isinf(lo):
                out[i] = hi - k[i]
            else:
                first = lo if n == 0 else lo + 1.0
                out[i] = first + math.floor(u[i] * (hi - first + 1.0))
        elif math.isinf(hi):
            out[i] = lo + abs(z[i]) * tail_sd
        elif math.isinf(lo):
            out[i] = hi - abs(z[i]) * tail_sd
        else:
            v = hi - (hi - lo) * u[i]
            out[i] = v if (v > lo or n == 0) else hi
    return out


@njit(cache=True)
def within_log_density(cuts, lower, upper, integer, cells, xs, tail_var, lam):
    L = cells.shape[0]
    total = 0.0
    log_lam = math.log(lam)
    for i in range(L):
        n = cells[i]
        lo, hi = _bounds(cuts, i, n, lower, upper)
        if integer:
            if math.isinf(hi) or math.isinf(lo):
                kk = xs[i] - lo - 1.0 if math.isinf(hi) else hi - xs[i]
                total += kk * log_lam - lam - math.lgamma(kk + 1.0)
            else:
                first = lo if n == 0 else lo + 1.0
                total -= math.log(hi - first + 1.0)
        elif math.isinf(hi) or math.isinf(lo):
            d = xs[i] - lo if math.isinf(hi) else hi - xs[i]
            total += _LOG2 - _HALF_LOG_2PI - 0.5 * math.log(tail_var) - 0.5 * d * d / tail_var
        else:
            total -= math.log(hi - lo)
    return total
