"""Effective sample size, Brooks-Gelman-Rubin statistic and chain summaries."""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .sampler import ChainOutput

MIN_LENGTH = 10
RHAT_THRESHOLD = 1.1


def _chain(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a one-dimensional chain")
    if len(x) < MIN_LENGTH:
        raise ValueError(f"chain length must be >= {MIN_LENGTH}, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("chain contains non-finite values")
    return x


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelations at lags ``0..M-1`` (biased autocovariance, via FFT)."""
    x = np.asarray(x, dtype=float)
    M = len(x)
    d = x - x.mean()
    n = 1 << (2 * M - 1).bit_length()
    f = np.fft.rfft(d, n)
    acov = np.fft.irfft(f * np.conj(f), n)[:M] / M
    return acov / acov[0]


def effective_sample_size(samples, return_flag: bool = False):
    """ESS of a scalar chain with Geyer's initial positive sequence truncation.

    Lag autocorrelations are summed in adjacent pairs while each pair sum
    stays positive; ``ESS = M / tau`` with ``tau = -1 + 2 * sum(pairs)``,
    capped at ``M``. A constant chain has ESS 0.

    Parameters
    ----------
    samples : array of shape (M,)
    return_flag : bool
        Also return ``True`` when the chain is constant.
    """
    x = _chain(samples)
    M = len(x)
    if np.ptp(x) == 0.0:
        return (0.0, True) if return_flag else 0.0
    rho = autocorrelation(x)
    n_pairs = M // 2
    pairs = rho[0:2 * n_pairs:2] + rho[1:2 * n_pairs:2]
    nonpos = np.flatnonzero(pairs <= 0)
    k = nonpos[0] if len(nonpos) else n_pairs
    tau = -1.0 + 2.0 * float(pairs[:k].sum())
    ess = float(M) if tau <= 0 else min(M / tau, float(M))
    return (ess, False) if return_flag else ess


def bgr_statistic(chains) -> float:
    """Potential scale reduction factor on the second halves of the chains.

    With ``n`` retained draws per chain, ``W`` the mean within-chain variance
    and ``B / n`` the variance of the chain means,
    ``R = sqrt(((n - 1) / n * W + B / n) / W)``.
    """
    chains = [_chain(c) for c in chains]
    if len(chains) < 2:
        raise ValueError("need at least 2 chains")
    if len({len(c) for c in chains}) != 1:
        raise ValueError("chains must have equal lengths")
    L = len(chains[0])
    halves = np.array([c[L - L // 2:] for c in chains])
    n = halves.shape[1]
    W = float(halves.var(axis=1, ddof=1).mean())
    B = n * float(halves.mean(axis=1).var(ddof=1))
    if W == 0.0:
        return 1.0 if B == 0.0 else np.inf
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def _as_list(outputs) -> list:
    return [outputs] if isinstance(outputs, ChainOutput) else list(outputs)


def summarize(outputs: Union[ChainOutput, Sequence[ChainOutput]], burn_in: int = 0,
              wall_time: Optional[float] = None) -> pd.DataFrame:
    """Per-quantity summary over one or more chains.

    Columns are ``kind`` (parameter or state), ``mean``, ``sd``, ``q025``,
    ``q975``, ``ess`` (summed over chains), ``ess_per_s``, ``rhat`` (NaN for a
    single chain) and ``degenerate`` (constant in every chain). States are
    summarized over their retained iterations beyond ``burn_in``.

    Parameters
    ----------
    wall_time : float, optional
        Seconds used for ESS/s; defaults to the summed chain wall-times.
    """
    outputs = _as_list(outputs)
    if not outputs:
        raise ValueError("no chains to summarize")
    n_iter = outputs[0].n_iter
    if any(o.n_iter != n_iter for o in outputs):
        raise ValueError("chains must have equal lengths")
    if not 0 <= burn_in < n_iter:
        raise ValueError(f"burn_in must lie in [0, {n_iter})")
    seconds = sum(o.wall_time for o in outputs) if wall_time is None else wall_time
    rows = []

    def add(name, kind, draws):
        pooled = np.concatenate(draws)
        flags = [effective_sample_size(d, return_flag=True) for d in draws]
        degenerate = all(f for _, f in flags)
        ess = float(sum(e for e, _ in flags))
        rhat = bgr_statistic(draws) if len(draws) > 1 else np.nan
        rows.append({
            "quantity": name, "kind": kind, "mean": pooled.mean(), "sd": pooled.std(ddof=1),
            "q025": np.quantile(pooled, 0.025), "q975": np.quantile(pooled, 0.975),
            "ess": ess, "ess_per_s": ess / seconds if seconds > 0 else np.nan,
            "rhat": rhat, "degenerate": degenerate,
        })

    for j, name in enumerate(outputs[0].param_names):
        add(name, "parameter", [o.theta[burn_in:, j] for o in outputs])
    keep = outputs[0].state_iterations > burn_in
    if keep.sum() >= MIN_LENGTH:
        for j, name in enumerate(outputs[0].state_names):
            add(name, "state", [o.states[o.state_iterations > burn_in, j] for o in outputs])
    return pd.DataFrame(rows).set_index("quantity")


def average_ess(summary: pd.DataFrame) -> dict:
    """Mean ESS and ESS/s over non-degenerate quantities: pooled, parameters, states."""
    live = summary[~summary["degenerate"]]
    out = {}
    for key, part in (("all", live), ("parameters", live[live["kind"] == "parameter"]),
                      ("states", live[live["kind"] == "state"])):
        out[key] = {
            "ess": float(part["ess"].mean()) if len(part) else np.nan,
            "ess_per_s": float(part["ess_per_s"].mean()) if len(part) else np.nan,
        }
    return out


def converged(summary: pd.DataFrame, threshold: float = RHAT_THRESHOLD) -> bool:
    """All non-degenerate parameters have ``rhat <= threshold``."""
    params = summary[(summary["kind"] == "parameter") & ~summary["degenerate"]]
    return bool(np.all(params["rhat"].fillna(np.inf) <= threshold))
