"""AR(1) state observed in Gaussian noise, with its exact Kalman solution.

Used as the oracle model: every smoothed mean and variance is available in
closed form, and exact joint posterior draws come from forward filtering,
backward sampling on the Kalman recursions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..ssm import ModelSpec

_LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class LinearGaussianParams:
    """``x_1 ~ N(m0, p0)``, ``x_t = a x_{t-1} + N(0, sigma2_state)``, ``y_t = x_t + N(0, sigma2_obs)``."""

    a: float
    sigma2_state: float
    sigma2_obs: float
    m0: float = 0.0
    p0: Optional[float] = None

    names = ("a", "sigma2_state", "sigma2_obs")

    def __post_init__(self):
        if not (self.sigma2_state > 0 and self.sigma2_obs > 0):
            raise ValueError("variances must be positive")
        if self.p0 is None:
            stationary = abs(self.a) < 1
            p0 = self.sigma2_state / (1 - self.a ** 2) if stationary else self.sigma2_state
            object.__setattr__(self, "p0", p0)

    def as_array(self):
        return np.array([self.a, self.sigma2_state, self.sigma2_obs])


def _norm_logpdf(x, mean, var):
    d = x - mean
    return -0.5 * (_LOG_2PI + np.log(var) + d * d / var)


def _log_initial(x, th):
    return _norm_logpdf(x, th.m0, th.p0)


def _log_transition(x, xp, th, t):
    return _norm_logpdf(x, th.a * xp, th.sigma2_state)


def _log_observation(y, x, th, t):
    return _norm_logpdf(y, x, th.sigma2_obs)


def _sample_initial(th, size, rng):
    return th.m0 + math.sqrt(th.p0) * rng.standard_normal(size)


def _sample_transition(xp, th, t, rng):
    return th.a * xp + math.sqrt(th.sigma2_state) * rng.standard_normal(np.shape(xp))


LINEAR_GAUSSIAN = ModelSpec(
    log_initial=_log_initial,
    log_transition=_log_transition,
    log_observation=_log_observation,
    param_names=("a", "sigma2_state", "sigma2_obs"),
    time_homogeneous=True,
    sample_initial=_sample_initial,
    sample_transition=_sample_transition,
    name="linear-gaussian",
)


def linear_gaussian_testmodel(a: float, sigma2_state: float, sigma2_obs: float,
                              m0: float = 0.0, p0: Optional[float] = None):
    """Return ``(model, theta)`` for the AR(1)-plus-noise model."""
    return LINEAR_GAUSSIAN, LinearGaussianParams(a, sigma2_state, sigma2_obs, m0, p0)


def simulate_linear_gaussian(theta: LinearGaussianParams, T: int, rng: np.random.Generator):
    x = np.empty(T)
    x[0] = _sample_initial(theta, None, rng)
    for t in range(1, T):
        x[t] = theta.a * x[t - 1] + math.sqrt(theta.sigma2_state) * rng.standard_normal()
    y = x + math.sqrt(theta.sigma2_obs) * rng.standard_normal(T)
    return x, y


def kalman_filter(y, theta: LinearGaussianParams):
    """Filtered means/variances and one-step predicted means/variances."""
    y = np.asarray(y, dtype=float)
    T = len(y)
    mf, pf, mp, pp = (np.empty(T) for _ in range(4))
    m, p = theta.m0, theta.p0
    for t in range(T):
        if t:
            m, p = theta.a * mf[t - 1], theta.a ** 2 * pf[t - 1] + theta.sigma2_state
        mp[t], pp[t] = m, p
        k = p / (p + theta.sigma2_obs)
        mf[t] = m + k * (y[t] - m)
        pf[t] = (1 - k) * p
    return mf, pf, mp, pp


def kalman_smoother(y, theta: LinearGaussianParams):
    """Rauch-Tung-Striebel smoother: exact posterior means and variances of each ``x_t``."""
    mf, pf, mp, pp = kalman_filter(y, theta)
    T = len(mf)
    ms, ps = mf.copy(), pf.copy()
    for t in range(T - 2, -1, -1):
        g = pf[t] * theta.a / pp[t + 1]
        ms[t] = mf[t] + g * (ms[t + 1] - mp[t + 1])
        ps[t] = pf[t] + g * g * (ps[t + 1] - pp[t + 1])
    return ms, ps


def sample_posterior(y, theta: LinearGaussianParams, size: int, rng: np.random.Generator):
    """Exact draws of ``x_{1:T} | y_{1:T}`` (rows), by backward sampling on the Kalman filter."""
    mf, pf, _, _ = kalman_filter(y, theta)
    T = len(mf)
    out = np.empty((size, T))
    out[:, -1] = mf[-1] + math.sqrt(pf[-1]) * rng.standard_normal(size)
    a, q = theta.a, theta.sigma2_state
    for t in range(T - 2, -1, -1):
        # x_t | x_{t+1}, y_{1:t}
        var = 1.0 / (1.0 / pf[t] + a * a / q)
        mean = var * (mf[t] / pf[t] + a * out[:, t + 1] / q)
        out[:, t] = mean + math.sqrt(var) * rng.standard_normal(size)
    return out
