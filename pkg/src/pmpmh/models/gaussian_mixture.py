"""Random walk with two-component Gaussian mixture increments.

``x_t | x_{t-1} ~ p N(x_{t-1}, s1) + (1 - p) N(x_{t-1}, s2)`` with
``x_1`` drawn from the same mixture centred at 1, observed as
``y_t ~ N(x_t, s_eps)``. The component indicators are integrated out, so the
latent state stays one-dimensional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..ssm import ModelSpec

_LOG_2PI = math.log(2 * math.pi)
INITIAL_MEAN = 1.0


@dataclass(frozen=True)
class GaussianMixtureParams:
    p: float
    sigma2_eta1: float
    sigma2_eta2: float
    sigma2_eps: float

    names = ("p", "sigma2_eta1", "sigma2_eta2", "sigma2_eps")

    def as_array(self):
        return np.array([self.p, self.sigma2_eta1, self.sigma2_eta2, self.sigma2_eps])

    def is_valid(self) -> bool:
        return (0.0 <= self.p <= 1.0 and self.sigma2_eta1 > 0 and self.sigma2_eta2 > 0
                and self.sigma2_eps > 0)


MODEL_1 = GaussianMixtureParams(0.9, 1.0, 700.0, 1.0)
MODEL_2 = GaussianMixtureParams(0.99, 1.0, 10000.0, 10.0)


def _norm_logpdf(x, mean, var):
    d = x - mean
    return -0.5 * (_LOG_2PI + math.log(var) + d * d / var)


def mixture_logpdf(x, mean, th: GaussianMixtureParams):
    d2 = np.square(x - mean)
    s1, s2 = th.sigma2_eta1, th.sigma2_eta2
    with np.errstate(divide="ignore"):
        c1 = (math.log(th.p) if th.p > 0 else -np.inf) - 0.5 * (_LOG_2PI + math.log(s1))
        c2 = (math.log1p(-th.p) if th.p < 1 else -np.inf) - 0.5 * (_LOG_2PI + math.log(s2))
    return np.logaddexp(c1 - d2 / (2 * s1), c2 - d2 / (2 * s2))


def _log_initial(x, th):
    return mixture_logpdf(x, INITIAL_MEAN, th)


def _log_transition(x, xp, th, t):
    return mixture_logpdf(x, xp, th)


def _log_observation(y, x, th, t):
    return _norm_logpdf(y, x, th.sigma2_eps)


def _mixture_draw(mean, th, size, rng):
    first = rng.random(size) < th.p
    sd = np.where(first, math.sqrt(th.sigma2_eta1), math.sqrt(th.sigma2_eta2))
    return mean + sd * rng.standard_normal(size)


def _sample_initial(th, size, rng):
    return _mixture_draw(INITIAL_MEAN, th, size, rng)


def _sample_transition(xp, th, t, rng):
    return _mixture_draw(xp, th, np.shape(xp), rng)


GAUSSIAN_MIXTURE = ModelSpec(
    log_initial=_log_initial,
    log_transition=_log_transition,
    log_observation=_log_observation,
    param_names=GaussianMixtureParams.names,
    time_homogeneous=True,
    sample_initial=_sample_initial,
    sample_transition=_sample_transition,
    name="gaussian-mixture",
)


def gaussian_mixture_model() -> ModelSpec:
    return GAUSSIAN_MIXTURE


def simulate_gaussian_mixture(theta: GaussianMixtureParams, T: int, rng: np.random.Generator):
    """Simulate ``(x, y)`` of length ``T``; indicators ``w_t ~ Bernoulli(p)`` pick the variance."""
    if T < 1:
        raise ValueError("T must be >= 1")
    w = rng.random(T) < theta.p
    sd = np.where(w, math.sqrt(theta.sigma2_eta1), math.sqrt(theta.sigma2_eta2))
    steps = sd * rng.standard_normal(T)
    x = INITIAL_MEAN + np.cumsum(steps)
    y = x + math.sqrt(theta.sigma2_eps) * rng.standard_normal(T)
    return x, y


def _log_inv_gamma(v, shape, scale):
    if v <= 0:
        return -np.inf
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1) * math.log(v) - scale / v


def state_log_likelihood(x, th: GaussianMixtureParams) -> float:
    """``log p(x_{1:T} | theta)`` under the mixture random walk."""
    x = np.asarray(x, dtype=float)
    total = float(_log_initial(x[0], th))
    if len(x) > 1:
        total += float(np.sum(mixture_logpdf(x[1:], x[:-1], th)))
    return total


class GaussianMixtureUpdater:
    """Parameter step for the mixture model given the latent states.

    ``sigma2_eps`` is drawn from its conjugate inverse-gamma conditional;
    ``p``, ``sigma2_eta1`` and ``sigma2_eta2`` each take one random-walk
    Metropolis-Hastings step with a uniform proposal of the given width.

    Parameters
    ----------
    eps_prior : (shape, scale)
        Inverse-gamma prior of ``sigma2_eps``.
    eta1_prior, eta2_prior : (shape, scale)
        Inverse-gamma priors of the state variances; ``p`` is U(0, 1).
    widths : (w_p, w_eta1, w_eta2)
        Total widths of the uniform random-walk proposals.
    """

    def __init__(self, eps_prior=(2.0, 2.0), eta1_prior=(2.0, 2.0), eta2_prior=(2.0, 700.0),
                 widths=(0.3, 2.0, 160.0)):
        self.eps_prior = tuple(eps_prior)
        self.eta1_prior = tuple(eta1_prior)
        self.eta2_prior = tuple(eta2_prior)
        self.widths = tuple(widths)
        self.accepted = np.zeros(3, dtype=np.int64)
        self.proposed = np.zeros(3, dtype=np.int64)

    def log_prior(self, th: GaussianMixtureParams) -> float:
        if not 0.0 <= th.p <= 1.0:
            return -np.inf
        return (_log_inv_gamma(th.sigma2_eta1, *self.eta1_prior)
                + _log_inv_gamma(th.sigma2_eta2, *self.eta2_prior)
                + _log_inv_gamma(th.sigma2_eps, *self.eps_prior))

    def _log_target(self, x, th):
        lp = self.log_prior(th)
        if lp == -np.inf:
            return lp
        return lp + state_log_likelihood(x, th)

    def eps_conditional(self, x, y):
        """Shape and scale of the inverse-gamma full conditional of ``sigma2_eps``."""
        resid = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        shape = self.eps_prior[0] + 0.5 * len(resid)
        scale = self.eps_prior[1] + 0.5 * float(resid @ resid)
        return shape, scale

    def __call__(self, x, y, th: GaussianMixtureParams, rng: np.random.Generator):
        shape, scale = self.eps_conditional(x, y)
        th = replace(th, sigma2_eps=scale / rng.gamma(shape))
        current = self._log_target(x, th)
        for i, name in enumerate(("p", "sigma2_eta1", "sigma2_eta2")):
            value = getattr(th, name) + self.widths[i] * (rng.random() - 0.5)
            cand = replace(th, **{name: value})
            self.proposed[i] += 1
            if not cand.is_valid():
                continue
            new = self._log_target(x, cand)
            if math.log(rng.random()) < new - current:
                th, current = cand, new
                self.accepted[i] += 1
        return th


def model_1_updater() -> GaussianMixtureUpdater:
    return GaussianMixtureUpdater(eps_prior=(2.0, 2.0), widths=(0.3, 2.0, 160.0))


def model_2_updater() -> GaussianMixtureUpdater:
    return GaussianMixtureUpdater(eps_prior=(2.0, 10.0), widths=(0.02, 0.5, 20000.0))


def gaussian_mixture_theta_update(x, y, theta: GaussianMixtureParams, rng,
                                  updater: GaussianMixtureUpdater = None):
    """One parameter update (Model 1 priors and widths unless ``updater`` is given)."""
    updater = model_1_updater() if updater is None else updater
    return updater(x, y, theta, rng)
