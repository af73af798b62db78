"""Case-study models and the linear-Gaussian oracle model."""

from typing import Callable, NamedTuple, Optional

from ..exceptions import ConfigurationError
from ..ssm import ModelSpec

from .gaussian_mixture import (
    GAUSSIAN_MIXTURE,
    MODEL_1,
    MODEL_2,
    GaussianMixtureParams,
    GaussianMixtureUpdater,
    gaussian_mixture_model,
    gaussian_mixture_theta_update,
    model_1_updater,
    model_2_updater,
    simulate_gaussian_mixture,
)
from .linear_gaussian import (
    LINEAR_GAUSSIAN,
    LinearGaussianParams,
    kalman_filter,
    kalman_smoother,
    linear_gaussian_testmodel,
    sample_posterior,
    simulate_linear_gaussian,
)
from .blowfly import (
    BLOWFLY_THETA,
    BlowflyData,
    BlowflyParams,
    BlowflyState,
    BlowflyUpdater,
    blowfly_grid,
    blowfly_log_likelihood,
    initial_state,
    run_blowfly_chain,
    simulate_blowfly,
)


class ModelEntry(NamedTuple):
    name: str
    spec: Optional[ModelSpec]
    theta: object
    updater: Optional[Callable]


_REGISTRY = {
    "gaussian-mixture-1": ModelEntry("gaussian-mixture-1", GAUSSIAN_MIXTURE, MODEL_1,
                                     model_1_updater),
    "gaussian-mixture-2": ModelEntry("gaussian-mixture-2", GAUSSIAN_MIXTURE, MODEL_2,
                                     model_2_updater),
    "linear-gaussian": ModelEntry("linear-gaussian", LINEAR_GAUSSIAN,
                                  LinearGaussianParams(0.9, 1.0, 1.0), None),
    "blowfly": ModelEntry("blowfly", None, BLOWFLY_THETA, BlowflyUpdater),
}

MODEL_NAMES = tuple(_REGISTRY)


def registry(name: str) -> ModelEntry:
    """Look up a named model: its spec, preset parameters and default updater factory."""
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; choose from {MODEL_NAMES}") from None
