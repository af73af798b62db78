from dataclasses import replace

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pmpmh.estimators import (
    BlowflySampler,
    PGASSampler,
    PGSampler,
    PMPMHSampler,
    chain_stream,
    make_gridder,
)
from pmpmh.exceptions import ConfigurationError
from pmpmh.grid import DataQuantileGrid, EqualGrid, StateQuantileGrid
from pmpmh.models import (
    MODEL_1,
    BLOWFLY_THETA,
    linear_gaussian_testmodel,
    simulate_blowfly,
    simulate_gaussian_mixture,
    simulate_linear_gaussian,
)
from pmpmh.rng import derive_stream

Y = simulate_gaussian_mixture(MODEL_1, 30, derive_stream(50))[1]


def test_make_gridder_dispatch():
    assert isinstance(make_gridder(1, 10, span=5.0), EqualGrid)
    assert isinstance(make_gridder(2, 10, span=5.0), DataQuantileGrid)
    assert isinstance(make_gridder(3, 10, sigma=1.0), StateQuantileGrid)
    assert isinstance(make_gridder(3, 10, proportionality=0.25, q=0.01), StateQuantileGrid)
    with pytest.raises(ConfigurationError):
        make_gridder(4, 10, span=1.0)
    with pytest.raises(ConfigurationError):
        make_gridder(1, 10)
    with pytest.raises(ConfigurationError):
        make_gridder(2, 10, proportionality=0.5)
    with pytest.raises(ConfigurationError):
        make_gridder(3, 10)


def test_chain_streams_are_distinct_and_reproducible():
    a = chain_stream(7, 0).standard_normal(3)
    assert np.array_equal(a, chain_stream(7, 0).standard_normal(3))
    assert not np.array_equal(a, chain_stream(7, 1).standard_normal(3))


@pytest.mark.parametrize("cls", [PMPMHSampler, PGASSampler, PGSampler, BlowflySampler])
def test_params_roundtrip_and_clone(cls):
    est = cls(n_iter=17, random_state=3)
    params = est.get_params()
    assert params["n_iter"] == 17 and params["random_state"] == 3
    est.set_params(n_iter=11)
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    with pytest.raises(NotFittedError):
        twin.predict()


@pytest.mark.parametrize("cls, extra", [(PMPMHSampler, {"n_cells": 6}),
                                        (PGASSampler, {"n_particles": 8}),
                                        (PGSampler, {"n_particles": 8})])
def test_fit_predict_and_determinism(cls, extra):
    kw = dict(n_iter=20, burn_in=5, n_chains=2, thin=2, random_state=11, **extra)
    a = cls(**kw).fit(Y)
    b = cls(**kw).fit(Y)
    assert a.predict().shape == (30,)
    assert np.array_equal(a.predict(), b.predict())
    assert np.array_equal(a.chains_[1].theta, b.chains_[1].theta)
    assert not np.array_equal(a.chains_[0].theta, a.chains_[1].theta)
    assert len(a.chains_) == 2 and a.acceptance_rates_.shape[0] == 2
    assert list(a.summary_.columns[:2]) == ["kind", "mean"]
    assert not np.isnan(a.summary_.loc["p", "rhat"])
    kept = np.concatenate([o.states[o.state_iterations > 5] for o in a.chains_])
    assert np.allclose(a.predict(), kept.mean(0))


def test_different_seed_changes_output():
    a = PMPMHSampler(n_iter=10, n_cells=6, random_state=1).fit(Y)
    b = PMPMHSampler(n_iter=10, n_cells=6, random_state=2).fit(Y)
    assert not np.array_equal(a.chains_[0].theta, b.chains_[0].theta)


def test_custom_model_fixed_parameters():
    model, th = linear_gaussian_testmodel(0.9, 1.0, 1.0)
    _, y = simulate_linear_gaussian(th, 12, derive_stream(51))
    est = PMPMHSampler(model=model, theta_init=th, theta_updater=None, approach=1, span=8.0,
                       n_iter=15, thin=1, random_state=0).fit(y)
    assert np.all(est.chains_[0].theta == est.chains_[0].theta[0])
    assert est.summary_.loc["a", "degenerate"]
    with pytest.raises(ConfigurationError):
        PMPMHSampler(model=model, theta_updater=None, n_iter=5).fit(y)


def test_per_chain_starting_parameters():
    th2 = replace(MODEL_1, p=0.5)
    est = PGASSampler(theta_init=[MODEL_1, th2], theta_updater=None, n_particles=5,
                      n_iter=10, n_chains=2, random_state=0).fit(Y)
    assert est.chains_[0].theta[0, 0] == MODEL_1.p
    assert est.chains_[1].theta[0, 0] == 0.5


def test_run_argument_validation():
    for bad in (dict(n_iter=0), dict(n_iter=5, burn_in=5), dict(n_chains=0), dict(thin=0),
                dict(random_state=-1)):
        with pytest.raises(ConfigurationError):
            PGASSampler(n_particles=4, **{"n_iter": 5, **bad}).fit(Y)
    with pytest.raises(ConfigurationError):
        PMPMHSampler(model="blowfly", n_iter=5).fit(Y)


def test_blowfly_sampler():
    _, data = simulate_blowfly(BLOWFLY_THETA, 12, derive_stream(52))
    for method in ("pmpmh", "pgas"):
        est = BlowflySampler(method=method, n_iter=12, n_particles=10, thin=1,
                             random_state=4).fit(data)
        assert est.predict().shape == (12 + 7,)
        assert est.theta_mean_.shape == (5,)
    with pytest.raises(ConfigurationError):
        BlowflySampler(method="smc").fit(data)
    with pytest.raises(ConfigurationError):
        BlowflySampler().fit(data.y)
