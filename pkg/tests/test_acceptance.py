"""End-to-end acceptance criteria C1-C9.

Each test prints one ``C<k> PASS|FAIL: ...`` line before asserting. The
criteria run at full scale, so this module takes tens of minutes on one core.
"""

import itertools
import json

import numpy as np
import pytest
from scipy.stats import chisquare, kstest, norm

from conftest import enumerate_paths, random_hmm
from pmpmh.baselines import csmc_sweep, run_pgas
from pmpmh.cli import main as cli_main
from pmpmh.diagnostics import average_ess, bgr_statistic, summarize
from pmpmh.estimators import chain_stream, make_gridder
from pmpmh.ffbs import backward_sample, forward_filter, path_log_probability
from pmpmh.hmm import floor_and_normalize
from pmpmh.models import (
    BLOWFLY_THETA,
    MODEL_1,
    GaussianMixtureParams,
    kalman_smoother,
    linear_gaussian_testmodel,
    model_1_updater,
    registry,
    sample_posterior,
    simulate_blowfly,
    simulate_gaussian_mixture,
    simulate_linear_gaussian,
)
from pmpmh.models.blowfly import blowfly_grid, run_blowfly_chain
from pmpmh.rng import derive_stream
from pmpmh.sampler import ChainState, HmmCache, WithinCellProposal, run_chain, update_states_sweep
from pmpmh.ssm import BlockScheme
from test_hmm import refinement_errors

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def record(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n{criterion} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, f"{criterion}: {detail}"
    return record


def test_c1_ffbs_exactness(verdict):
    hmm = random_hmm(np.random.default_rng(1), 3, 4)
    filt = forward_filter(hmm)
    paths = list(itertools.product(range(3), repeat=4))
    total = sum(np.exp(path_log_probability(hmm, p, filtered=filt)) for p in paths)
    oracle = enumerate_paths(hmm)
    n = 200_000
    g = derive_stream(101)
    index = {p: i for i, p in enumerate(paths)}
    counts = np.zeros(len(paths))
    for _ in range(n):
        counts[index[tuple(backward_sample(hmm, filt, None, g))]] += 1
    pval = chisquare(counts, n * np.array([oracle[p] for p in paths])).pvalue
    ok = abs(total - 1) < 1e-10 and pval > 0.001
    verdict("C1", ok, f"|sum-1|={abs(total - 1):.2e}, chi2 p={pval:.3f} over 81 paths")


def test_c2_midpoint_refinement(verdict):
    errs = refinement_errors((8, 16, 32))
    ok = errs[0] > errs[1] > errs[2]
    detail = ", ".join(f"N={n}: {e:.4f}" for n, e in zip((8, 16, 32), errs))
    verdict("C2", ok, f"TV errors {detail}")


def test_c3_posterior_matches_kalman(verdict):
    model, th = linear_gaussian_testmodel(0.9, 1.0, 1.0)
    _, y = simulate_linear_gaussian(th, 20, derive_stream(103))
    ms, ps = kalman_smoother(y, th)
    sd = np.sqrt(ps)
    centre = y.mean()
    span = 2 * float(np.max(np.abs(ms - centre) + 4 * sd))
    gridder = make_gridder(1, 20, span=span)
    out = run_chain(model, y, None, gridder, WithinCellProposal(), BlockScheme(20, 4, 1),
                    200_000, derive_stream(104), th, thin=1)
    draws = out.states[1000:]
    mean_err = np.abs(draws.mean(0) - ms)
    var_err = np.abs(draws.var(0) / ps - 1)
    ok = mean_err.max() < 0.05 and var_err.max() < 0.10
    verdict("C3", ok, f"max |mean err|={mean_err.max():.4f} (<0.05), "
                      f"max rel var err={var_err.max():.4f} (<0.10), span={span:.2f}")


def _sweep_invariance(sweep, n=10_000, T=5):
    model, th = linear_gaussian_testmodel(0.9, 1.0, 1.0)
    _, y = simulate_linear_gaussian(th, T, derive_stream(105))
    start = sample_posterior(y, th, n, derive_stream(106))
    g = derive_stream(107)
    moved = np.array([sweep(model, y, th, x.copy(), g) for x in start])
    ms, ps = kalman_smoother(y, th)
    pvals = [kstest(moved[:, t], norm(ms[t], np.sqrt(ps[t])).cdf).pvalue for t in range(T)]
    changed = float(np.mean(np.any(moved != start, axis=1)))
    return pvals, changed


def _pmpmh_sweep(gridder):
    cache = HmmCache()
    blocks = BlockScheme(5, 4, 1)
    proposal = WithinCellProposal()

    def sweep(model, y, th, x, g):
        state = ChainState(x=x, theta=th)
        update_states_sweep(state, model, gridder, proposal, blocks, y, g, cache=cache)
        return state.x
    return sweep


def test_c4_kernel_invariance(verdict):
    runs = {
        "PMPMH approach 1": _pmpmh_sweep(make_gridder(1, 20, span=10.0)),
        "PMPMH approach 3": _pmpmh_sweep(make_gridder(3, 10, span=3.0)),
        "PGAS P=10": lambda model, y, th, x, g: csmc_sweep(model, y, th, x, 10, 0.5, True, g),
    }
    lines, ok = [], True
    for name, sweep in runs.items():
        pvals, changed = _sweep_invariance(sweep)
        ok &= min(pvals) > 0.001 and changed > 0.05
        lines.append(f"{name}: min KS p={min(pvals):.3f}, moved={changed:.2f}")
    verdict("C4", ok, "; ".join(lines))


# scaled Model 1 shared by C5 and C6

M_ITER = 20_000
BURN = M_ITER // 2
INITS = [GaussianMixtureParams(0.5, 0.3, 200.0, 0.3),
         GaussianMixtureParams(0.99, 3.0, 2000.0, 3.0),
         GaussianMixtureParams(0.8, 1.0, 700.0, 1.0),
         GaussianMixtureParams(0.95, 10.0, 100.0, 5.0)]


def model_1_data():
    return simulate_gaussian_mixture(MODEL_1, 600, derive_stream(0, ("data",)))[1][:100]


def starting_states(y):
    return [y + derive_stream(1, ("x0", c)).normal(0.0, s, len(y))
            for c, s in enumerate((0.0, 2.0, 5.0, 10.0))]


def model_1_chains(gridder, block_size, overlap, n_iter=M_ITER, n_chains=4, seed=5, thin=10):
    y = model_1_data()
    spec = registry("gaussian-mixture-1").spec
    xs = starting_states(y)
    return [run_chain(spec, y, model_1_updater(), gridder, WithinCellProposal(5.0, 2.0),
                      BlockScheme(100, block_size, overlap), n_iter, chain_stream(seed, c),
                      INITS[c], xs[c], thin=thin) for c in range(n_chains)]


def max_rhat(outs, burn=BURN):
    return max(bgr_statistic([o.theta[burn:, j] for o in outs]) for j in range(4))


@pytest.fixture(scope="module")
def approach_3_chains():
    return model_1_chains(make_gridder(3, 10, span=3.0), 4, 1)


def test_c5_scaled_model_1(verdict, approach_3_chains):
    outs = approach_3_chains
    rhat = max_rhat(outs)
    eps_pmpmh = float(np.mean(np.concatenate([o.theta[BURN:, 3] for o in outs])))
    y = model_1_data()
    pg = run_pgas(registry("gaussian-mixture-1").spec, y, model_1_updater(), 25, 0.5, M_ITER,
                  chain_stream(6, 0), INITS[2], y)
    eps_pgas = float(pg.theta[BURN:, 3].mean())
    rel = abs(eps_pmpmh - eps_pgas) / eps_pgas
    ok = rhat < 1.1 and rel < 0.10
    verdict("C5", ok, f"max R-hat={rhat:.3f} (<1.1); sigma2_eps mean PMPMH={eps_pmpmh:.4f}, "
                      f"PGAS={eps_pgas:.4f}, rel diff={rel:.3f} (<0.10)")


def test_c6_block_size_and_equal_grid(verdict, approach_3_chains):
    n = 3000
    ess = {}
    for ell, overlap in ((1, 0), (4, 1)):
        out = model_1_chains(make_gridder(3, 10, span=3.0), ell, overlap, n_iter=n, n_chains=1,
                             seed=8, thin=1)
        ess[ell] = average_ess(summarize(out, burn_in=n // 10))["states"]["ess"]
    rhat_equal = max_rhat(model_1_chains(make_gridder(1, 10, span=5.0), 4, 1))
    rhat_state = max_rhat(approach_3_chains)
    ok = ess[1] < ess[4] and rhat_equal >= 1.1 and rhat_state < 1.1
    verdict("C6", ok, f"avg state ESS l=1: {ess[1]:.0f} < l=4: {ess[4]:.0f}; "
                      f"R-hat approach 1 S=5: {rhat_equal:.3f} (>=1.1), "
                      f"approach 3 S=3: {rhat_state:.3f} (<1.1)")


def blowfly_c7_data():
    """T=60 truncation of the first simulated series with positive counts throughout."""
    for seed in itertools.count():
        _, data = simulate_blowfly(BLOWFLY_THETA, 300, derive_stream(seed, ("blowfly-sim",)))
        if np.all(data.y[:60] > 0):
            return seed, data


def test_c7_blowfly(verdict):
    bad_invariants = 0
    for seed in range(20):
        state, data = simulate_blowfly(BLOWFLY_THETA, 300, derive_stream(seed, ("c7",)))
        n_prev = np.concatenate(([data.n0], state.N[:-1]))
        good = (np.array_equal(state.N, state.S + state.R) and np.all(state.R[:data.tau] == 0)
                and np.all((state.S >= 0) & (state.S <= n_prev) & (state.R >= 0)))
        bad_invariants += not good
    seed, data = blowfly_c7_data()
    data = data.truncate(60)
    out = run_blowfly_chain(data, BLOWFLY_THETA, 5000, derive_stream(109),
                            blowfly_grid(20, 0.25, 0.01), WithinCellProposal(), 4, 1, thin=10)
    rates = out.acceptance_rates
    finite = bool(np.all(np.isfinite(out.log_posterior)))
    ok = bad_invariants == 0 and finite and rates.min() > 0.01 and rates.max() < 0.99
    verdict("C7", ok, f"invariant violations={bad_invariants}/20; data seed {seed}; "
                      f"acceptance in [{rates.min():.3f}, {rates.max():.3f}] over "
                      f"{len(rates)} blocks; log-posterior finite={finite}")


def test_c8_floor_contract(verdict):
    g = np.random.default_rng(108)
    worst_sum, worst_min = 0.0, np.inf
    for _ in range(10_000):
        N = int(g.integers(1, 300))
        kind = g.integers(4)
        if kind == 0:
            w = g.random(N)
        elif kind == 1:
            w = g.exponential(size=N) ** 8
        elif kind == 2:
            w = np.where(g.random(N) < 0.8, 0.0, g.random(N))
            w[g.integers(N)] = 1.0
        else:
            w = 10.0 ** g.uniform(-300, 300, N)
        p = floor_and_normalize(w)
        worst_sum = max(worst_sum, abs(p.sum() - 1))
        worst_min = min(worst_min, p.min() - 0.01 / (1 + 0.01 * N))
    ok = worst_sum <= 1e-12 and worst_min >= 0
    verdict("C8", ok, f"max |sum-1|={worst_sum:.1e}, min slack over bound={worst_min:.2e}")


DETERMINISM_CONFIGS = {
    "pmpmh-approach-1": {"sampler": "pmpmh", "pmpmh": {"approach": 1, "N": 10, "span": 60.0}},
    "pmpmh-approach-2": {"sampler": "pmpmh", "pmpmh": {"approach": 2, "N": 10, "span": 3.0}},
    "pmpmh-approach-3": {"sampler": "pmpmh", "pmpmh": {"approach": 3, "N": 10, "span": 3.0}},
    "pg": {"sampler": "pg", "baseline": {"particles": 10}},
    "pgas": {"sampler": "pgas", "baseline": {"particles": 10}},
    "blowfly-pmpmh": {"model": {"name": "blowfly"}, "sampler": "pmpmh"},
    "blowfly-pgas": {"model": {"name": "blowfly"}, "sampler": "pgas",
                     "baseline": {"particles": 20}},
    "blowfly-pg": {"model": {"name": "blowfly"}, "sampler": "pg",
                   "baseline": {"particles": 20}},
}


def test_c9_determinism(verdict, tmp_path):
    mismatched = []
    for name, extra in DETERMINISM_CONFIGS.items():
        files = []
        for rep in ("a", "b"):
            cfg = {"model": {"name": "gaussian-mixture-1"},
                   "data": {"simulate": {"T": 40, "seed": 3}},
                   "run": {"iterations": 30, "chains": 1, "seed": 11, "thin": 3},
                   "output": {"directory": f"{name}-{rep}"}, **extra}
            path = tmp_path / f"{name}-{rep}.json"
            path.write_text(json.dumps(cfg))
            assert cli_main(["--quiet", "run", str(path)]) == 0
            files.append((tmp_path / f"{name}-{rep}" / "chain_0.csv").read_bytes())
        if files[0] != files[1]:
            mismatched.append(name)
    ok = not mismatched
    verdict("C9", ok, f"{len(DETERMINISM_CONFIGS) - len(mismatched)}/{len(DETERMINISM_CONFIGS)} "
                      f"samplers bit-identical" + (f"; differ: {mismatched}" if mismatched else ""))
