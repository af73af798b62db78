import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from pmpmh.exceptions import ConfigurationError, DegenerateGridError
from pmpmh.grid import (
    DataQuantileGrid,
    EqualGrid,
    Grid,
    StateQuantileGrid,
    build_data_quantile_grid,
    build_equal_grid,
    build_state_quantile_grid,
    cell_geometry,
    cut_probabilities,
    locate_cell,
    locate_path,
    sigma_for_span,
)


def test_equal_grid_centred_on_zero():
    g = build_equal_grid(np.array([-1.0, 1.0, 0.0]), 4, 2.0)
    for t in range(3):
        assert np.allclose(g.cut_points(t), [-1.0, 0.0, 1.0], atol=1e-15)
    assert g.cell_bounds(0, 0) == (-np.inf, -1.0)
    assert g.cell_bounds(0, 3) == (1.0, np.inf)
    assert g.artificial_length[0] == pytest.approx(1.0)


def test_equal_grid_translates_with_mean():
    g = build_equal_grid(np.full(4, 5.0), 4, 2.0)
    assert np.allclose(g.cut_points(2), [4.0, 5.0, 6.0])


def test_equal_grid_model_1_span():
    y = np.random.default_rng(0).normal(size=600)
    g = build_equal_grid(y, 50, 350.0)
    _, lens = g.geometry(0)
    assert len(lens) == 50
    assert np.allclose(lens[1:-1], 350.0 / 48, atol=1e-12)
    assert g.artificial_length[0] == pytest.approx(350.0 / 48)


def test_equal_grid_needs_three_cells():
    with pytest.raises(ConfigurationError):
        build_equal_grid(np.zeros(3), 2, 1.0)
    with pytest.raises(ConfigurationError):
        EqualGrid(2, 1.0)
    with pytest.raises(ConfigurationError):
        build_equal_grid(np.zeros(3), 4, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 60), st.floats(0.1, 1000.0), st.floats(-1e3, 1e3))
def test_equal_grid_is_homogeneous_with_equal_cells(N, span, centre):
    g = build_equal_grid(np.full(5, centre), N, span)
    assert all(np.array_equal(g.cut_points(0), g.cut_points(t)) for t in range(5))
    _, lens = g.geometry(3)
    assert np.allclose(lens[1:-1], span / (N - 2), rtol=1e-12, atol=1e-12 * abs(centre))


def test_data_quantile_grid_symmetric_about_zero():
    sigma = 1.0 / norm.ppf(0.75)
    g = build_data_quantile_grid(np.zeros(2), 4, sigma)
    c = g.cut_points(0)
    assert c[1] == 0.0
    assert c[0] == pytest.approx(-1.0) and c[2] == pytest.approx(1.0)


def test_data_quantile_grid_location_shift():
    g0 = build_data_quantile_grid(np.array([0.0]), 6, 2.0)
    g1 = build_data_quantile_grid(np.array([10.0]), 6, 2.0)
    assert np.allclose(g1.cut_points(0) - g0.cut_points(0), 10.0, atol=1e-12)


def test_data_quantile_grid_normal_quantiles():
    g = build_data_quantile_grid(np.array([0.0]), 5, 1.0)
    assert np.allclose(g.cut_points(0), [-0.8416, -0.2533, 0.2533, 0.8416], atol=5e-5)
    assert np.allclose(g.cut_points(0), norm.ppf([0.2, 0.4, 0.6, 0.8]), atol=1e-12)


def test_data_quantile_grid_artificial_length_is_mean_finite_length():
    g = build_data_quantile_grid(np.array([3.0, -1.0]), 5, 1.0)
    for t in range(2):
        c = g.cut_points(t)
        assert g.artificial_length[t] == pytest.approx(np.diff(c).mean())


def test_integer_rounding_degenerate():
    with pytest.raises(DegenerateGridError):
        build_data_quantile_grid(np.array([5.0]), 5, 0.01, integer_states=True)


def test_state_grid_uniform_mode_matches_data_grid():
    a = build_state_quantile_grid(np.array([0.0]), 5, 1.0)
    b = build_data_quantile_grid(np.array([0.0]), 5, 1.0)
    assert np.array_equal(a.cut_points(0), b.cut_points(0))


def test_state_grid_count_mode_range():
    gridder = StateQuantileGrid(20, proportionality=0.25, q=0.01, integer_states=True,
                                clamp_lower_at_zero=True)
    g = gridder.build(None, np.array([100.0]), None)
    c = g.cut_points(0)
    lo = round(100 - norm.ppf(0.99) * 5)
    hi = round(100 + norm.ppf(0.99) * 5)
    assert (c[0], c[-1]) == (lo, hi) == (88, 112)
    assert np.all(c == np.round(c))


def test_state_grid_clamped_support_starts_at_zero():
    g = build_state_quantile_grid(np.array([2.0]), 6, np.sqrt(2 * 0.5), integer_states=True,
                                  clamp_lower_at_zero=True, q=0.2)
    assert g.lower == 0.0
    assert g.cell_bounds(0, 0)[0] == 0.0
    assert np.all(g.cut_points(0) >= 0)


def test_state_grid_clamps_negative_cuts_to_zero():
    # N(1, 4) between its 0.2 and 0.8 quantiles rounds to -1, 0, 1, 2, 3
    g = build_state_quantile_grid(np.array([1.0]), 6, 2.0, integer_states=True,
                                  clamp_lower_at_zero=True, q=0.2)
    c = g.cut_points(0)
    assert g.lower == 0.0
    assert c[0] == 0.0
    assert np.all(np.diff(c) > 0)
    assert len(c) + 1 < 6
    assert locate_cell(g, 0, 0) == 0


def test_state_grid_needs_one_scale():
    with pytest.raises(ConfigurationError):
        StateQuantileGrid(5)
    with pytest.raises(ConfigurationError):
        StateQuantileGrid(5, sigma=1.0, proportionality=0.5)


def test_proportional_scale_floor():
    gridder = StateQuantileGrid(5, proportionality=0.25)
    assert np.allclose(gridder.scales(None, np.array([0.0, 0.5, 4.0])), [0.5, 0.5, 1.0])


def test_callable_sigma():
    gridder = DataQuantileGrid(5, lambda th, y: np.sqrt(th) * np.ones_like(y))
    g = gridder.build(np.array([0.0, 1.0]), None, 4.0)
    assert np.allclose(g.cut_points(0), 2.0 * norm.ppf([0.2, 0.4, 0.6, 0.8]))


def test_sigma_for_span():
    s = sigma_for_span(3.0, 10)
    p = cut_probabilities(10)
    assert s * (norm.ppf(p[-1]) - norm.ppf(p[0])) == pytest.approx(3.0)
    s = sigma_for_span(3.0, 10, 0.05)
    assert s * 2 * norm.ppf(0.95) == pytest.approx(3.0)


def test_locate_cell_examples():
    g = build_equal_grid(np.zeros(3), 4, 2.0)
    # cells are 0-based: (-inf,-1] is 0, (-1,0] is 1, (0,1] is 2, (1,inf) is 3
    assert locate_cell(g, 0, 0.5) == 2
    assert locate_cell(g, 0, 0.0) == 1
    assert locate_cell(g, 0, -1.0) == 0
    assert locate_cell(g, 0, -100.0) == 0
    assert locate_cell(g, 0, 1.0000001) == 3


def test_cell_geometry_examples():
    g = build_equal_grid(np.zeros(1), 4, 2.0)
    assert cell_geometry(g, 0, 2) == (0.5, 1.0)
    assert cell_geometry(g, 0, 0) == (-1.5, 1.0)
    assert cell_geometry(g, 0, 3) == (1.5, 1.0)
    g2 = Grid(cuts=(np.array([-1.0, 1.0]),), artificial_length=2.0)
    assert cell_geometry(g2, 0, 2) == (2.0, 2.0)
    with pytest.raises(IndexError):
        cell_geometry(g, 0, 4)


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        Grid(cuts=(np.array([1.0, 0.0]),), artificial_length=1.0)
    with pytest.raises(ConfigurationError):
        Grid(cuts=(np.array([0.0, 1.0]),), artificial_length=0.0)
    with pytest.raises(ConfigurationError):
        Grid(cuts=(np.array([]),), artificial_length=1.0)


def test_integer_grid_geometry():
    g = Grid(cuts=(np.array([2.0, 5.0]),), artificial_length=3.0, lower=0.0, integer=True)
    mids, lens = g.geometry(0)
    # cells {0,1,2}, {3,4,5}, {6,...}
    assert list(lens[:2]) == [3.0, 3.0]
    assert mids[0] == 1.0 and mids[1] == 4.0
    assert mids[2] >= 6.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12, unique=True),
       st.lists(st.floats(-100, 100), min_size=1, max_size=20))
def test_locate_cell_is_unique_containment(raw_cuts, xs):
    cuts = np.sort(np.array(raw_cuts))
    if np.any(np.diff(cuts) <= 0):
        return
    g = Grid(cuts=(cuts,), artificial_length=1.0)
    for x in xs:
        n = locate_cell(g, 0, x)
        hits = []
        for k in range(len(cuts) + 1):
            lo, hi = g.cell_bounds(0, k)
            if (lo < x or (k == 0 and lo <= x)) and x <= hi:
                hits.append(k)
        assert hits == [n]


@settings(max_examples=40, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(0.1, 50), st.integers(3, 30))
def test_quantile_grid_shift(shift, sigma, N):
    a = build_state_quantile_grid(np.array([0.0]), N, sigma)
    b = build_state_quantile_grid(np.array([shift]), N, sigma)
    assert np.allclose(b.cut_points(0) - a.cut_points(0), shift, atol=1e-9 * (1 + abs(shift)))


def test_locate_path_matches_locate_cell():
    g = build_state_quantile_grid(np.linspace(0, 5, 8), 7, 1.3)
    xs = np.random.default_rng(4).normal(2.5, 3, 8)
    assert list(locate_path(g, 0, xs)) == [locate_cell(g, t, x) for t, x in enumerate(xs)]
    gi = build_state_quantile_grid(np.linspace(3, 40, 8), 7, 2.0, integer_states=True,
                                   clamp_lower_at_zero=True)
    xi = np.rint(np.abs(xs) * 5)
    assert list(locate_path(gi, 0, xi)) == [locate_cell(gi, t, x) for t, x in enumerate(xi)]
