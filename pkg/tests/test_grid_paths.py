import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glines.grid_paths import (
    DegenerateInterval, DomainMismatch, DomainSpec, LineEnsemble,
    NonPositiveSpan, OffGrid, Path, RngStream, ZeroSteps, affine_residual,
    boundary_from_layers, bridge_conditional_law, bridge_part, make_grid, sample_bridge,
    sample_bridges,
)

from helpers import mean_z, var_z
from oracles import bridge_covariance, bridge_moments


# --- grids and paths ------------------------------------------------------

def test_unit_grid_points():
    g = make_grid(0, 1, 4)
    assert np.allclose(g.points, [0, 0.25, 0.5, 0.75, 1])


def test_symmetric_grid_step_and_size():
    g = make_grid(-2, 2, 8)
    assert g.step == 0.5
    assert len(g.points) == 9


def test_degenerate_span_rejected():
    with pytest.raises(NonPositiveSpan):
        make_grid(1, 1, 4)


def test_zero_steps_rejected():
    with pytest.raises(ZeroSteps):
        make_grid(0, 1, 0)


def test_index_of_requires_grid_point():
    g = make_grid(0, 1, 4)
    assert g.index_of(0.75) == 3
    with pytest.raises(OffGrid):
        g.index_of(0.3)


def test_sub_grid_shares_step():
    g = make_grid(-2, 2, 8)
    s = g.sub(2, 6)
    assert (s.a, s.b, s.n) == (-1.0, 1.0, 4)
    with pytest.raises(DegenerateInterval):
        g.sub(3, 3)


def test_path_is_read_only_and_finite():
    g = make_grid(0, 1, 2)
    p = Path(g, [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        p.values[0] = 5
    with pytest.raises(ValueError):
        Path(g, [0.0, math.nan, 1.0])
    with pytest.raises(DomainMismatch):
        Path(g, [0.0, 1.0])


def test_domain_ordering():
    dom = DomainSpec(2, (-3.0, -2.0), (3.0, 2.0), -4.0, 4.0)
    assert dom.ordering_ok(1.0)
    assert not dom.ordering_ok(2.5)


def test_boundary_consistency_with_layers():
    g = make_grid(-4, 4, 16)
    layers = [Path(g, -0.5 * g.points ** 2), Path(g, -0.5 * g.points ** 2 - 1)]
    dom = DomainSpec(1, (-2.0,), (2.0,), -4.0, 4.0)
    b = boundary_from_layers(layers, dom)
    assert b.k == 1
    assert b.entrance == (-2.0,) and b.exit == (-2.0,)
    assert b.consistent_with(dom)


def test_ensemble_curve_spans_must_match_domain():
    g = make_grid(-4, 4, 16)
    dom = DomainSpec(1, (-2.0,), (2.0,), -4.0, 4.0)
    good = Path(g.sub(4, 12), np.zeros(9))
    LineEnsemble(dom, (good,))
    with pytest.raises(DomainMismatch):
        LineEnsemble(dom, (Path(g, np.zeros(17)),))


# --- streams --------------------------------------------------------------

def test_stream_is_a_pure_function_of_its_key():
    a = RngStream(7, 3, "x").normal(5)
    b = RngStream(7, 3, "x").normal(5)
    c = RngStream(7, 4, "x").normal(5)
    d = RngStream(7, 3, "y").normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


# --- bridges --------------------------------------------------------------

def test_conditional_law_examples():
    assert bridge_conditional_law(0, 1, 0, 0, 0.5) == (0.0, 0.25)
    assert bridge_conditional_law(0, 1, 0, 0, 0) == (0.0, 0.0)
    assert bridge_conditional_law(0, 2, 0, 2, 1) == (1.0, 0.5)


def test_conditional_law_rejects_bad_interval():
    with pytest.raises(DegenerateInterval):
        bridge_conditional_law(1, 1, 0, 0, 1)


def test_endpoints_pinned_exactly():
    g = make_grid(0, 1, 10)
    p = sample_bridge(g, 0.3, -1.7, RngStream(1))
    assert p.values[0] == 0.3 and p.values[-1] == -1.7


def test_symmetric_bridge_midpoint_moments():
    g = make_grid(0, 1, 8)
    s = sample_bridges(g.points, 0.0, 0.0, RngStream(11), 100_000)[:, 4]
    assert abs(mean_z(s, 0.0)) < 4
    assert abs(var_z(s, 0.25)) < 4


def test_sloped_bridge_moments_match_closed_form():
    g = make_grid(0, 2, 8)
    s = sample_bridges(g.points, 0.0, 2.0, RngStream(12), 100_000)[:, 4]
    mean, var = bridge_conditional_law(0, 2, 0, 2, 1)
    assert abs(mean_z(s, mean)) < 4
    assert abs(var_z(s, var)) < 4


def test_random_configurations_match_closed_form():
    rng = np.random.default_rng(5)
    for case in range(20):
        ell = rng.uniform(-5, 0)
        r = ell + rng.uniform(0.5, 5)
        a, b = rng.normal(0, 3, 2)
        n = 16
        g = make_grid(ell, r, n)
        i = int(rng.integers(1, n))
        q = g.point(i)
        s = sample_bridges(g.points, a, b, RngStream(100, case), 100_000)[:, i]
        mean, var = bridge_conditional_law(ell, r, a, b, q)
        oracle_mean, oracle_var = bridge_moments(ell, r, a, b, q)
        assert math.isclose(mean, oracle_mean, abs_tol=1e-12)
        assert math.isclose(var, oracle_var, abs_tol=1e-12)
        assert abs(mean_z(s, mean)) < 4
        assert abs(var_z(s, var)) < 4


def test_standard_bridge_covariance():
    g = make_grid(0, 1, 10)
    s = sample_bridges(g.points, 0.0, 0.0, RngStream(13), 100_000)
    for i, j in [(2, 5), (3, 8), (5, 5)]:
        prod = s[:, i] * s[:, j]
        assert abs(mean_z(prod, bridge_covariance(0, 1, g.point(i), g.point(j)))) < 4


def test_refinement_gives_same_marginal():
    coarse = make_grid(0, 1, 4)
    fine = make_grid(0, 1, 8)
    a = sample_bridges(coarse.points, 0.0, 1.0, RngStream(20), 100_000)[:, 2]
    b = sample_bridges(fine.points, 0.0, 1.0, RngStream(21), 100_000)[:, 4]
    for s in (a, b):
        assert abs(mean_z(s, 0.5)) < 4
        assert abs(var_z(s, 0.25)) < 4


# --- bridge part ----------------------------------------------------------

def test_bridge_part_of_affine_path_vanishes():
    g = make_grid(-1, 3, 8)
    p = Path(g, 2.0 * g.points - 1.0)
    assert np.allclose(bridge_part(p, -1, 3).values, 0.0, atol=1e-14)


def test_bridge_part_fixes_pinned_path():
    g = make_grid(0, 1, 8)
    p = Path(g, np.sin(np.pi * g.points))
    p = Path(g, p.values - np.linspace(p.values[0], p.values[-1], 9))
    assert np.allclose(bridge_part(p, 0, 1).values, p.values, atol=1e-15)


def test_bridge_part_of_square():
    g = make_grid(0, 1, 4)
    out = bridge_part(Path(g, g.points ** 2), 0, 1)
    assert math.isclose(out.at(0.5), -0.25)


def test_bridge_part_on_subinterval_has_sub_grid():
    g = make_grid(0, 2, 8)
    out = bridge_part(Path(g, g.points ** 3), 0.5, 1.5)
    assert (out.grid.a, out.grid.b, out.grid.n) == (0.5, 1.5, 4)


# --- properties -----------------------------------------------------------

finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 60), finite, finite, st.integers(0, 2 ** 31))
def test_sampled_bridges_are_pinned(n, xa, xb, seed):
    g = make_grid(0, 1, n)
    p = sample_bridge(g, xa, xb, RngStream(seed))
    assert p.values[0] == xa and p.values[-1] == xb


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=2, max_size=40))
def test_bridge_part_is_pinned_and_idempotent(values):
    v = np.array(values)
    once = affine_residual(v)
    assert once[0] == 0.0 and once[-1] == 0.0
    assert np.allclose(affine_residual(once), once, atol=1e-9 * (1 + np.abs(v).max()))


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=2, max_size=40), finite, finite)
def test_bridge_part_ignores_added_affine(values, slope, shift):
    v = np.array(values)
    t = np.arange(len(v))
    scale = 1e-9 * (1 + np.abs(v).max() + abs(slope) * len(v) + abs(shift))
    assert np.allclose(affine_residual(v + slope * t + shift), affine_residual(v), atol=scale)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(0.1, 10), finite, finite, st.floats(0, 1))
def test_conditional_variance_is_nonnegative_and_vanishes_at_ends(ell, width, a, b, frac):
    r = ell + width
    q = ell + frac * width
    mean, var = bridge_conditional_law(ell, r, a, b, q)
    assert var >= 0
    assert min(a, b) - 1e-9 <= mean <= max(a, b) + 1e-9
    assert bridge_conditional_law(ell, r, a, b, ell)[1] == 0
