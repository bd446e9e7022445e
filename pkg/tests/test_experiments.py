import math

import numpy as np
import pytest
from scipy import stats

from glines.experiments import (
    AssumptionViolated, BadOrdering, EmptyEvent, FullEvent, NotFavorable, OracleMissing,
    SeparationParams, SupAbsEvent, bridge_orthant_log_probability, canonical_separation,
    enlarged_interval, epsilon_oracle, favorable_triple, gaussian_tail_check, midpoint_check,
    midpoint_point, parabola_layers, reweighting_f1, reweighting_f2, run_calibration,
    run_core_inequality, run_denominator, run_favorable_frequency, run_numerator,
    run_separation, sample_bridge_orthant, sigma_quantities, threshold_for_epsilon,
)
from glines.geometry import box_grid, schedule_for_scale
from glines.grid_paths import BoundaryData, Grid, Path, RngStream, bridge_values
from glines.samplers import ChainSettings, SurrogateSpec
from glines.weights import HamiltonianSpec

from oracles import kolmogorov_bridge_tail


# --- variance quantities --------------------------------------------------

def test_sigma_symmetric_example():
    sig = sigma_quantities(-2.0, -1.0, 0.0, 1.0, 2.0)
    assert sig["sigma1_sq"] == sig["sigma2_sq"] == sig["sigma3_sq"] == 0.5
    assert sig["sigma4_sq"] == 0.25
    assert sig["alpha"] == sig["beta"] == 0.5


def test_sigma_degenerate_limit():
    sig = sigma_quantities(-2.0, -1e-12, 0.0, 1.0, 2.0)
    assert sig["sigma3_sq"] < 1e-11 and sig["sigma1_sq"] < 1e-11


@pytest.mark.parametrize("args", [(0, 1, 1, 2, 3), (0, 2, 1, 3, 4), (1, 0, 2, 3, 4)])
def test_sigma_rejects_bad_ordering(args):
    with pytest.raises(BadOrdering):
        sigma_quantities(*args)


def _admissible_ordering(rng):
    """A pole in ``(0, s)`` with neighbours at least ``s`` away and the
    enlarged interval around it."""
    s = rng.uniform(0.1, 3.0)
    p0 = rng.uniform(0.0, s)
    q1, q2 = enlarged_interval(p0, s)
    return p0 - s - rng.exponential(s), q1, p0, q2, p0 + s + rng.exponential(s)


def test_sigma_inequalities_on_random_orderings():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        sig = sigma_quantities(*_admissible_ordering(rng))
        s1, s2, s3, s4 = (sig[f"sigma{i}_sq"] for i in range(1, 5))
        a, b = sig["alpha"], sig["beta"]
        tol = 1e-12 * s3
        assert s3 / 4 - tol <= s4 <= s3 + tol
        assert math.isclose(s4, a * a * s1 + b * b * s2, rel_tol=1e-12)
        assert a * math.sqrt(s1) + b * math.sqrt(s2) <= 2 * math.sqrt(s3) * (1 + 1e-12)


def test_sigma_upper_bound_holds_for_any_ordering():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        pts = np.sort(rng.uniform(-10, 10, 5))
        if np.any(np.diff(pts) <= 0):
            continue
        sig = sigma_quantities(*pts)
        assert sig["sigma4_sq"] <= sig["sigma3_sq"] * (1 + 1e-12)


def test_enlarged_interval_contains_unit_window():
    q1, q2 = enlarged_interval(0.3, 1.0)
    assert q1 <= 0 and q2 >= 1 and q1 < 0.3 < q2


# --- small deterministic lemmas -------------------------------------------

def test_midpoint_point_is_reached_with_both_slopes():
    x0, b0 = midpoint_point(0.0, 4.0, 1.0, 2.0, 1.5)
    assert math.isclose(b0 - 1.0, 1.5 * (x0 - 0.0))
    assert math.isclose(b0 - 2.0, 1.5 * (4.0 - x0))


def test_midpoint_lower_bound_on_random_configurations():
    rng = np.random.default_rng(11)
    for i in range(20):
        x1 = rng.uniform(-3, 0)
        x2 = x1 + rng.uniform(0.2, 4)
        m = rng.uniform(0.05, 1.5)
        b1 = rng.normal()
        b2 = b1 + rng.uniform(-1, 1) * m * (x2 - x1)
        p, bound = midpoint_check(x1, x2, b1, b2, m, 20_000, i)
        assert p.mean >= bound - 4 * p.stderr


def test_midpoint_needs_reachable_ends():
    with pytest.raises(BadOrdering):
        midpoint_point(0.0, 1.0, 0.0, 5.0, 1.0)


@pytest.mark.parametrize("z", [1.0, 2.0, 5.0, 10.0])
def test_gaussian_tail_bound(z):
    tail, bound = gaussian_tail_check(z)
    assert math.isclose(tail, stats.norm.sf(z), rel_tol=1e-9)
    assert tail >= bound


def test_first_reweighting_is_nondecreasing_above_the_lower_mean():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p_minus, q1, p0 = np.sort(rng.uniform(-5, 5, 3))
        b = tuple(rng.normal(0, 2, 2))
        m1 = (b[0] * (p0 - q1) + b[1] * (q1 - p_minus)) / (p0 - p_minus)
        lower = m1 - rng.exponential(1.0)
        xs = np.linspace(-10, 10, 201)
        assert np.all(np.diff(reweighting_f1(xs, b, p_minus, q1, p0, lower)) >= 0)


def test_second_reweighting_is_nondecreasing_for_an_upward_favoring_penalty():
    pen = lambda paths: np.sum(np.exp(-paths), axis=1) / paths.shape[1]  # noqa: E731
    b = (0.5, 0.0)
    m2 = (b[0] * 1.0 + b[1] * 1.0) / 2.0
    vals = reweighting_f2(np.linspace(-2, 3, 26), b, 0.0, 1.0, 2.0, m2 - 0.3, pen, 12, 4000, 5)
    assert np.all(np.diff(vals) >= 0)


# --- orthant probabilities ------------------------------------------------

def test_orthant_single_point_is_a_normal_tail():
    exact = stats.norm.sf(0.7 / math.sqrt(0.5))
    errs = [abs(math.exp(bridge_orthant_log_probability(0.0, 2.0, 0.0, 0.0, [1.0], [0.7], n))
                / exact - 1) for n in (300, 1200, 4800)]
    # trapezoid error falls by about 16 per quadrupling of the grid
    assert errs[0] < 1e-3 and errs[1] < errs[0] / 8 and errs[2] < errs[1] / 8


def test_orthant_two_points_against_monte_carlo():
    x = np.array([0.0, 0.6, 1.4, 2.0])
    z = RngStream(4).normal((400_000, 2))
    v = bridge_values(x, 0.2, -0.1, z)[:, 1:3]
    hit = np.all(v > [0.3, -0.2], axis=1)
    mc, se = hit.mean(), hit.std() / math.sqrt(len(hit))
    logp = bridge_orthant_log_probability(0.0, 2.0, 0.2, -0.1, [0.6, 1.4], [0.3, -0.2])
    assert abs(math.exp(logp) - mc) < 4 * se


def test_orthant_samples_respect_thresholds_and_match_the_law():
    out = sample_bridge_orthant(0.0, 2.0, 0.0, 0.0, [1.0], [0.0], RngStream(5), 20_000)
    assert np.all(out >= 0)
    # half-normal with variance 1/2 has mean sqrt(1/pi)
    se = out.std() / math.sqrt(len(out))
    assert abs(out.mean() - math.sqrt(1 / math.pi)) < 4 * se + 1e-3


# --- separation -----------------------------------------------------------

def _midpoint_params(T, level, k=1, b2=1.0):
    g = Grid(-T / 2, T / 2, int(8 * T))
    a = tuple(level + (k - j) * math.sqrt(T) for j in range(1, k + 1))
    return SeparationParams(k, -T / 2, T / 2, a, a, Path(g, np.zeros(g.n + 1)), (0.0,), 0.5,
                            T, b2=b2)


def test_high_boundary_separates():
    rep = run_separation(_midpoint_params(4.0, 4.0), 10_000, 1)
    assert rep.estimates["P_L_H"].mean >= 0.5
    assert all(rep.checks.values()), rep.checks


def test_enormous_boundary_always_separates():
    rep = run_separation(_midpoint_params(4.0, 1e3, b2=1e3), 2000, 2)
    assert rep.estimates["P_L_H"].mean == 1.0


def test_separation_tags_and_indicator_algebra():
    rep = run_separation(canonical_separation(2, 4.0), 2000, 3)
    for tag in ("P_free_H", "E_free_W", "P_L_H", "E_Wplus", "P_Gap", "P_G", "P0_Q",
                "m_closed_j1", "m_emp_j2", "sigma0_sq_closed", "sigma0_sq_emp", "bound_Wplus"):
        assert tag in rep.estimates
    assert rep.checks["split_inner"] and rep.checks["split_tail"] and rep.checks["H_within_W"]
    assert rep.checks["conditional_mean_4sigma"] and rep.checks["conditional_variance_4sigma"]


def test_separation_lists_violated_assumptions():
    with pytest.raises(AssumptionViolated) as info:
        run_separation(canonical_separation(1, 4.0, floor_slope=10.0), 100, 0)
    assert info.value.failed == ["lipschitz"]


def test_separation_is_reproducible():
    a = run_separation(canonical_separation(2, 4.0), 1000, 9)
    b = run_separation(canonical_separation(2, 4.0), 1000, 9)
    assert {t: e.mean for t, e in a.estimates.items()} == {t: e.mean for t, e in b.estimates.items()}


# --- favorable triples and the jump ensemble ------------------------------

def _parabola_triple(T=4.0, k=1, n_per_unit=8):
    sched = schedule_for_scale(T, k, c2_scale=6 / T ** 2)
    domain, boundary, fav = favorable_triple(parabola_layers(box_grid(sched, n_per_unit), k), sched)
    return sched, domain, boundary, fav


def test_parabola_input_is_favorable():
    for k in (1, 2, 3):
        assert _parabola_triple(k=k)[3].passed


def test_denominator_ladder_containments():
    sched, domain, boundary, _ = _parabola_triple()
    rep = run_denominator(domain, boundary, sched, HamiltonianSpec(1), 500, 1)
    assert rep.estimates["E_J_Wrest"].mean > 0
    assert rep.estimates["P_J_F_j1"].mean <= rep.estimates["P_J_NoTouch"].mean
    assert all(rep.checks.values()), rep.checks


def test_denominator_rejects_unfavorable_boundary():
    sched, domain, boundary, _ = _parabola_triple()
    raised = BoundaryData(boundary.entrance, boundary.exit,
                          tuple(Path(p.grid, p.values + 5 * sched.T ** 2) if i else p
                                for i, p in enumerate(boundary.layers)))
    with pytest.raises(NotFavorable):
        run_denominator(domain, raised, sched, HamiltonianSpec(1), 10, 1)


def test_numerator_fast_path_ratio_is_one():
    sched, domain, boundary, _ = _parabola_triple()
    event = SupAbsEvent(threshold_for_epsilon(0.1, sched.s, 8, seed=1))
    eps = epsilon_oracle(event, sched.s, 8, 20_000, 2)
    rep = run_numerator(domain, boundary, sched, HamiltonianSpec(1), event, eps, 20_000, 3)
    assert rep.estimates["fast_path"].mean == 1.0
    r = rep.estimates["ratio"]
    assert abs(r.mean - 1) < 4 * r.stderr


def test_numerator_requires_the_oracle():
    sched, domain, boundary, _ = _parabola_triple()
    with pytest.raises(OracleMissing):
        run_numerator(domain, boundary, sched, HamiltonianSpec(1), FullEvent(), None, 10, 1)


def test_epsilon_threshold_hits_its_target():
    c = threshold_for_epsilon(0.1, 1.0, 8, seed=4)
    est = epsilon_oracle(SupAbsEvent(c), 1.0, 8, 50_000, 5)
    assert abs(est.mean - 0.1) < 4 * est.stderr + 4 * math.sqrt(0.09 / 200_000)


def test_continuum_threshold_inverts_the_kolmogorov_tail():
    c = threshold_for_epsilon(0.2)
    assert math.isclose(kolmogorov_bridge_tail(c), 0.2, rel_tol=1e-8)


# --- surrogate experiments ------------------------------------------------

SURROGATE = SurrogateSpec(1, 4.0, chain=ChainSettings(sweeps=60))


def test_core_inequality_trivial_events():
    sched = schedule_for_scale(4.0, 1, c2_scale=6 / 16)
    rep = run_core_inequality(SURROGATE, sched, HamiltonianSpec(1),
                              {"full": FullEvent(), "empty": EmptyEvent()}, 200, 1,
                              n_triples=1, n_jump=200)
    est = rep.estimates
    assert est["LHS_full"].mean == 1.0 and est["RHS_full"].mean >= 1.0
    assert est["LHS_empty"].mean == 0.0 and est["RHS_empty"].mean >= 0.0
    assert rep.checks["LHS_le_RHS_full"] and rep.checks["LHS_le_RHS_empty"]


def test_favorable_frequency_tags():
    sched = schedule_for_scale(4.0, 1, c2_scale=6 / 16)
    rep = run_favorable_frequency(SURROGATE, sched, 100, 2)
    est = rep.estimates
    for tag in ("P_Fav2c", "P_Fav3c", "P_Fav4c", "P_Favc"):
        assert 0.0 <= est[tag].mean <= 1.0
    assert est["P_Fav2c"].mean <= est["P_Favc"].mean or est["P_Favc"].mean == 1.0


def test_calibration_reports_positive_constants():
    sched = schedule_for_scale(4.0, 1)
    rep = run_calibration(SURROGATE, sched, HamiltonianSpec(1), 100, 3, n_triples=1, n_jump=200)
    assert rep.estimates["c2_scale"].mean > 0
    assert rep.estimates["max_deviation_q50"].mean <= rep.estimates["max_deviation_q99"].mean
