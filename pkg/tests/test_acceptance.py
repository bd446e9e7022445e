"""One test per acceptance criterion, all seeded from 2024.

Each test prints a ``PASS``/``FAIL`` line with the measured quantities and
the wall time, then asserts the criterion at its pinned tolerance.
"""

import math
import time

import numpy as np
import pytest

from glines.cli import main, read_results
from glines.experiments import (
    SupAbsEvent, canonical_separation, enlarged_interval, epsilon_oracle, favorable_triple,
    parabola_layers, run_core_inequality, run_numerator, run_separation, sigma_quantities,
    threshold_for_epsilon,
)
from glines.geometry import (
    BUNDLE_INVARIANTS, box_grid, build_pole_tent, check_bundle, concave_majorant,
    schedule_for_scale, stopping_domain,
)
from glines.grid_paths import (
    BoundaryData, DomainSpec, LineEnsemble, Path, RngStream, boundary_from_layers,
    bridge_conditional_law, make_grid, sample_bridges,
)
from glines.samplers import (
    ChainSettings, DominanceConfig, SurrogateSpec, dominance_test, gibbs_resample,
    rejection_sample_batch, sample_surrogate, sample_weighted_bridges, surrogate_layers,
)
from glines.weights import (
    HamiltonianSpec, WeightLayout, chain_interaction, chain_weakened, ensemble_array,
    exp_chain_gap, log_weight_decomposition,
)

import lemma_checks
from configs import favorable_configuration, random_ensemble
from helpers import mean_z, report, two_sample_mean_z, two_sample_var_z, var_z
from oracles import bridge_covariance, brute_force_majorant, truncated_normal_moments

SEED = 2024
Z = 4.0


def _check(name, ok, detail, started):
    report(name, ok, f"{detail} ({time.perf_counter() - started:.1f} s)")
    assert ok, detail


def test_criterion_01_bridge_correctness():
    t0 = time.perf_counter()
    n = 100_000
    worst = 0.0
    rng = np.random.default_rng(SEED)
    for case in range(5):
        ell = rng.uniform(-3, 0)
        r = ell + rng.uniform(0.5, 4)
        a, b = rng.normal(0, 2, 2)
        g = make_grid(ell, r, 10)
        s = sample_bridges(g.points, a, b, RngStream(SEED, case, "c1"), n)
        for i in (2, 5, 8):
            mean, var = bridge_conditional_law(ell, r, a, b, g.point(i))
            worst = max(worst, abs(mean_z(s[:, i], mean)), abs(var_z(s[:, i], var)))
    g = make_grid(0, 1, 10)
    s = sample_bridges(g.points, 0.0, 0.0, RngStream(SEED, 99, "c1-cov"), n)
    for i, j in ((2, 5), (3, 8), (1, 9), (4, 6)):
        cov = bridge_covariance(0, 1, g.point(i), g.point(j))
        worst = max(worst, abs(mean_z(s[:, i] * s[:, j], cov)))
    elapsed = time.perf_counter() - t0
    _check("C1 bridge moments and covariance", worst < Z and elapsed < 10,
           f"max |z| = {worst:.2f}", t0)


def test_criterion_02_hull_matches_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst, hull_time = 0.0, 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        x = np.sort(rng.uniform(-10, 10, n))
        x = np.unique(x)
        y = rng.normal(0, rng.uniform(0.1, 10), len(x))
        if rng.uniform() < 0.3:
            y = y - rng.uniform(0.1, 2) * x ** 2
        t = time.perf_counter()
        hull = concave_majorant(x, y)
        h = hull(x)
        hull_time += time.perf_counter() - t
        ref = brute_force_majorant(x, y)
        worst = max(worst, float(np.max(np.abs(h - ref))))
    _check("C2 hull vs brute-force majorant", worst <= 1e-9 and hull_time < 10,
           f"max abs diff = {worst:.2e}, hull time {hull_time:.2f} s", t0)


def test_criterion_03_concave_lemma_suite():
    t0 = time.perf_counter()
    checks = {
        "slope": lemma_checks.slope_instance,
        "majorant_restriction": lemma_checks.majorant_restriction_instance,
        "tent_lower_bound": lemma_checks.tent_lower_bound_instance,
        "tent_modification": lemma_checks.tent_modification_instance,
        "contact": lemma_checks.contact_instance,
    }
    counts = {}
    for i, (name, fn) in enumerate(checks.items()):
        rng = np.random.default_rng([SEED, i])
        counts[name] = sum(fn(rng) for _ in range(1000))
    elapsed = time.perf_counter() - t0
    _check("C3 concave-function lemmas", sum(counts.values()) == 0 and elapsed < 30,
           f"violations {counts}", t0)


def test_criterion_04_chain_inequalities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    bad, worst_eq = 0, 0.0
    for k in range(1, 7):
        y = rng.uniform(-20, 20, (10_000, k + 1))
        lhs, rhs = exp_chain_gap(y)
        bad += int(np.sum(lhs > rhs + 1e-12 * np.abs(rhs)))
        for t in (1, 8, 27):
            spec = HamiltonianSpec(t)
            bad += int(np.sum(chain_weakened(spec, y) > chain_interaction(spec, y) * (1 + 1e-12)))
        start, step = rng.uniform(-5, 5, 1000), rng.uniform(-3, 3, 1000)
        prog = start[:, None] + step[:, None] * np.arange(k + 1)
        lhs, rhs = exp_chain_gap(prog)
        worst_eq = max(worst_eq, float(np.max(np.abs(lhs - rhs) / np.abs(rhs))))
    elapsed = time.perf_counter() - t0
    _check("C4 chain inequalities", bad == 0 and worst_eq <= 1e-12 and elapsed < 5,
           f"violations {bad}, progression rel err {worst_eq:.1e}", t0)


def test_criterion_05_weight_decomposition():
    t0 = time.perf_counter()
    spec = HamiltonianSpec(1)
    configs, violations, seed = 0, 0, 0
    boundaries = 0
    while configs < 1000:
        k = 1 + seed % 3
        cfg = favorable_configuration(k, 10.0, SEED + seed)
        seed += 1
        if cfg is None:
            continue
        boundaries += 1
        dom, b, sched, bundle = cfg
        grid = bundle.g_under.grid
        layout = WeightLayout(dom, b, grid, spec, bundle.joint_poles, bundle.d, bundle.dprime)
        for e in range(20):
            ens = random_ensemble(dom, b, grid, SEED * 1000 + 20 * seed + e, (0.3, 1.0, 3.0)[e % 3])
            w = log_weight_decomposition(ens, b, bundle, spec, bundle.d, bundle.dprime)
            ok = w.log_full <= w.log_jump <= 0 and w.log_rest <= 0
            full_cells, _ = layout.cell_integrals(ensemble_array(ens, grid))
            raw = layout.unguarded_jump_cells(ensemble_array(ens, grid))
            ok &= bool(np.all(raw <= full_cells * (1 + 1e-12) + 1e-300))
            violations += int(not ok)
            configs += 1
    elapsed = time.perf_counter() - t0
    _check("C5 weight decomposition", violations == 0 and elapsed < 60,
           f"{configs} configurations on {boundaries} boundaries, violations {violations}", t0)


def test_criterion_06_bundle_invariants():
    t0 = time.perf_counter()
    T = 10.0
    failures = {name: 0 for name in BUNDLE_INVARIANTS}
    total = 0
    for k, count in ((1, 34), (2, 33), (3, 33)):
        surrogate = SurrogateSpec(k, T, n_per_unit=32, chain=ChainSettings(sweeps=200))
        sched = schedule_for_scale(T, k, c2_scale=6.0 / T ** 2)
        res = sample_surrogate(surrogate, count, SEED, "bundles")
        for v in res.values:
            layers = surrogate_layers(res.grid, v)
            dom = stopping_domain(BoundaryData((0.0,) * k, (0.0,) * k, layers), sched)
            boundary = boundary_from_layers(layers, dom)
            result = check_bundle(build_pole_tent(boundary, dom, sched), dom, sched)
            for name, (ok, _) in result.items():
                failures[name] += int(not ok)
            total += 1
    elapsed = time.perf_counter() - t0
    _check("C6 bundle invariants", sum(failures.values()) == 0 and elapsed < 60,
           f"{total} bundles, failures {failures}", t0)


def test_criterion_07_gibbs_invariance():
    t0 = time.perf_counter()
    n = 10_000
    grid = make_grid(-2, 2, 32)
    lower = np.full(grid.n + 1, -1.0)
    cfg = DominanceConfig(grid, (0.0,), (0.0,), lower=lower)
    spec = HamiltonianSpec(1)
    before = sample_weighted_bridges(cfg, spec, n, RngStream(SEED, 0, "c7-start")).samples[:, 0, :]
    reference = sample_weighted_bridges(cfg, spec, n, RngStream(SEED, 1, "c7-ref")).samples[:, 0, :]
    dom = DomainSpec(1, (-2.0,), (2.0,), -2.0, 2.0)
    boundary = BoundaryData((0.0,), (0.0,), (Path(grid, np.zeros(grid.n + 1)), Path(grid, lower)))
    after = np.empty_like(before)
    for i in range(n):
        ens = LineEnsemble(dom, (Path(grid, before[i]),))
        out = gibbs_resample(ens, boundary, ((1, 1), (-1.5, 1.0)), spec, RngStream(SEED, i, "c7"))
        after[i] = out.curves[0].values
    worst = 0.0
    for q in (-1.5, -1.0, -0.25, 0.5, 1.5):
        i = grid.index_of(q)
        worst = max(worst, abs(two_sample_mean_z(after[:, i], reference[:, i])),
                    abs(two_sample_var_z(after[:, i], reference[:, i])))
    elapsed = time.perf_counter() - t0
    _check("C7 Gibbs resampling invariance", worst < Z and elapsed < 120,
           f"max |z| = {worst:.2f}", t0)


def test_criterion_08_exact_rejection():
    t0 = time.perf_counter()
    grid = make_grid(0, 1, 16)
    c = 0.2

    def propose(rng, m):
        return sample_bridges(grid.points, 0.0, 0.0, rng, m)

    res = rejection_sample_batch(propose, lambda b: np.where(b[:, 8] > c, 0.0, -np.inf),
                                 100_000, RngStream(SEED, 0, "c8"), 10 ** 7)
    mid = res.samples[:, 8]
    mean, var = truncated_normal_moments(0.5, c)
    zm, zv = mean_z(mid, mean), var_z(mid, var)
    elapsed = time.perf_counter() - t0
    _check("C8 truncated marginal", max(abs(zm), abs(zv)) < Z and elapsed < 30,
           f"z(mean) = {zm:.2f}, z(var) = {zv:.2f}", t0)


def test_criterion_09_stochastic_dominance():
    t0 = time.perf_counter()
    grid = make_grid(0, 4, 32)

    def config(shift):
        return DominanceConfig(grid, (shift, shift - 1.0), (shift, shift - 1.0),
                               lower=np.full(grid.n + 1, -2.0))

    points = [0.5, 1.0, 2.0, 3.0, 3.5]
    shifted = dominance_test(config(0.0), config(1.0), points, 4000, RngStream(SEED, 0))
    same = dominance_test(config(0.0), config(0.0), points, 4000, RngStream(SEED, 1))
    ok = shifted.all_detected and not same.detected and not same.rejected
    elapsed = time.perf_counter() - t0
    _check("C9 stochastic dominance", ok and elapsed < 120,
           f"shifted detected {len(shifted.detected)}/{shifted.pairs}, "
           f"identical detected {len(same.detected)} rejected {len(same.rejected)}", t0)


def test_criterion_10_separation_scaling():
    t0 = time.perf_counter()
    Ts, logs, subs = (4.0, 6.0, 8.0), [], []
    for T in Ts:
        rep = run_separation(canonical_separation(2, T), 10_000, SEED)
        p = rep.estimates["P_L_H"].mean
        logs.append(-math.log(p))
        subs.append(rep.checks["E_Wplus_bound"] and rep.checks["P_Gap_half"])
    alpha = float(np.polyfit(np.log(Ts), np.log(logs), 1)[0])
    elapsed = time.perf_counter() - t0
    _check("C10 separation scaling", alpha <= 3.0 and all(subs) and elapsed < 600,
           f"-log P_L(H) = {[round(v, 3) for v in logs]}, alpha = {alpha:.3f}, "
           f"sub-bounds {subs}", t0)


def test_criterion_11_core_inequality():
    t0 = time.perf_counter()
    T, npu = 4.0, 8
    sched = schedule_for_scale(T, 1, c2_scale=6.0 / T ** 2)
    events = {f"eps{e}": SupAbsEvent(threshold_for_epsilon(e, sched.s, npu, seed=SEED))
              for e in (0.3, 0.1, 0.03)}
    rep = run_core_inequality(SurrogateSpec(1, T), sched, HamiltonianSpec(1), events, 10_000,
                              SEED, n_triples=3, n_jump=10_000)
    margins = {name: rep.estimates[f"margin_sigma_{name}"].mean for name in events}
    elapsed = time.perf_counter() - t0
    _check("C11 core inequality", all(m > Z for m in margins.values()) and elapsed < 600,
           f"margins in sigma {({k: round(v, 2) for k, v in margins.items()})}", t0)


def test_criterion_12_numerator_fast_path_and_sigma_scan():
    t0 = time.perf_counter()
    T, npu = 4.0, 8
    sched = schedule_for_scale(T, 1, c2_scale=6.0 / T ** 2)
    domain, boundary, fav = favorable_triple(parabola_layers(box_grid(sched, npu), 1), sched)
    zs, fast = [], []
    for i, e in enumerate((0.3, 0.1, 0.03)):
        event = SupAbsEvent(threshold_for_epsilon(e, sched.s, npu, seed=SEED))
        eps = epsilon_oracle(event, sched.s, npu, 100_000, SEED + 100 + i)
        rep = run_numerator(domain, boundary, sched, HamiltonianSpec(1), event, eps, 10_000,
                            SEED + i, chain_check=True)
        fast.append(rep.estimates["fast_path"].mean == 1.0)
        for tag in ("ratio", "ratio_chain"):
            r = rep.estimates[tag]
            zs.append(abs(r.mean - 1.0) / r.stderr)
    rng = np.random.default_rng(SEED)
    scan_bad = 0
    for _ in range(1000):
        s = rng.uniform(0.1, 3.0)
        p0 = rng.uniform(0.0, s)
        q1, q2 = enlarged_interval(p0, s)
        sig = sigma_quantities(p0 - s - rng.exponential(s), q1, p0, q2, p0 + s + rng.exponential(s))
        s1, s2, s3, s4 = (sig[f"sigma{i}_sq"] for i in range(1, 5))
        a, b = sig["alpha"], sig["beta"]
        ok = s3 / 4 <= s4 * (1 + 1e-12) and s4 <= s3 * (1 + 1e-12)
        ok &= math.isclose(s4, a * a * s1 + b * b * s2, rel_tol=1e-12)
        ok &= a * math.sqrt(s1) + b * math.sqrt(s2) <= 2 * math.sqrt(s3) * (1 + 1e-12)
        scan_bad += int(not ok)
    elapsed = time.perf_counter() - t0
    ok = fav.passed and all(fast) and max(zs) < Z and scan_bad == 0 and elapsed < 300
    _check("C12 numerator fast path and variance scan", ok,
           f"max |ratio - 1| / sigma = {max(zs):.2f}, scan violations {scan_bad}", t0)


DETERMINISM_CONFIGS = {
    "separation": "experiment = separation\nk = 2\nT = 4\nN = 2000\n",
    "numerator": "experiment = numerator\nk = 1\nT = 4\nN = 2000\nboundary = parabola\n"
                 "c2_scale = 0.375\nchain_check = true\nsweeps = 50\n",
    "favorable_frequency": "experiment = favorable_frequency\nk = 1\nT = 4\nN = 64\n"
                           "c2_scale = 0.375\nsweeps = 50\n",
}


def test_criterion_13_determinism(tmp_path, monkeypatch):
    t0 = time.perf_counter()
    same = {}
    for name, text in DETERMINISM_CONFIGS.items():
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(text + f"master_seed = {SEED}\n")
        outputs = []
        for threads in ("1", "3", "8"):
            monkeypatch.setenv("GLINES_THREADS", threads)
            out = tmp_path / f"{name}-{threads}.csv"
            assert main(["run", str(cfg), "--output", str(out)]) == 0
            outputs.append(out.read_bytes())
        same[name] = all(o == outputs[0] for o in outputs)
        assert read_results(str(tmp_path / f"{name}-1.csv"))["status"] == "ok"
    _check("C13 determinism across worker counts", all(same.values()), f"{same}", t0)
