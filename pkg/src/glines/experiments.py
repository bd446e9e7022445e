"""
Estimator pipelines: curve separation above a Lipschitz floor at finitely
many poles, the jump-ensemble denominator with its event ladder, the
numerator near ``[0, s]``, favorable-event frequencies of the surrogate and
the core inequality comparing the surrogate with the jump ensemble.

Every random quantity is drawn through ``run_blocks`` (fixed block sizes,
one stream per block), so reports are identical for every worker count.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from .geometry import (ScheduleParams, box_conditions, build_pole_tent,
                       check_favorable, stopping_domain)
from .grid_paths import (BoundaryData, DomainSpec, GlinesError, Grid, Path, RngStream,
                         affine_residual, boundary_from_layers, bridge_values)
from .samplers import (ChainSettings, Estimate, MaxAttemptsExceeded, SurrogateSpec,
                       estimate_from_values, ratio_estimate, rejection_sample_batch,
                       run_blocks, sample_jump_curve, sample_jump_ensemble, sample_surrogate,
                       surrogate_layers)
from .weights import HamiltonianSpec, WeightLayout

__all__ = [
    "AssumptionViolated", "NotFavorable", "OracleMissing", "BadOrdering",
    "SeparationParams", "ExperimentReport", "canonical_separation", "run_separation",
    "run_denominator", "sigma_quantities", "run_numerator", "run_core_inequality",
    "run_favorable_frequency", "SupAbsEvent", "FullEvent", "EmptyEvent", "epsilon_oracle",
    "threshold_for_epsilon", "midpoint_point", "midpoint_check", "gaussian_tail_check",
    "bridge_orthant_log_probability", "sample_bridge_orthant", "reweighting_f1",
    "favorable_triple", "reweighting_f2", "parabola_layers", "run_calibration",
    "conditional_gaussian_parameters", "enlarged_interval",
]


class AssumptionViolated(GlinesError, ValueError):
    def __init__(self, failed: Sequence[str], margins: Mapping[str, float]):
        super().__init__("violated: " + ", ".join(failed))
        self.failed = list(failed)
        self.margins = dict(margins)


class NotFavorable(GlinesError, ValueError):
    pass


class OracleMissing(GlinesError, ValueError):
    pass


class BadOrdering(GlinesError, ValueError):
    pass


@dataclass
class ExperimentReport:
    """Named estimates plus boolean checks, the parameter echo and the seed.

    ``wall_time`` is informational and never serialized into result files.
    """

    experiment: str
    estimates: Dict[str, Estimate]
    params: Dict[str, object]
    seed: int
    wall_time: float = 0.0
    checks: Dict[str, bool] = field(default_factory=dict)
    notes: list = field(default_factory=list)


def _exact(value: float) -> Estimate:
    """A deterministic quantity packaged as an estimate with zero error."""
    return Estimate(float(value), 0.0, 0, 0, 0)


def _fraction(mask) -> Estimate:
    return estimate_from_values(np.asarray(mask, dtype=float))


# ---------------------------------------------------------------------------
# Curve separation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeparationParams:
    """``k`` bridges on ``[ell, r]`` from ``a_minus`` to ``a_plus`` required
    to stay above the Lipschitz floor ``g`` at the poles ``P``.

    ``gap_constant`` is the fluctuation constant of the gap event
    ``|L_j(p_i) - L_j(p_0)| <= gap_constant * T^2``.
    """

    k: int
    ell: float
    r: float
    a_minus: tuple
    a_plus: tuple
    g: Path
    P: tuple
    mu: float
    T: float
    b0: float = 1.0
    b1: float = 1.0
    b2: float = 1.0
    lambda0: float = 1.0
    lambda1: float = 1.0
    gap_constant: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a_minus", tuple(float(v) for v in self.a_minus))
        object.__setattr__(self, "a_plus", tuple(float(v) for v in self.a_plus))
        object.__setattr__(self, "P", tuple(sorted(float(p) for p in self.P)))

    def lipschitz(self) -> float:
        return float(np.max(np.abs(np.diff(self.g.values))) / self.g.grid.step)

    def margins(self) -> dict:
        """Slack of every assumption (non-negative when it holds)."""
        T, k = self.T, self.k
        g_end = (float(self.g.values[0]), float(self.g.values[-1]))
        out = {
            "span": self.b0 * T - (self.r - self.ell),
            "pole_count": self.b0 * T - len(self.P),
            "lipschitz": self.b1 * T - self.lipschitz(),
            "floor_ends": -max(abs(g_end[0]), abs(g_end[1])),
            "poles_inside": min(min(self.P) - self.ell, self.r - max(self.P)) if self.P else 0.0,
        }
        gaps = math.inf
        for a in (self.a_minus, self.a_plus):
            for j in range(k - 1):
                gaps = min(gaps, a[j] - a[j + 1] - self.lambda0 * math.sqrt(T))
        out["curve_gaps"] = gaps if k > 1 else 0.0
        out["floor_gap"] = min(self.a_minus[-1] - g_end[0], self.a_plus[-1] - g_end[1]) \
            - self.lambda1 * T
        out["top_height"] = self.b2 * T ** 2 - max(self.a_minus[0] - g_end[0],
                                                  self.a_plus[0] - g_end[1])
        return out

    def check(self) -> dict:
        """Margins of every assumption; raises AssumptionViolated listing the
        failed ones."""
        m = self.margins()
        # boundary heights set exactly at the minimum give margins of rounding size
        tol = 1e-12 * max(1.0, self.T ** 2)
        failed = [name for name, v in m.items() if v < -tol]
        if self.P and m["poles_inside"] <= 0:
            failed.append("poles_inside")
        if len(self.a_minus) != self.k or len(self.a_plus) != self.k:
            failed.append("boundary_count")
        if failed:
            raise AssumptionViolated(sorted(set(failed)), m)
        return m

    def echo(self) -> dict:
        return {"k": self.k, "ell": self.ell, "r": self.r, "T": self.T, "mu": self.mu,
                "a_minus": list(self.a_minus), "a_plus": list(self.a_plus),
                "poles": list(self.P), "b0": self.b0, "b1": self.b1, "b2": self.b2,
                "lambda0": self.lambda0, "lambda1": self.lambda1,
                "gap_constant": self.gap_constant, "floor_lipschitz": self.lipschitz()}


def canonical_separation(k: int, T: float, mu: float = 0.5, floor_slope: float = 1.0,
                         n_per_unit: int = 8, n_poles: Optional[int] = None,
                         gap_constant: float = 1.0) -> SeparationParams:
    """Separation setting on ``[-T/2, T/2]`` with unit assumption constants.

    The floor is the tent ``floor_slope * (T/2 - |x|)``; there are
    ``floor(T) - 1`` equally spaced poles (at most ``T``) and the boundary
    values sit exactly at the minimal allowed heights
    ``lambda1 T + (k - j) lambda0 T^{1/2}``.
    """
    ell, r = -T / 2.0, T / 2.0
    m = int(round(T * n_per_unit))
    grid = Grid(ell, r, m)
    g = Path(grid, floor_slope * (T / 2.0 - np.abs(grid.points)))
    count = int(math.floor(T)) - 1 if n_poles is None else n_poles
    poles = tuple(float(ell + (i + 1) * (r - ell) / (count + 1)) for i in range(count))
    a = tuple(T + (k - j) * math.sqrt(T) for j in range(1, k + 1))
    return SeparationParams(k, ell, r, a, a, g, poles, mu, T, gap_constant=gap_constant)


def _separation_points(params: SeparationParams, poles: Sequence[float]) -> np.ndarray:
    return np.concatenate([[params.ell], np.asarray(poles, float), [params.r]])


def _free_at(params: SeparationParams, poles: Sequence[float], rng: RngStream, m: int):
    """Free bridges evaluated at ``ell, poles, r``: shape ``(m, k, len(poles) + 2)``."""
    x = _separation_points(params, poles)
    z = rng.normal((m, params.k, len(x) - 2))
    return bridge_values(x, np.asarray(params.a_minus), np.asarray(params.a_plus), z)


def _above(values: np.ndarray, floor: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """All curves above the floor at the masked poles (pole axis last)."""
    if not mask.any():
        return np.ones(values.shape[0], dtype=bool)
    return np.all(values[..., mask] > floor[mask], axis=(-2, -1))


def _ordered_above(values: np.ndarray, floor: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if not mask.any():
        return np.ones(values.shape[0], dtype=bool)
    v = values[..., mask]
    ok = np.all(v[:, -1, :] > floor[mask], axis=-1)
    if values.shape[1] > 1:
        ok &= np.all(v[:, :-1, :] > v[:, 1:, :], axis=(-2, -1))
    return ok


def _separated(values: np.ndarray, floor: np.ndarray, mask: np.ndarray,
               gap_curves: float, gap_floor: float) -> np.ndarray:
    if not mask.any():
        return np.ones(values.shape[0], dtype=bool)
    v = values[..., mask]
    ok = np.all(v[:, -1, :] - floor[mask] >= gap_floor, axis=-1)
    if values.shape[1] > 1:
        ok &= np.all(v[:, :-1, :] - v[:, 1:, :] >= gap_curves, axis=(-2, -1))
    return ok


def _blocked_rejection(propose: Callable, accept: Callable, n: int, seed: int, purpose: str,
                       max_attempts: int, block: int = 2048):
    """Indicator-weight rejection run on fixed blocks; returns
    ``(samples, attempts)`` or raises MaxAttemptsExceeded with the partial
    samples."""
    sizes = [min(block, n - i) for i in range(0, n, block)]
    budget = max(1, max_attempts // max(len(sizes), 1))

    def one(rng, m):
        def lw(c):
            return np.where(accept(c), 0.0, -np.inf)
        try:
            res = rejection_sample_batch(propose, lw, m, rng, budget, chunk=max(4 * m, 256))
            return res.samples, res.attempts, None
        except MaxAttemptsExceeded as exc:
            return exc.partial, exc.attempts, exc

    parts = run_blocks(one, n, block, seed, purpose)
    got = [p[0] for p in parts if p[0] is not None and len(p[0])]
    samples = np.concatenate(got) if got else None
    attempts = sum(p[1] for p in parts)
    failed = [p[2] for p in parts if p[2] is not None]
    if failed:
        have = 0 if samples is None else len(samples)
        raise MaxAttemptsExceeded(attempts, have / max(attempts, 1), partial=samples)
    return samples, attempts


def run_separation(params: SeparationParams, n: int, seed: int,
                   max_attempts: int = 50_000_000, check_assumptions: bool = True,
                   block: int = 2048) -> ExperimentReport:
    """Separation estimates for one parameter set.

    Tags: ``P_free_H``, ``E_free_W``, ``P_L_H``, ``E_Wplus``, ``P_Gap``,
    ``P_G``, ``P0_Q``, ``m_closed_j``/``m_emp_j`` per curve,
    ``sigma0_sq_closed``/``sigma0_sq_emp`` and ``bound_Wplus``.
    """
    t0 = time.perf_counter()
    margins = params.check() if check_assumptions else params.margins()
    k, T, mu = params.k, params.T, params.mu
    P = np.asarray(params.P)
    floor = params.g.interp(P)
    root = math.sqrt(T)
    inner = (P >= params.ell + root) & (P <= params.r - root)
    tail = P > params.r - root
    all_p = np.ones(len(P), dtype=bool)
    gap_c, gap_f = mu * params.lambda0 * root, mu * params.lambda1 * T

    def free(rng, m):
        v = _free_at(params, P, rng, m)
        return v[..., 1:-1]

    est, checks, notes = {}, {}, []
    report = ExperimentReport("separation", est, params.echo(), seed, 0.0, checks, notes)

    free_draws = np.concatenate(run_blocks(free, n, block, seed, "separation-free"))
    W = _above(free_draws, floor, all_p)
    H = _separated(free_draws, floor, all_p, gap_c, gap_f)
    est["P_free_H"] = _fraction(H)
    est["E_free_W"] = _fraction(W)
    # indicator algebra of the weight splittings on every sample
    Wi, Wc = _above(free_draws, floor, inner), _above(free_draws, floor, ~inner)
    Wt, Wh = _above(free_draws, floor, tail), _above(free_draws, floor, ~tail)
    checks["split_inner"] = bool(np.array_equal(W, Wi & Wc))
    checks["split_tail"] = bool(np.array_equal(W, Wt & Wh))
    checks["H_within_W"] = bool(np.all(~H | W))

    def propose(rng, m):
        return free(rng, m)

    try:
        cond, att = _blocked_rejection(propose, lambda c: _above(c, floor, all_p), n, seed,
                                       "separation-conditioned", max_attempts, block)
        est["P_L_H"] = Estimate(float(np.mean(_separated(cond, floor, all_p, gap_c, gap_f))),
                                float(np.std(_separated(cond, floor, all_p, gap_c, gap_f),
                                             ddof=1) / math.sqrt(len(cond))), att, len(cond))
        inner_cond, att2 = _blocked_rejection(
            propose, lambda c: _above(c, floor, inner), n, seed, "separation-inner",
            max_attempts, block)
        plus = _ordered_above(inner_cond, floor, inner)
        e = _fraction(plus)
        est["E_Wplus"] = Estimate(e.mean, e.stderr, att2, len(inner_cond))
        bound = float(math.factorial(k)) ** (-params.b0 * T)
        est["bound_Wplus"] = _exact(bound)
        checks["E_Wplus_bound"] = bool(e.mean >= bound)

        plus_draws, att3 = _blocked_rejection(
            propose, lambda c: _above(c, floor, inner) & _ordered_above(c, floor, inner),
            n, seed, "separation-ordered", max_attempts, block)
    except MaxAttemptsExceeded as exc:
        report.wall_time = time.perf_counter() - t0
        notes.append("rejection budget exhausted")
        exc.partial = report
        raise exc

    if inner.any():
        vi = plus_draws[..., inner]
        dev = np.abs(vi[..., 1:] - vi[..., :1]) if vi.shape[-1] > 1 else np.zeros(vi.shape[:-1] + (0,))
        gap = np.all(dev <= params.gap_constant * T ** 2, axis=(-2, -1))
        est["P_Gap"] = _fraction(gap)
        checks["P_Gap_half"] = bool(est["P_Gap"].mean >= 0.5)
        G = _separated(plus_draws, floor, inner, 0.5 * (1 + mu) * params.lambda0 * root,
                       0.5 * (1 + mu) * params.lambda1 * T)
        est["P_G"] = _fraction(G)
        ref = plus_draws[int(np.argmax(gap))] if gap.any() else plus_draws[0]
        _conditional_gaussian(params, P[inner], floor[inner], ref[:, inner], n, seed, est, checks,
                              block)
    else:
        notes.append("no pole at distance T^(1/2) from both ends")
    report.params["margins"] = margins
    report.wall_time = time.perf_counter() - t0
    return report


def conditional_gaussian_parameters(params: SeparationParams, inner_poles: np.ndarray,
                                    diffs: np.ndarray):
    """Mean of each ``B_j(p_0)`` and the common variance given the
    increments ``diffs[j, i] = B_j(p_i) - B_j(p_0)`` (``diffs[:, 0] = 0``)."""
    p0, pm = float(inner_poles[0]), float(inner_poles[-1])
    left, right = p0 - params.ell, params.r - pm
    a_m, a_p = np.asarray(params.a_minus), np.asarray(params.a_plus)
    mean = a_m / (1.0 + left / right) + (a_p - diffs[:, -1]) / (1.0 + right / left)
    var = 1.0 / (1.0 / left + 1.0 / right)
    return mean, var


def _conditional_gaussian(params, inner_poles, floor_inner, ref, n, seed, est, checks, block):
    k = params.k
    diffs = ref - ref[:, :1]
    mean, var = conditional_gaussian_parameters(params, inner_poles, diffs)
    h = np.empty(k)
    h[-1] = np.max(floor_inner - diffs[-1])
    for j in range(k - 1):
        h[j] = np.max(diffs[j + 1] - diffs[j])

    def q_draws(rng, m):
        b = mean + math.sqrt(var) * rng.normal((m, k))
        ok = b[:, -1] > h[-1]
        if k > 1:
            ok &= np.all(b[:, :-1] - b[:, 1:] > h[:-1], axis=1)
        return ok

    est["P0_Q"] = _fraction(np.concatenate(run_blocks(q_draws, n, block, seed, "separation-Q")))

    # empirical conditional moments by least squares on free draws
    def reg_draws(rng, m):
        return _free_at(params, inner_poles, rng, m)[..., 1:-1]

    vals = np.concatenate(run_blocks(reg_draws, max(n, 4000), block, seed, "separation-moments"))
    worst = 0.0
    resid_vars, dofs = [], []
    for j in range(k):
        y = vals[:, j, 0]
        X = np.column_stack([np.ones(len(y)), vals[:, j, 1:] - vals[:, j, :1]])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        dof = len(y) - X.shape[1]
        s2 = float(resid @ resid / dof)
        x0 = np.concatenate([[1.0], diffs[j, 1:]])
        cov = s2 * np.linalg.inv(X.T @ X)
        pred = float(x0 @ coef)
        se = math.sqrt(float(x0 @ cov @ x0))
        est[f"m_closed_j{j + 1}"] = _exact(mean[j])
        est[f"m_emp_j{j + 1}"] = Estimate(pred, se, len(y), len(y))
        worst = max(worst, abs(pred - mean[j]) / se if se > 0 else 0.0)
        resid_vars.append(s2)
        dofs.append(dof)
    s2 = float(np.mean(resid_vars))
    se2 = s2 * math.sqrt(2.0 / sum(dofs))
    est["sigma0_sq_closed"] = _exact(var)
    est["sigma0_sq_emp"] = Estimate(s2, se2, sum(dofs), sum(dofs))
    checks["conditional_mean_4sigma"] = bool(worst <= 4.0)
    checks["conditional_variance_4sigma"] = bool(abs(s2 - var) <= 4.0 * se2)


# ---------------------------------------------------------------------------
# Favorable triples
# ---------------------------------------------------------------------------

def favorable_triple(layers: Sequence[Path], schedule: ScheduleParams,
                     c2_tolerance: Optional[float] = None):
    """Stopping domain and boundary data read from box layers, with the
    favorable-event report."""
    k = schedule.k
    probe = BoundaryData((0.0,) * k, (0.0,) * k, tuple(layers))
    domain = stopping_domain(probe, schedule)
    boundary = boundary_from_layers(layers, domain)
    fav = check_favorable(domain.ell, domain.r, boundary, schedule, c2_tolerance)
    return domain, boundary, fav


def _layout_for(domain: DomainSpec, boundary: BoundaryData, schedule: ScheduleParams,
                spec: HamiltonianSpec):
    bundle = build_pole_tent(boundary, domain, schedule)
    grid = bundle.g_under.grid
    layout = WeightLayout(domain, boundary, grid, spec, bundle.joint_poles, bundle.d,
                          bundle.dprime)
    return bundle, layout


# ---------------------------------------------------------------------------
# Gaussian orthant probabilities of bridge values
# ---------------------------------------------------------------------------

def _orthant_grids(ell, r, a, b, points, thresholds, n_grid):
    """Forward recursion for ``P(B(x_i) > u_i, i = 1..m)`` of the bridge
    from ``(ell, a)`` to ``(r, b)``; returns grids, weights and log
    densities."""
    pts = np.asarray(points, float)
    us = np.asarray(thresholds, float)
    frac = np.concatenate([[0.0], np.geomspace(1e-7, 1.0, n_grid - 1)])
    grids, logw, logf = [], [], []
    prev_x, prev_lf, prev_t = np.array([a]), np.array([0.0]), ell
    prev_lw = np.array([0.0])
    for t, u in zip(pts, us):
        var = (t - prev_t) * (r - t) / (r - prev_t)
        mu = prev_x + (t - prev_t) * (b - prev_x) / (r - prev_t)
        sd = math.sqrt(var)
        live = prev_lf + prev_lw > np.max(prev_lf + prev_lw) - 60.0
        top = max(u, float(np.max(mu[live]))) + 14.0 * sd
        x = u + (top - u) * frac
        w = np.empty_like(x)
        w[1:-1] = 0.5 * (x[2:] - x[:-2])
        w[0] = 0.5 * (x[1] - x[0])
        w[-1] = 0.5 * (x[-1] - x[-2])
        lw = np.log(w)
        kern = -0.5 * ((x[None, :] - mu[:, None]) / sd) ** 2 - math.log(sd * math.sqrt(2 * math.pi))
        lf = special.logsumexp((prev_lf + prev_lw)[:, None] + kern, axis=0)
        grids.append(x)
        logw.append(lw)
        logf.append(lf)
        prev_x, prev_lf, prev_lw, prev_t = x, lf, lw, t
    return grids, logw, logf


def bridge_orthant_log_probability(ell: float, r: float, a: float, b: float,
                                   points: Sequence[float], thresholds: Sequence[float],
                                   n_grid: int = 1200) -> float:
    """``log P(B(x_i) > u_i for all i)`` for the bridge from ``(ell, a)`` to
    ``(r, b)``, by a log-space forward recursion over the Gaussian Markov
    chain of the values (trapezoid rule on grids graded toward each
    threshold)."""
    grids, logw, logf = _orthant_grids(ell, r, a, b, points, thresholds, n_grid)
    return float(special.logsumexp(logf[-1] + logw[-1]))


def sample_bridge_orthant(ell, r, a, b, points, thresholds, rng: RngStream, m: int,
                          n_grid: int = 1200) -> np.ndarray:
    """``m`` draws of ``(B(x_1), ..., B(x_n))`` conditioned on the orthant,
    by backward sampling on the recursion grids (discretized law)."""
    pts = np.asarray(points, float)
    grids, logw, logf = _orthant_grids(ell, r, a, b, pts, thresholds, n_grid)
    out = np.empty((m, len(pts)))
    g = rng.generator

    def pick(logp):
        p = np.exp(logp - special.logsumexp(logp, axis=-1, keepdims=True))
        c = np.cumsum(p, axis=-1)
        u = rng.uniform(p.shape[:-1] + (1,)) * c[..., -1:]
        return np.minimum((c < u).sum(axis=-1), p.shape[-1] - 1)

    last = len(pts) - 1
    out[:, last] = grids[last][pick(np.broadcast_to(logf[last] + logw[last], (m, len(grids[last]))))]
    for i in range(last - 1, -1, -1):
        t, t_next = pts[i], pts[i + 1]
        x = grids[i]
        var = (t_next - t) * (r - t_next) / (r - t)
        mu = x + (t_next - t) * (b - x) / (r - t)
        lp = (logf[i] + logw[i])[None, :] - 0.5 * (out[:, i + 1:i + 2] - mu[None, :]) ** 2 / var
        out[:, i] = x[pick(lp)]
    del g
    return out


# ---------------------------------------------------------------------------
# Denominator
# ---------------------------------------------------------------------------

def _node_range(grid: Grid, lo: float, hi: float):
    return grid.index_of(lo), grid.index_of(hi)


def _no_touch(J, g_under, il, ir, ndp):
    k = J.shape[1]
    ok = np.ones(J.shape[0], dtype=bool)
    for j in range(k):
        a, b = il[j] + ndp, ir[j] - ndp
        ok &= np.all(J[:, j, a:b + 1] >= g_under[a:b + 1], axis=1)
        if j + 1 < k:
            a2, b2 = il[j + 1], ir[j + 1]
            ok &= np.all(J[:, j, a2:b2 + 1] >= J[:, j + 1, a2:b2 + 1], axis=1)
    return ok


def _f_event(J, j, g_under, tents, il, ir, ndp, npu, schedule, sep_with_s=True):
    """The event F_j (1-based ``j``) evaluated at grid nodes."""
    k, T, s = schedule.k, schedule.T, schedule.s
    ok = np.ones(J.shape[0], dtype=bool)
    for i in range(j):
        a, b = il[i] + ndp, ir[i] - ndp
        ok &= np.all(J[:, i, a:b + 1] > g_under[a:b + 1], axis=1)
    a, b = il[j - 1] + npu, ir[j - 1] - npu
    lift = 16 * k * (k + 1 - j) * (s if sep_with_s else 1.0) * T
    tent = tents[j - 1].values[npu:len(tents[j - 1].values) - npu]
    ok &= np.all(J[:, j - 1, a:b + 1] > tent + lift, axis=1)
    for i in range(j - 1):
        a2, b2 = il[i + 1], ir[i + 1]
        ok &= np.all(J[:, i, a2:b2 + 1] > J[:, i + 1, a2:b2 + 1] + (k + 1 - j) * math.sqrt(T),
                     axis=1)
    ok &= np.all(J[:, 0, il[0]:ir[0] + 1] < (j + 1) * T ** 2, axis=1)
    return ok


def _fill_bridges(xs: np.ndarray, knots_idx: Sequence[int], knot_vals: np.ndarray,
                  rng: RngStream) -> np.ndarray:
    """Curves through ``knot_vals`` at node indices ``knots_idx`` with
    independent bridges in between."""
    m = knot_vals.shape[0]
    out = np.empty((m, len(xs)))
    for q in range(len(knots_idx) - 1):
        a, b = knots_idx[q], knots_idx[q + 1]
        seg = xs[a:b + 1]
        z = rng.normal((m, max(b - a - 1, 0)))
        out[:, a:b + 1] = bridge_values(seg, knot_vals[:, q], knot_vals[:, q + 1], z)
    return out


def run_denominator(domain: DomainSpec, boundary: BoundaryData, schedule: ScheduleParams,
                    spec: HamiltonianSpec, n: int, seed: int,
                    settings: ChainSettings = ChainSettings(), D: Optional[float] = None,
                    require_favorable: bool = True, c2_tolerance: Optional[float] = None,
                    n_grid: int = 1200) -> ExperimentReport:
    """Jump-ensemble denominator and its event ladder for one favorable triple.

    Tags: ``E_J_Wrest``, ``P_J_NoTouch``, ``D_bound``, ``P_J_F_j{j}``,
    ``log_P_free_A1_j{j}``, ``P_free_A1_j{j}``, ``P_free_A2_given_A1_j{j}``,
    ``P_J_A3_given_A4_j{j}``.
    """
    t0 = time.perf_counter()
    k, T = schedule.k, schedule.T
    if require_favorable:
        fav = check_favorable(domain.ell, domain.r, boundary, schedule, c2_tolerance)
        if not fav.passed:
            raise NotFavorable(f"conditions {sorted(fav.failures)} fail")
    bundle, layout = _layout_for(domain, boundary, schedule, spec)
    grid = layout.grid
    h = grid.step
    npu = int(round(1.0 / h))
    ndp = int(round(bundle.dprime / h))
    il, ir = layout.il, layout.ir
    g_under = bundle.g_under.values
    est, checks, notes = {}, {}, list(bundle.notes)
    D = float(2 * k * (k + 1)) if D is None else float(D)

    res = sample_jump_ensemble(layout, boundary, n, seed, "denominator-J", settings)
    J = res.values
    log_full, log_jump, cap = layout.evaluate(J)
    w_rest = np.exp(log_full - log_jump)
    e = estimate_from_values(w_rest, cap_hits=int(np.sum(cap)))
    est["E_J_Wrest"] = e
    nt = _no_touch(J, g_under, il, ir, ndp)
    est["P_J_NoTouch"] = _fraction(nt)
    floor = math.exp(-k * (domain.r[0] - domain.ell[0]))
    checks["rest_bound_on_NoTouch"] = bool(np.all(w_rest[nt] >= floor * (1 - 1e-12)))
    bound = est["P_J_NoTouch"].mean * math.exp(-D * T) / D
    est["D_bound"] = _exact(bound)
    checks["E_J_Wrest_ge_D_bound"] = bool(e.mean >= bound)
    for j in range(1, k + 1):
        f = _f_event(J, j, g_under, bundle.tents, il, ir, ndp, npu, schedule)
        est[f"P_J_F_j{j}"] = _fraction(f)
        if j == k:
            checks["F_k_within_NoTouch"] = bool(np.all(~f | nt))

    for j in range(1, k + 1):
        _ladder(j, domain, boundary, schedule, bundle, layout, n, seed, settings, est, checks,
                n_grid)
    est["acceptance_rate_J"] = _exact(res.acceptance_rate)
    rep = ExperimentReport("denominator", est, _triple_echo(domain, schedule, spec, n), seed,
                           time.perf_counter() - t0, checks, notes)
    return rep


def _ladder(j, domain, boundary, schedule, bundle, layout, n, seed, settings, est, checks,
            n_grid):
    k, T, s = schedule.k, schedule.T, schedule.s
    grid = layout.grid
    xs = grid.points
    h = grid.step
    npu = int(round(1.0 / h))
    ndp = int(round(bundle.dprime / h))
    lj, rj = domain.ell[j - 1], domain.r[j - 1]
    a_val, b_val = boundary.entrance[j - 1], boundary.exit[j - 1]
    il, ir = layout.il[j - 1], layout.ir[j - 1]
    knots = [il + ndp, il + npu, ir - npu, ir - ndp]
    rise_end = k * math.sqrt(T)
    rise_one = 20 * k * (k + 1 - j) * s * T
    thresholds = [a_val + rise_end, a_val + rise_one, b_val + rise_one, b_val + rise_end]
    kx = [xs[q] for q in knots]
    logp = bridge_orthant_log_probability(lj, rj, a_val, b_val, kx, thresholds, n_grid)
    est[f"log_P_free_A1_j{j}"] = _exact(logp)
    est[f"P_free_A1_j{j}"] = _exact(math.exp(logp))

    tent = bundle.tents[j - 1]
    t_off = grid.index_of(tent.grid.a)
    f_next = boundary.layer(j + 1).values
    lift2 = 18 * k * (k + 1 - j) * s * T

    def a2_block(rng, m):
        vals = sample_bridge_orthant(lj, rj, a_val, b_val, kx, thresholds, rng, m, n_grid)
        knot_idx = [il] + knots + [ir]
        full = np.column_stack([np.full(m, a_val), vals, np.full(m, b_val)])
        path = _fill_bridges(xs[il:ir + 1], [q - il for q in knot_idx], full, rng)
        left = slice(knots[0] - il, knots[1] - il + 1)
        right = slice(knots[2] - il, knots[3] - il + 1)
        ok = np.all(path[:, left] > f_next[knots[0]:knots[1] + 1], axis=1)
        ok &= np.all(path[:, right] > f_next[knots[2]:knots[3] + 1], axis=1)
        ok &= path[:, knots[1] - il] > tent.values[knots[1] - t_off] + lift2
        ok &= path[:, knots[2] - il] > tent.values[knots[2] - t_off] + lift2
        a3 = _a3(path[:, npu:ir - il - npu + 1], tent.values[il + npu - t_off:ir - npu - t_off + 1],
                 k, j, s, T)
        aj = _aj(path, bundle.g_under.values[il:ir + 1], tent.values[il - t_off:ir - t_off + 1],
                 ndp, npu, k, j, s, T)
        return ok, a3, aj

    parts = run_blocks(a2_block, n, 2048, seed, f"denominator-A2-curve{j}")
    a2 = np.concatenate([p[0] for p in parts])
    a3 = np.concatenate([p[1] for p in parts])
    aj = np.concatenate([p[2] for p in parts])
    est[f"P_free_A2_given_A1_j{j}"] = _fraction(a2)
    checks[f"A2_A3_within_A_j{j}"] = bool(np.all(~(a2 & a3) | aj))

    lo, hi = il + npu, ir - npu
    lift4 = 18 * k * (k + 1 - j) * s * T
    left = tent.values[lo - t_off] + lift4
    right = tent.values[hi - t_off] + lift4
    mid = sample_jump_curve(layout, j, n, seed, "denominator-A3", settings, lo=lo, hi=hi,
                            left=left, right=right)
    a3j = _a3(mid.values, tent.values[lo - t_off:hi - t_off + 1], k, j, s, T)
    est[f"P_J_A3_given_A4_j{j}"] = _fraction(a3j)


def _a3(path_mid, tent_mid, k, j, s, T):
    return np.all(path_mid > tent_mid + 16 * k * (k + 1 - j) * s * T, axis=1)


def _aj(path, g_under, tent, ndp, npu, k, j, s, T):
    n = path.shape[1] - 1
    ok = np.all(path[:, ndp:n - ndp + 1] > g_under[ndp:n - ndp + 1], axis=1)
    ok &= _a3(path[:, npu:n - npu + 1], tent[npu:n - npu + 1], k, j, s, T)
    return ok


def _triple_echo(domain, schedule, spec, n):
    return {"k": schedule.k, "T": schedule.T, "s": schedule.s, "t": spec.t,
            "ell": list(domain.ell), "r": list(domain.r), "Delta": schedule.Delta,
            "d": schedule.d, "dprime": schedule.dprime, "Delta_k": schedule.Delta_k,
            "c2_scale": schedule.c2_scale, "N": n}


# ---------------------------------------------------------------------------
# Numerator
# ---------------------------------------------------------------------------

def sigma_quantities(p_minus: float, q1: float, p0: float, q2: float, p_plus: float) -> dict:
    """Variances of the bridge values at ``q1``/``q2`` between neighbouring
    poles, their combination and the interpolation weights."""
    if not (p_minus < q1 < p0 < q2 < p_plus):
        raise BadOrdering(f"need p_- < q1 < p0 < q2 < p_+, got "
                          f"{(p_minus, q1, p0, q2, p_plus)}")
    s1 = (p0 - q1) * (q1 - p_minus) / (p0 - p_minus)
    s2 = (p_plus - q2) * (q2 - p0) / (p_plus - p0)
    s3 = (q2 - p0) * (p0 - q1) / (q2 - q1)
    alpha = (q2 - p0) / (q2 - q1)
    beta = (p0 - q1) / (q2 - q1)
    s4 = alpha ** 2 * s1 + beta ** 2 * s2
    return {"sigma1_sq": s1, "sigma2_sq": s2, "sigma3_sq": s3, "sigma4_sq": s4,
            "alpha": alpha, "beta": beta}


def enlarged_interval(p0: float, s: float):
    """``(q1, q2)`` around the single pole ``p0`` of ``[0, s]``."""
    return p0 - max(p0, 0.5 * s), p0 + max(s - p0, 0.5 * s)


def reweighting_f1(x1, b, p_minus, q1, p0, lower_m1):
    """Density ratio of ``J_k(q1)`` given pole values ``b = (b_-, b_0)``
    against the Gaussian centred at ``lower_m1`` with the same variance."""
    b_minus, b0 = b
    s1 = (p0 - q1) * (q1 - p_minus) / (p0 - p_minus)
    m1 = (b_minus * (p0 - q1) + b0 * (q1 - p_minus)) / (p0 - p_minus)
    x1 = np.asarray(x1, float)
    return np.exp(((x1 - lower_m1) ** 2 - (x1 - m1) ** 2) / (2 * s1))


@dataclass(frozen=True)
class SupAbsEvent:
    """``{sup |bridge part| >= level}`` on ``[0, s]``."""

    level: float

    def __call__(self, parts: np.ndarray) -> np.ndarray:
        return np.max(np.abs(parts), axis=-1) >= self.level


@dataclass(frozen=True)
class FullEvent:
    def __call__(self, parts: np.ndarray) -> np.ndarray:
        return np.ones(parts.shape[0], dtype=bool)


@dataclass(frozen=True)
class EmptyEvent:
    def __call__(self, parts: np.ndarray) -> np.ndarray:
        return np.zeros(parts.shape[0], dtype=bool)


def threshold_for_epsilon(epsilon: float, s: float = 1.0, n_per_unit: Optional[int] = None,
                          n: int = 200_000, seed: int = 0) -> float:
    """Level ``c`` with ``P(sup |bridge| >= c) = epsilon`` on ``[0, s]``.

    Without ``n_per_unit`` the continuum (Kolmogorov) law is inverted;
    otherwise ``c`` is the empirical quantile of the maximum over the grid
    nodes from ``n`` seeded free bridges.
    """
    if n_per_unit is None:
        return float(stats.kstwobign.isf(epsilon) * math.sqrt(s))
    m = int(round(s * n_per_unit))
    x = np.linspace(0.0, s, m + 1)

    def blk(rng, size):
        return np.max(np.abs(bridge_values(x, 0.0, 0.0, rng.normal((size, m - 1)))), axis=1)

    sup = np.concatenate(run_blocks(blk, n, 8192, seed, "epsilon-threshold"))
    return float(np.quantile(sup, 1.0 - epsilon))


def epsilon_oracle(event: Callable, s: float, n_per_unit: int, n: int, seed: int,
                   block: int = 4096) -> Estimate:
    """Free-bridge probability of ``event`` on the grid of ``[0, s]``."""
    m = int(round(s * n_per_unit))
    x = np.linspace(0.0, s, m + 1)

    def blk(rng, size):
        return event(bridge_values(x, 0.0, 0.0, rng.normal((size, m - 1))))

    return _fraction(np.concatenate(run_blocks(blk, n, block, seed, "epsilon-oracle")))


def _bridge_parts(values: np.ndarray, i0: int, i1: int) -> np.ndarray:
    return affine_residual(values[..., i0:i1 + 1])


def run_numerator(domain: DomainSpec, boundary: BoundaryData, schedule: ScheduleParams,
                  spec: HamiltonianSpec, event: Callable, epsilon: Optional[Estimate], n: int,
                  seed: int, settings: ChainSettings = ChainSettings(),
                  require_favorable: bool = True, c2_tolerance: Optional[float] = None,
                  chain_check: bool = False) -> ExperimentReport:
    """``P_J(J_k bridge part on [0, s] in A)`` against the free-bridge
    probability ``epsilon``.

    Tags: ``P_J_A``, ``ratio``, ``fast_path``; with a pole in ``(0, s)``
    also ``P_J_Yc``, ``q1``, ``q2``, ``p0`` and the variance quantities.
    With ``chain_check`` the fast path is cross-checked against the jump
    chain itself (``P_J_A_chain``, ``ratio_chain``).
    """
    t0 = time.perf_counter()
    if epsilon is None:
        raise OracleMissing("the free-bridge probability of the event is required")
    if require_favorable:
        fav = check_favorable(domain.ell, domain.r, boundary, schedule, c2_tolerance)
        if not fav.passed:
            raise NotFavorable(f"conditions {sorted(fav.failures)} fail")
    k, s = schedule.k, schedule.s
    bundle, layout = _layout_for(domain, boundary, schedule, spec)
    grid = layout.grid
    i0, i1 = grid.index_of(0.0), grid.index_of(s)
    poles = np.asarray(bundle.joint_poles)
    eps_tol = 1e-9 * grid.step
    inside = poles[(poles > eps_tol) & (poles < s - eps_tol)]
    est, checks, notes = {}, {}, list(bundle.notes)
    x = grid.points[i0:i1 + 1]
    if inside.size == 0:
        def blk(rng, size):
            return event(bridge_values(x, 0.0, 0.0, rng.normal((size, len(x) - 2))))

        p = _fraction(np.concatenate(run_blocks(blk, n, 4096, seed, "numerator-fast")))
        est["fast_path"] = _exact(1.0)
        if chain_check:
            res = sample_jump_curve(layout, k, n, seed, "numerator-J", settings,
                                    boundary=boundary)
            off = int(layout.il[k - 1])
            pc = _fraction(event(_bridge_parts(res.values, i0 - off, i1 - off)))
            est["P_J_A_chain"] = pc
            est["ratio_chain"] = ratio_estimate(pc, epsilon)
    else:
        est["fast_path"] = _exact(0.0)
        res = sample_jump_curve(layout, k, n, seed, "numerator-J", settings, boundary=boundary)
        off = int(layout.il[k - 1])
        vals = res.values
        p = _fraction(event(_bridge_parts(vals, i0 - off, i1 - off)))
        p0 = float(inside[0])
        lower = poles[poles < p0 - eps_tol]
        upper = poles[poles > p0 + eps_tol]
        q1, q2 = enlarged_interval(p0, s)
        est["p0"], est["q1"], est["q2"] = _exact(p0), _exact(q1), _exact(q2)
        if lower.size and upper.size:
            pm, pp = float(lower.max()), float(upper.min())
            g = bundle.g_under.values
            dk = schedule.Delta_k
            lows = {q: g[grid.index_of(q)] - dk for q in (pm, p0, pp)}
            y = np.ones(n, dtype=bool)
            for q, lv in lows.items():
                y &= vals[:, grid.index_of(q) - off] >= lv
            est["P_J_Yc"] = _fraction(~y)
            try:
                sig = sigma_quantities(pm, q1, p0, q2, pp)
                for name, v in sig.items():
                    est[name] = _exact(v)
                checks["sigma4_between"] = bool(sig["sigma3_sq"] / 4 <= sig["sigma4_sq"]
                                                <= sig["sigma3_sq"])
            except BadOrdering as exc:
                notes.append(str(exc))
        else:
            notes.append("pole in (0, s) lacks a neighbour on one side")
    est["P_J_A"] = p
    est["ratio"] = ratio_estimate(p, epsilon)
    est["epsilon"] = epsilon
    rep = ExperimentReport("numerator", est, _triple_echo(domain, schedule, spec, n), seed,
                           time.perf_counter() - t0, checks, notes)
    return rep


# ---------------------------------------------------------------------------
# Surrogate-based experiments
# ---------------------------------------------------------------------------

def _surrogate_echo(surrogate: SurrogateSpec, schedule: ScheduleParams, n: int) -> dict:
    return {"k": surrogate.k, "T": surrogate.T, "t": surrogate.t,
            "n_per_unit": surrogate.n_per_unit, "floor_depth": surrogate.floor_depth,
            "sweeps": surrogate.chain.sweeps, "s": schedule.s, "c2_scale": schedule.c2_scale,
            "Delta": schedule.Delta, "d": schedule.d, "dprime": schedule.dprime, "N": n}


def run_favorable_frequency(surrogate: SurrogateSpec, schedule: ScheduleParams, n: int,
                            seed: int, c2_tolerance: Optional[float] = None) -> ExperimentReport:
    """Frequencies of the parabola (``P_Fav2c``), oscillation
    (``P_Fav3c``) and ordering (``P_Fav4c``) failures on the box and of the
    joint failure ``P_Favc`` on the junction region."""
    t0 = time.perf_counter()
    res = sample_surrogate(surrogate, n, seed, "favorable")
    grid = res.grid
    fails = {"C2": [], "C3": [], "C4": []}
    joint = []
    for v in res.values:
        m = box_conditions(v, grid, schedule, c2_tolerance)
        for c in fails:
            fails[c].append(m[c] < 0)
        _, _, fav = favorable_triple(surrogate_layers(grid, v), schedule, c2_tolerance)
        joint.append(not fav.passed)
    est = {"P_Fav2c": _fraction(fails["C2"]), "P_Fav3c": _fraction(fails["C3"]),
           "P_Fav4c": _fraction(fails["C4"]), "P_Favc": _fraction(joint),
           "acceptance_rate_chain": _exact(res.acceptance_rate)}
    return ExperimentReport("favorable_frequency", est, _surrogate_echo(surrogate, schedule, n),
                            seed, time.perf_counter() - t0)


def run_core_inequality(surrogate: SurrogateSpec, schedule: ScheduleParams, spec: HamiltonianSpec,
                        events, n: int, seed: int, n_triples: int = 3, n_jump: int = 2000,
                        settings: ChainSettings = ChainSettings(),
                        c2_tolerance: Optional[float] = None) -> ExperimentReport:
    """Surrogate probability of ``{curve k bridge part on [0, s] in A}``
    against ``max_i P_J(A) / E_J[W_rest] + P(Fav^c)`` over the first
    ``n_triples`` favorable sampled triples.

    ``events`` is one event or a mapping from names to events; tags are
    suffixed with ``_<name>`` in the latter case.
    """
    t0 = time.perf_counter()
    named = dict(events) if isinstance(events, Mapping) else {"": events}
    k, s = schedule.k, schedule.s
    res = sample_surrogate(surrogate, n, seed, "core-surrogate")
    grid = res.grid
    i0, i1 = grid.index_of(0.0), grid.index_of(s)
    parts = _bridge_parts(res.values[:, k - 1, :], i0, i1)
    fav_fail = np.zeros(n, dtype=bool)
    triples = []
    for i, v in enumerate(res.values):
        domain, boundary, fav = favorable_triple(surrogate_layers(grid, v), schedule, c2_tolerance)
        fav_fail[i] = not fav.passed
        if fav.passed and len(triples) < n_triples:
            triples.append((i, domain, boundary))
    est, checks, notes = {}, {}, []
    p_fav_c = _fraction(fav_fail)
    est["P_Favc"] = p_fav_c
    est["n_favorable_triples"] = _exact(len(triples))
    ratios = {name: [] for name in named}
    for t_idx, (i, domain, boundary) in enumerate(triples):
        bundle, layout = _layout_for(domain, boundary, schedule, spec)
        w = sample_jump_ensemble(layout, boundary, n_jump, seed, f"core-W{t_idx}", settings)
        lf, lj, cap = layout.evaluate(w.values)
        e_rest = estimate_from_values(np.exp(lf - lj), cap_hits=int(cap.sum()))
        est[f"E_J_Wrest_t{t_idx}"] = e_rest
        a = sample_jump_curve(layout, k, n_jump, seed, f"core-A{t_idx}", settings,
                              boundary=boundary)
        off = int(layout.il[k - 1])
        jparts = _bridge_parts(a.values, i0 - off, i1 - off)
        for name, ev in named.items():
            suffix = f"_{name}" if name else ""
            pa = _fraction(ev(jparts))
            est[f"P_J_A_t{t_idx}{suffix}"] = pa
            ratios[name].append(ratio_estimate(pa, e_rest))
    for name, ev in named.items():
        suffix = f"_{name}" if name else ""
        lhs = _fraction(ev(parts))
        est[f"LHS{suffix}"] = lhs
        if ratios[name]:
            best = max(ratios[name], key=lambda r: r.mean)
        else:
            best = Estimate(0.0, 0.0, 0, 0)
            notes.append("no favorable triple sampled")
        est[f"sup_ratio{suffix}"] = best
        rhs = Estimate(best.mean + p_fav_c.mean, math.hypot(best.stderr, p_fav_c.stderr),
                       n, n)
        est[f"RHS{suffix}"] = rhs
        err = math.hypot(lhs.stderr, rhs.stderr)
        margin = (rhs.mean - lhs.mean) / err if err > 0 else (math.inf if rhs.mean >= lhs.mean
                                                              else -math.inf)
        est[f"margin_sigma{suffix}"] = _exact(margin)
        checks[f"LHS_le_RHS{suffix}"] = bool(lhs.mean <= rhs.mean)
    est["acceptance_rate_chain"] = _exact(res.acceptance_rate)
    echo = _surrogate_echo(surrogate, schedule, n)
    echo.update({"n_triples": n_triples, "n_jump": n_jump})
    return ExperimentReport("core_inequality", est, echo, seed, time.perf_counter() - t0,
                            checks, notes)


# ---------------------------------------------------------------------------
# Small deterministic lemmas
# ---------------------------------------------------------------------------

def midpoint_point(x1: float, x2: float, b1: float, b2: float, m: float):
    """The point ``(x0, b0)`` reached from both ends with slopes ``+m`` and
    ``-m``."""
    if not (x1 < x2 and m > 0 and abs(b2 - b1) <= m * (x2 - x1)):
        raise BadOrdering("need x1 < x2, m > 0 and |b2 - b1| <= m (x2 - x1)")
    x0 = 0.5 * (x1 + x2) + (b2 - b1) / (2 * m)
    b0 = 0.5 * (b1 + b2) + 0.5 * m * (x2 - x1)
    return x0, b0


def midpoint_check(x1, x2, b1, b2, m, n: int, seed: int) -> tuple:
    """Monte Carlo ``P(B(x0) >= b0)`` for the bridge through the two ends
    and the Gaussian lower bound ``P(N >= (x2 - x1)^{1/2} m)``."""
    x0, b0 = midpoint_point(x1, x2, b1, b2, m)
    if x0 <= x1 or x0 >= x2:
        hit = np.full(n, (b1 if x0 <= x1 else b2) >= b0)
        return _fraction(hit), float(stats.norm.sf(math.sqrt(x2 - x1) * m))
    xs = np.array([x1, x0, x2])

    def blk(rng, size):
        return bridge_values(xs, b1, b2, rng.normal((size, 1)))[:, 1] >= b0

    p = _fraction(np.concatenate(run_blocks(blk, n, 8192, seed, "midpoint")))
    return p, float(stats.norm.sf(math.sqrt(x2 - x1) * m))


def gaussian_tail_check(z: float) -> tuple:
    """``(tail, bound)`` with the standard Gaussian tail from quadrature and
    the bound ``rho(z) / (2 z)``."""
    tail, _ = integrate.quad(lambda u: math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi), z,
                             math.inf, epsabs=0.0, epsrel=1e-12)
    bound = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) / (2 * z)
    return tail, bound


def reweighting_f2(x2, b, p0, q2, p_plus, lower_m2, penalty: Callable, n_nodes: int, n: int,
                   seed: int):
    """Density ratio of ``J_k(q2)`` against the Gaussian centred at
    ``lower_m2`` times the free expectation of ``exp(-penalty(path))`` for
    bridges from ``(p0, b_0)`` to ``(q2, x2)``.

    One set of normals is shared across all ``x2`` (common random numbers),
    so monotonicity in ``x2`` is inherited sample by sample when the
    penalty decreases as the path rises.
    """
    b0, b_plus = b
    s2 = (p_plus - q2) * (q2 - p0) / (p_plus - p0)
    m2 = (b0 * (p_plus - q2) + b_plus * (q2 - p0)) / (p_plus - p0)
    xs = np.linspace(p0, q2, n_nodes)
    z = RngStream(seed, 0, "reweighting-f2").normal((n, n_nodes - 2))
    out = []
    for v in np.atleast_1d(np.asarray(x2, float)):
        paths = bridge_values(xs, b0, v, z)
        expect = float(np.mean(np.exp(-penalty(paths))))
        out.append(math.exp(((v - lower_m2) ** 2 - (v - m2) ** 2) / (2 * s2)) * expect)
    return np.array(out)


def parabola_layers(grid: Grid, k: int, spacing: float = 0.0) -> tuple:
    """Deterministic layers ``-x^2/2 - (j - 1) * spacing``, ``j = 1..k+1``."""
    x = grid.points
    return tuple(Path(grid, -0.5 * x ** 2 - j * spacing) for j in range(k + 1))


def run_calibration(surrogate: SurrogateSpec, schedule: ScheduleParams, spec: HamiltonianSpec,
                    n: int, seed: int, n_triples: int = 3, n_jump: int = 2000,
                    settings: ChainSettings = ChainSettings(), headroom: float = 1.25
                    ) -> ExperimentReport:
    """Desk-scale constants from surrogate draws.

    ``c2_scale`` is ``headroom`` times the 0.99 quantile of the largest
    parabola deviation on the box, over ``T^2``. ``D_denominator`` is the
    least ``D`` (step 0.01) with ``exp(-D T) / D <= E_J[W_rest]`` on every
    sampled favorable triple.
    """
    t0 = time.perf_counter()
    res = sample_surrogate(surrogate, n, seed, "calibration")
    x = res.grid.points
    dev = np.max(np.abs(res.values + 0.5 * x ** 2), axis=(1, 2))
    q99 = float(np.quantile(dev, 0.99))
    c2 = headroom * q99 / schedule.T ** 2
    est = {"max_deviation_q50": _exact(float(np.median(dev))), "max_deviation_q99": _exact(q99),
           "c2_scale": _exact(c2)}
    calibrated = ScheduleParams(**{**schedule.__dict__, "c2_scale": c2})
    worst = math.inf
    used = 0
    for v in res.values:
        if used >= n_triples:
            break
        domain, boundary, fav = favorable_triple(surrogate_layers(res.grid, v), calibrated)
        if not fav.passed:
            continue
        _, layout = _layout_for(domain, boundary, calibrated, spec)
        w = sample_jump_ensemble(layout, boundary, n_jump, seed, f"calibration-W{used}", settings)
        lf, lj, _ = layout.evaluate(w.values)
        worst = min(worst, float(np.mean(np.exp(lf - lj))))
        used += 1
    D = math.nan
    if used and worst > 0:
        T = schedule.T
        D = 0.01
        while math.exp(-D * T) / D > worst:
            D += 0.01
        D = round(D, 2)
    est["E_J_Wrest_min"] = _exact(worst if used else math.nan)
    est["D_denominator"] = _exact(D)
    est["n_favorable_triples"] = _exact(used)
    return ExperimentReport("calibrate", est, _surrogate_echo(surrogate, calibrated, n), seed,
                            time.perf_counter() - t0)
