"""
Exact rejection sampling from Boltzmann-reweighted bridge laws, Monte Carlo
estimators, Gibbs window resampling, window chains for laws whose global
acceptance rate is out of reach, and a stochastic-dominance test.

Every acceptance step draws ``U`` uniform on ``(0, 1)`` and accepts when
``U < exp(log_weight)``; weights never exceed one, so accepted draws are
exact samples of the reweighted law.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .grid_paths import (BoundaryData, DomainMismatch, GlinesError, Grid,
                         LineEnsemble, Path, RngStream, bridge_values)
from .weights import EXP_CAP, HamiltonianSpec, INTEGRAL_CAP

__all__ = [
    "Estimate", "RngStream", "MaxAttemptsExceeded", "PositiveLogWeight",
    "estimate_from_values", "rejection_sample", "rejection_sample_batch",
    "estimate_expectation", "gibbs_resample", "DominanceConfig", "DominanceReport",
    "dominance_test", "sample_weighted_bridges", "worker_count", "run_blocks",
    "pair_cells", "segment_update", "SurrogateSpec", "sample_surrogate",
    "surrogate_layers", "ChainSettings", "ChainResult", "window_cuts",
    "sample_jump_curve", "sample_jump_ensemble", "jump_penalty_cells", "jump_coefficients",
]


class MaxAttemptsExceeded(GlinesError, RuntimeError):
    def __init__(self, attempts: int, mean_weight: float, partial=None):
        super().__init__(f"no acceptance after {attempts} attempts "
                         f"(running mean weight {mean_weight:.3e})")
        self.attempts = attempts
        self.mean_weight = mean_weight
        self.partial = partial


class PositiveLogWeight(GlinesError, ValueError):
    pass


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_samples: int
    n_accepted: int
    cap_hits: int = 0


def estimate_from_values(values, n_accepted: Optional[int] = None, cap_hits: int = 0) -> Estimate:
    """Sample mean with standard error ``sd / sqrt(n)``."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n == 0:
        return Estimate(math.nan, math.nan, 0, 0, cap_hits)
    sd = float(np.std(v, ddof=1)) if n > 1 else 0.0
    acc = n if n_accepted is None else int(n_accepted)
    return Estimate(float(np.mean(v)), sd / math.sqrt(n), n, acc, cap_hits)


def ratio_estimate(num: Estimate, den: Estimate) -> Estimate:
    """Ratio of two independent estimates with first-order error propagation."""
    if den.mean == 0:
        return Estimate(math.inf, math.inf, num.n_samples, num.n_accepted)
    r = num.mean / den.mean
    rel = math.hypot(num.stderr / num.mean if num.mean else 0.0,
                     den.stderr / den.mean)
    err = abs(r) * rel if num.mean else num.stderr / abs(den.mean)
    return Estimate(r, err, min(num.n_samples, den.n_samples),
                    min(num.n_accepted, den.n_accepted), num.cap_hits + den.cap_hits)


# ---------------------------------------------------------------------------
# Parallel blocks
# ---------------------------------------------------------------------------

def worker_count() -> int:
    """Worker cap from ``GLINES_THREADS`` (default 1). Never affects results."""
    try:
        return max(1, int(os.environ.get("GLINES_THREADS", "1")))
    except ValueError:
        return 1


def run_blocks(fn: Callable, n: int, block: int, seed: int, purpose: str) -> list:
    """Run ``fn(rng, size)`` on fixed-size blocks covering ``n`` replicas.

    Block ``b`` always receives ``RngStream(seed, b, purpose)``, so the list
    of results is identical for every worker count.
    """
    sizes = [min(block, n - i) for i in range(0, n, block)]
    jobs = [(RngStream(seed, b, purpose), m) for b, m in enumerate(sizes)]
    workers = min(worker_count(), len(jobs)) or 1
    if workers == 1:
        return [fn(r, m) for r, m in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


# ---------------------------------------------------------------------------
# Rejection sampling
# ---------------------------------------------------------------------------

def rejection_sample(proposal: Callable, log_weight: Callable, max_attempts: int,
                     rng: RngStream):
    """One exact draw from the law ``proposal`` reweighted by ``exp(log_weight)``.

    ``proposal(rng)`` returns a candidate; ``log_weight(candidate)`` must be
    ``<= 0``.
    """
    total = 0.0
    for attempt in range(1, max_attempts + 1):
        cand = proposal(rng)
        lw = float(log_weight(cand))
        if lw > 0:
            raise PositiveLogWeight(f"log weight {lw} > 0")
        w = math.exp(lw)
        total += w
        if rng.uniform() < w:
            return cand
    raise MaxAttemptsExceeded(max_attempts, total / max_attempts)


@dataclass
class BatchResult:
    samples: np.ndarray
    attempts: int
    accepted: int
    weight_sum: float
    cap_hits: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else math.nan


def rejection_sample_batch(propose: Callable, log_weight: Callable, n: int, rng: RngStream,
                           max_attempts: int, chunk: Optional[int] = None) -> BatchResult:
    """``n`` exact draws using vectorized proposals.

    ``propose(rng, m)`` returns an array of ``m`` candidates (first axis) and
    ``log_weight(array)`` returns their log weights. ``accepted`` counts all
    accepted candidates among ``attempts``, which may exceed ``n``.
    """
    chunk = chunk or max(n, 64)
    got, attempts, wsum = [], 0, 0.0
    have = 0
    while have < n:
        if attempts >= max_attempts:
            raise MaxAttemptsExceeded(attempts, wsum / max(attempts, 1),
                                      partial=np.concatenate(got) if got else None)
        m = int(min(chunk, max_attempts - attempts))
        cand = propose(rng, m)
        lw = np.asarray(log_weight(cand), dtype=float)
        if np.any(lw > 1e-12):
            raise PositiveLogWeight(f"log weight {lw.max()} > 0")
        w = np.exp(np.minimum(lw, 0.0))
        acc = rng.uniform(m) < w
        attempts += m
        wsum += float(w.sum())
        if acc.any():
            got.append(cand[acc])
            have += int(acc.sum())
    samples = np.concatenate(got)[:n]
    # every accepted candidate counts, including those past the n-th kept one
    return BatchResult(samples, attempts, have, wsum)


def estimate_expectation(observable: Callable, sampler: Callable, n: int,
                         rng: RngStream) -> Estimate:
    """Plain Monte Carlo mean of ``observable`` over ``n`` draws of ``sampler``.

    ``sampler(rng, n)`` returns a batch; ``observable(batch)`` returns one
    value per draw.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    vals = np.asarray(observable(sampler(rng, n)), dtype=float)
    return estimate_from_values(vals)


# ---------------------------------------------------------------------------
# Cell integrals shared by the window samplers
# ---------------------------------------------------------------------------

def pair_cells(upper, lower, rate: float, step: float) -> np.ndarray:
    """Trapezoid integrals of ``H(lower - upper)`` on consecutive cells."""
    z = np.exp(np.clip(rate * (np.asarray(lower) - np.asarray(upper)), -EXP_CAP, EXP_CAP))
    return 0.5 * step * (z[..., 1:] + z[..., :-1])


# ---------------------------------------------------------------------------
# Gibbs window resampling of a LineEnsemble
# ---------------------------------------------------------------------------

def _neighbour_values(ensemble: LineEnsemble, boundary: BoundaryData, i: int,
                      grid: Grid, i0: int, i1: int) -> Optional[np.ndarray]:
    """Values on box indices ``i0..i1`` of the function below curve ``i``:
    curve ``i+1`` where it is alive, the boundary layer elsewhere."""
    k = ensemble.domain.k
    layer = boundary.layer(i + 1) if i + 1 <= len(boundary.layers) else None
    out = None if layer is None else np.array(layer.values[i0:i1 + 1])
    if i + 1 <= k:
        c = ensemble.curves[i]
        c0 = grid.index_of(c.grid.a)
        lo, hi = max(i0, c0), min(i1, c0 + c.grid.n)
        if lo <= hi:
            if out is None:
                if lo > i0 or hi < i1:
                    raise DomainMismatch(f"curve {i + 1} does not cover the window")
                out = np.empty(i1 - i0 + 1)
            out[lo - i0:hi - i0 + 1] = c.values[lo - c0:hi - c0 + 1]
    return out


def gibbs_resample(ensemble: LineEnsemble, boundary: BoundaryData, window, spec: HamiltonianSpec,
                   rng: RngStream, max_attempts: int = 100_000) -> LineEnsemble:
    """Redraw curves ``K = (j0, j1)`` (1-based, inclusive) on ``(a, b)`` from
    the H_t-bridge law given everything else.

    Entrance and exit values are read at ``a`` and ``b``; the function below
    curve ``i`` is curve ``i+1`` where alive and the layer ``f_{i+1}``
    elsewhere; curve ``j0 - 1`` (if any) lies above the window.
    """
    (j0, j1), (a, b) = window
    if a == b:
        return ensemble
    grid = next((f.grid for f in boundary.layers if f is not None), None)
    if grid is None:
        c = ensemble.curves[j0 - 1].grid
        grid = Grid(ensemble.domain.ell0, ensemble.domain.r0,
                    int(round((ensemble.domain.r0 - ensemble.domain.ell0) / c.step)))
    i0, i1 = grid.index_of(a), grid.index_of(b)
    xw = grid.points[i0:i1 + 1]
    curves = list(ensemble.curves)
    offs = []
    for j in range(j0, j1 + 1):
        c = curves[j - 1]
        c0 = grid.index_of(c.grid.a)
        if i0 < c0 or i1 > c0 + c.grid.n:
            raise DomainMismatch(f"window outside the span of curve {j}")
        offs.append(c0)
    ends_a = np.array([curves[j - 1].values[i0 - offs[j - j0]] for j in range(j0, j1 + 1)])
    ends_b = np.array([curves[j - 1].values[i1 - offs[j - j0]] for j in range(j0, j1 + 1)])
    above = None
    if j0 >= 2:
        c = curves[j0 - 2]
        c0 = grid.index_of(c.grid.a)
        above = c.values[i0 - c0:i1 - c0 + 1]
    below = _neighbour_values(ensemble, boundary, j1, grid, i0, i1)
    rate, h = spec.rate, grid.step

    def propose(r):
        z = r.normal((j1 - j0 + 1, i1 - i0 - 1))
        return bridge_values(xw, ends_a, ends_b, z)

    def log_weight(cand):
        tot = 0.0
        if above is not None:
            tot += pair_cells(above, cand[0], rate, h).sum()
        for m in range(cand.shape[0] - 1):
            tot += pair_cells(cand[m], cand[m + 1], rate, h).sum()
        if below is not None:
            tot += pair_cells(cand[-1], below, rate, h).sum()
        return -min(tot, INTEGRAL_CAP)

    new = rejection_sample(propose, log_weight, max_attempts, rng)
    for m, j in enumerate(range(j0, j1 + 1)):
        c = curves[j - 1]
        vals = np.array(c.values)
        vals[i0 - offs[m]:i1 - offs[m] + 1] = new[m]
        curves[j - 1] = Path(c.grid, vals)
    return LineEnsemble(ensemble.domain, tuple(curves))


# ---------------------------------------------------------------------------
# Reweighted bridges on a common interval and the dominance test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DominanceConfig:
    """``k`` curves on ``grid`` from ``entrance`` to ``exit`` with an optional
    upper boundary ``upper`` (above curve 1) and lower boundary ``lower``
    (below curve ``k``)."""

    grid: Grid
    entrance: tuple
    exit: tuple
    upper: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None


def ensemble_log_weight(paths: np.ndarray, upper, lower, rate: float, step: float) -> np.ndarray:
    """Log Boltzmann weight of curves ``paths[..., j, :]`` on one interval."""
    tot = np.zeros(paths.shape[:-2])
    if upper is not None:
        tot = tot + pair_cells(upper, paths[..., 0, :], rate, step).sum(axis=-1)
    for j in range(paths.shape[-2] - 1):
        tot = tot + pair_cells(paths[..., j, :], paths[..., j + 1, :], rate, step).sum(axis=-1)
    if lower is not None:
        tot = tot + pair_cells(paths[..., -1, :], lower, rate, step).sum(axis=-1)
    return -np.minimum(tot, INTEGRAL_CAP)


def sample_weighted_bridges(config: DominanceConfig, spec: HamiltonianSpec, n: int,
                            rng: RngStream, max_attempts: int = 10_000_000) -> BatchResult:
    """Exact draws of the H_t-reweighted bridge ensemble of ``config``."""
    x = config.grid.points
    ent = np.asarray(config.entrance, dtype=float)
    ext = np.asarray(config.exit, dtype=float)
    k = len(ent)

    def propose(r, m):
        z = r.normal((m, k, len(x) - 2))
        return bridge_values(x, ent, ext, z)

    def lw(c):
        return ensemble_log_weight(c, config.upper, config.lower, spec.rate, config.grid.step)

    return rejection_sample_batch(propose, lw, n, rng, max_attempts, chunk=max(4 * n, 1024))


@dataclass
class DominanceReport:
    """``rejected`` lists (curve, point) pairs where ``high >= low`` is
    rejected; ``detected`` lists pairs where strict dominance is supported."""

    rejected: list
    detected: list
    pvalues_against: dict
    pvalues_for: dict
    level: float
    n: int
    pairs: int = 0

    @property
    def all_detected(self) -> bool:
        return len(self.detected) == self.pairs and not self.rejected


def dominance_test(config_low: DominanceConfig, config_high: DominanceConfig, test_points,
                   n: int, rng: RngStream, spec: HamiltonianSpec = HamiltonianSpec(1.0),
                   level: float = 1e-3) -> DominanceReport:
    """One-sided two-sample Kolmogorov-Smirnov comparison of marginals.

    For every curve and test point two tests run at the Bonferroni-corrected
    level: the null "high is stochastically at least low" (its rejection is
    reported in ``rejected``) and the null "high is at most low" (its
    rejection means dominance is detected).
    """
    low = sample_weighted_bridges(config_low, spec, n, RngStream(rng.master_seed, 0, "dominance-low"))
    high = sample_weighted_bridges(config_high, spec, n, RngStream(rng.master_seed, 1, "dominance-high"))
    grid = config_low.grid
    k = len(config_low.entrance)
    pairs = [(j, q) for j in range(k) for q in test_points]
    alpha = level / max(len(pairs), 1)
    rejected, detected, p_against, p_for = [], [], {}, {}
    for j, q in pairs:
        i = grid.index_of(q)
        a = high.samples[:, j, i]
        b = low.samples[:, j, i]
        # null: F_high <= F_low everywhere (high dominates)
        p1 = stats.ks_2samp(a, b, alternative="greater").pvalue
        # null: F_high >= F_low everywhere (low dominates)
        p2 = stats.ks_2samp(a, b, alternative="less").pvalue
        p_against[(j + 1, q)] = float(p1)
        p_for[(j + 1, q)] = float(p2)
        if p1 < alpha:
            rejected.append((j + 1, q))
        if p2 < alpha and p1 >= alpha:
            detected.append((j + 1, q))
    return DominanceReport(rejected, detected, p_against, p_for, level, n, len(pairs))


# ---------------------------------------------------------------------------
# Window chains: the Gibbs surrogate and the jump ensemble
# ---------------------------------------------------------------------------

def window_cuts(n: int, width: int, offset: int) -> np.ndarray:
    """Node indices ``0 = c_0 < ... < c_m = n`` cutting ``[0, n]`` into
    windows of ``width`` cells, the first one shortened by ``offset``."""
    width = max(1, int(width))
    first = offset % width or width
    inner = np.arange(first, n, width)
    return np.concatenate([[0], inner, [n]]).astype(int)


def segment_update(vals: np.ndarray, cuts: np.ndarray, cell_penalty: Callable,
                   step: float, rng: RngStream) -> tuple:
    """One Metropolis independence move per window for every row of ``vals``.

    Inside each window ``[c_s, c_{s+1}]`` a fresh Brownian bridge between the
    current values at the cuts is proposed and accepted with probability
    ``min(1, exp(old - new))`` where ``old``/``new`` are the window sums of
    ``cell_penalty`` (one value per cell). Windows share only their cut
    nodes, so they are updated independently and simultaneously; the move
    leaves the reweighted bridge law invariant. Returns ``(new_vals,
    accepted, proposed)``.
    """
    m, nodes = vals.shape
    n = nodes - 1
    seg = np.searchsorted(cuts, np.arange(nodes), side="right") - 1
    seg[-1] = len(cuts) - 2
    a, b = cuts[seg], cuts[seg + 1]
    frac = (np.arange(nodes) - a) / (b - a)
    walk = np.zeros((m, nodes))
    walk[:, 1:] = np.cumsum(math.sqrt(step) * rng.normal((m, n)), axis=1)
    noise = walk - walk[:, a] - frac * (walk[:, b] - walk[:, a])
    cand = vals[:, a] + frac * (vals[:, b] - vals[:, a]) + noise
    old = np.minimum(np.add.reduceat(cell_penalty(vals), cuts[:-1], axis=1), INTEGRAL_CAP)
    new = np.minimum(np.add.reduceat(cell_penalty(cand), cuts[:-1], axis=1), INTEGRAL_CAP)
    acc = np.log(rng.uniform(old.shape)) < old - new
    out = np.where(acc[:, seg], cand, vals)
    return out, int(acc.sum()), int(acc.size)


def _width_cycle(npu: int, widths_units: Sequence[float]) -> list:
    return [max(2, int(round(w * npu))) for w in widths_units]


@dataclass(frozen=True)
class ChainSettings:
    """Sweep count, cycled window widths (in units of length) and replica
    block size of a window chain."""

    sweeps: int = 200
    widths: tuple = (1.0, 0.5, 2.0, 4.0)
    block: int = 512


@dataclass(frozen=True)
class SurrogateSpec:
    """``k + 1`` curves on the box ``[-(k+1)T, (k+1)T]`` with consecutive
    H_t interactions, pinned at ``-x^2/2`` on both box edges and kept up by
    the floor ``-x^2/2 - floor_depth`` below the last curve.

    Each replica is an independent window chain started from stacked
    parabolas.
    """

    k: int
    T: float
    t: float = 1.0
    n_per_unit: int = 8
    floor_depth: float = 2.0
    chain: ChainSettings = ChainSettings()

    def grid(self) -> Grid:
        m = int(round((self.k + 1) * self.T * self.n_per_unit))
        return Grid(-m / self.n_per_unit, m / self.n_per_unit, 2 * m)


@dataclass
class ChainResult:
    grid: Grid
    values: np.ndarray
    accepted: int
    proposed: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else math.nan


def _cell_pairs(upper, lower, rate: float, step: float) -> np.ndarray:
    return pair_cells(upper, lower, rate, step)


def _surrogate_block(spec: SurrogateSpec, rng: RngStream, m: int) -> tuple:
    grid = spec.grid()
    x = grid.points
    K = spec.k + 1
    rate, h = HamiltonianSpec(spec.t).rate, grid.step
    par = -0.5 * x ** 2
    floor = par - spec.floor_depth
    L = np.empty((m, K, len(x)))
    bump = 1.0 - (x / grid.b) ** 2
    for j in range(K):
        L[:, j, :] = par + (K - j - spec.floor_depth) * bump

    def penalty(curves, which):
        def pen(v):
            out = np.zeros(v.shape[:-1] + (v.shape[-1] - 1,))
            up = np.concatenate([np.full(v.shape[:-2] + (1, v.shape[-1]), np.inf),
                                 L[:, :-1, :]], axis=1)[:, which, :]
            down = np.concatenate([L[:, 1:, :], np.broadcast_to(floor, (m, 1, len(x)))],
                                  axis=1)[:, which, :]
            has_up = which > 0
            out = out + _cell_pairs(v, down, rate, h)
            if has_up.any():
                out[:, has_up] += _cell_pairs(up[:, has_up], v[:, has_up], rate, h)
            return out
        return pen

    parities = [np.arange(p, K, 2) for p in (0, 1)]
    widths = _width_cycle(spec.n_per_unit, spec.chain.widths)
    acc = tot = 0
    for sweep in range(spec.chain.sweeps):
        w = widths[sweep % len(widths)]
        cuts = window_cuts(grid.n, w, int(rng.integers(0, w)))
        for which in parities:
            if which.size == 0:
                continue
            v = L[:, which, :].reshape(m * which.size, len(x))
            pen = penalty(L, which)

            def flat_pen(vv, which=which, pen=pen):
                return pen(vv.reshape(m, which.size, -1)).reshape(m * which.size, -1)

            new, a, t = segment_update(v, cuts, flat_pen, h, rng)
            L[:, which, :] = new.reshape(m, which.size, len(x))
            acc += a
            tot += t
    return L, acc, tot


def sample_surrogate(spec: SurrogateSpec, n: int, seed: int,
                     purpose: str = "surrogate") -> ChainResult:
    """``n`` independent surrogate ensembles, array shape ``(n, k+1, nodes)``."""
    parts = run_blocks(lambda r, m: _surrogate_block(spec, r, m), n, spec.chain.block,
                       seed, purpose)
    vals = np.concatenate([p[0] for p in parts])
    return ChainResult(spec.grid(), vals, sum(p[1] for p in parts), sum(p[2] for p in parts))


def surrogate_layers(grid: Grid, sample: np.ndarray) -> tuple:
    """Layers ``f_1..f_{k+1}`` (Paths on the box) of one surrogate sample."""
    return tuple(Path(grid, sample[j]) for j in range(sample.shape[0]))


def jump_penalty_cells(values: np.ndarray, coef, rate: float, step: float) -> np.ndarray:
    """Trapezoid jump integrals per cell of one curve on consecutive nodes.

    ``coef = (scale, div, low_left, low_right)`` per cell; the integrand at
    a node is ``scale * exp(rate * (low - value) / div)``.
    """
    sc, div, low_l, low_r = coef
    zl = np.exp(np.clip(rate * (low_l - values[..., :-1]) / div, -EXP_CAP, EXP_CAP))
    zr = np.exp(np.clip(rate * (low_r - values[..., 1:]) / div, -EXP_CAP, EXP_CAP))
    return 0.5 * step * sc * (zl + zr)


def jump_coefficients(layout, j: int, lo: int, hi: int) -> tuple:
    """Curve ``j``'s jump-interaction coefficients on cells ``lo..hi-1``
    (zero scale on inactive cells)."""
    active, scale, div, low_l, low_r = layout.curve_jump_profile(j)
    sl = slice(lo, hi)
    return (np.where(active[sl], scale[sl], 0.0), div[sl], low_l[sl], low_r[sl])


def _jump_block(layout, j, lo, hi, left, right, settings, rng, m):
    grid = layout.grid
    x = grid.points[lo:hi + 1]
    rate, h = layout.spec.rate, grid.step
    coef = jump_coefficients(layout, j, lo, hi)
    sc, _, low_l, low_r = coef
    chord = left + (right - left) * (x - x[0]) / (x[-1] - x[0])
    start = np.array(chord)
    lows = np.append(low_l, low_r[-1])
    busy = np.append(sc, 0.0) > 0
    start[busy] = np.maximum(chord[busy], lows[busy] + 0.5)
    start[0], start[-1] = left, right
    L = np.repeat(start[None, :], m, axis=0)
    n = hi - lo
    acc = tot = 0
    if n >= 2 and np.any(sc > 0):
        widths = _width_cycle(max(1, int(round(1.0 / h))), settings.widths)
        pen = lambda v: jump_penalty_cells(v, coef, rate, h)  # noqa: E731
        for sweep in range(settings.sweeps):
            w = widths[sweep % len(widths)]
            cuts = window_cuts(n, w, int(rng.integers(0, w)))
            L, a, t = segment_update(L, cuts, pen, h, rng)
            acc += a
            tot += t
    elif n >= 2:
        L = bridge_values(x, left, right, rng.normal((m, n - 1)))
    return L, acc, tot


def sample_jump_curve(layout, j: int, n: int, seed: int, purpose: str,
                      settings: ChainSettings = ChainSettings(), lo: Optional[int] = None,
                      hi: Optional[int] = None, left: Optional[float] = None,
                      right: Optional[float] = None, boundary: Optional[BoundaryData] = None
                      ) -> ChainResult:
    """``n`` draws of curve ``j`` of the jump ensemble on box indices
    ``lo..hi`` (default: its whole span) pinned at ``left``/``right``
    (default: the entrance and exit values of ``boundary``)."""
    lo = int(layout.il[j - 1]) if lo is None else int(lo)
    hi = int(layout.ir[j - 1]) if hi is None else int(hi)
    left = float(boundary.entrance[j - 1]) if left is None else float(left)
    right = float(boundary.exit[j - 1]) if right is None else float(right)
    parts = run_blocks(lambda r, m: _jump_block(layout, j, lo, hi, left, right, settings, r, m),
                       n, settings.block, seed, f"{purpose}-curve{j}")
    vals = np.concatenate([p[0] for p in parts])
    return ChainResult(layout.grid.sub(lo, hi), vals, sum(p[1] for p in parts),
                       sum(p[2] for p in parts))


def sample_jump_ensemble(layout, boundary: BoundaryData, n: int, seed: int, purpose: str,
                         settings: ChainSettings = ChainSettings()) -> ChainResult:
    """Independent draws of all ``k`` jump curves placed on the box grid
    (NaN outside each span)."""
    k = layout.k
    out = np.full((n, k, layout.grid.n + 1), np.nan)
    acc = tot = 0
    for j in range(1, k + 1):
        res = sample_jump_curve(layout, j, n, seed, purpose, settings, boundary=boundary)
        out[:, j - 1, layout.il[j - 1]:layout.ir[j - 1] + 1] = res.values
        acc += res.accepted
        tot += res.proposed
    return ChainResult(layout.grid, out, acc, tot)
