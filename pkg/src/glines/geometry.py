"""
Concave majorants, stopping endpoints, the lower boundary, pole sets, tent
maps, the favorable-event checker and the parameter schedule.

Paths are piecewise linear between grid points, so every hull vertex is a
grid point and every slope condition reduces to a finite scan.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid_paths import (BoundaryData, DomainSpec, GlinesError, Grid, Path,
                         make_grid)
from .weights import strip_cells


class TooFewPoints(GlinesError, ValueError):
    pass


class OutOfSpan(GlinesError, ValueError):
    pass


class LayerMissing(GlinesError, ValueError):
    pass


class ScheduleMismatch(GlinesError, ValueError):
    pass


class BadParams(GlinesError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Concave majorant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConcaveHull:
    """Least concave majorant of a finite point set.

    ``vertex_index`` holds the positions of the vertices in the input arrays.
    """

    support_x: np.ndarray
    support_y: np.ndarray
    segment_slopes: np.ndarray
    vertex_index: np.ndarray

    def __call__(self, x):
        return np.interp(x, self.support_x, self.support_y)

    @property
    def span(self):
        return float(self.support_x[0]), float(self.support_x[-1])


def default_tol(values) -> float:
    return 1e-9 * max(1.0, float(np.max(np.abs(values))))


def concave_majorant(grid_x, values, tol: Optional[float] = None) -> ConcaveHull:
    """Upper hull by one monotone-chain pass.

    A point lying within ``tol`` (vertically) of the segment joining its
    neighbours on the hull is not a vertex. ``tol=None`` uses
    ``1e-9 * max(1, max|values|)``.
    """
    x = np.asarray(grid_x, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or len(x) < 2:
        raise TooFewPoints("need at least two abscissae with matching values")
    if np.any(np.diff(x) <= 0):
        raise ValueError("abscissae must be strictly increasing")
    if tol is None:
        tol = default_tol(y)
    hull = []
    for i in range(len(x)):
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            # height of a above the chord from o to i
            lift = (y[a] - y[o]) - (y[i] - y[o]) * (x[a] - x[o]) / (x[i] - x[o])
            if lift <= tol:
                hull.pop()
            else:
                break
        hull.append(i)
    idx = np.array(hull, dtype=int)
    sx, sy = x[idx], y[idx]
    slopes = np.diff(sy) / np.diff(sx)
    return ConcaveHull(sx, sy, slopes, idx)


def one_sided_slopes(hull: ConcaveHull, x: float):
    """Left and right derivatives of the hull at ``x``.

    At the left end the left slope is ``+inf``; at the right end the right
    slope is ``-inf``.
    """
    sx = hull.support_x
    lo, hi = sx[0], sx[-1]
    scale = max(1.0, abs(lo), abs(hi)) * 1e-12
    if x < lo - scale or x > hi + scale:
        raise OutOfSpan(f"{x} outside hull span [{lo}, {hi}]")
    m = len(sx)
    i = int(np.searchsorted(sx, x))
    if i < m and abs(sx[i] - x) <= scale:
        left = hull.segment_slopes[i - 1] if i > 0 else math.inf
        right = hull.segment_slopes[i] if i < m - 1 else -math.inf
        return float(left), float(right)
    if i > 0 and abs(sx[i - 1] - x) <= scale:
        i -= 1
        left = hull.segment_slopes[i - 1] if i > 0 else math.inf
        right = hull.segment_slopes[i] if i < m - 1 else -math.inf
        return float(left), float(right)
    s = float(hull.segment_slopes[i - 1])
    return s, s


def right_slopes_at(hull: ConcaveHull, xs) -> np.ndarray:
    """Right derivative of the hull at each of ``xs`` (vectorized)."""
    xs = np.asarray(xs, dtype=float)
    seg = np.searchsorted(hull.support_x, xs, side="right") - 1
    out = np.full(xs.shape, -np.inf)
    ok = seg < len(hull.segment_slopes)
    out[ok] = hull.segment_slopes[np.clip(seg[ok], 0, None)]
    return out


def left_slopes_at(hull: ConcaveHull, xs) -> np.ndarray:
    """Left derivative of the hull at each of ``xs`` (vectorized)."""
    xs = np.asarray(xs, dtype=float)
    seg = np.searchsorted(hull.support_x, xs, side="left") - 1
    out = np.full(xs.shape, np.inf)
    ok = seg >= 0
    out[ok] = hull.segment_slopes[np.minimum(seg[ok], len(hull.segment_slopes) - 1)]
    return out


NET_EPS = 1e-9


def greedy_net(points: Sequence[float], s: float) -> list:
    """Left-to-right selection keeping the first point and every point at
    distance at least ``s`` from the last kept one. Skipped points lie
    strictly within ``s`` of a kept point."""
    out = []
    for p in points:
        if not out or p - out[-1] >= s - NET_EPS:
            out.append(p)
    return out


def is_net(pts: Sequence[float], chosen: Sequence[float], s: float) -> bool:
    c = np.asarray(chosen)
    return all(np.min(np.abs(c - p)) < s - NET_EPS or np.min(np.abs(c - p)) <= NET_EPS
               for p in pts)


def _net_chains(pts: list, s: float, allowed: np.ndarray):
    """Shortest net chains through allowed points.

    ``left[i]`` is the least size of a valid net of ``pts[:i+1]`` ending at
    ``i`` (``inf`` if none) and ``right[i]`` the same for ``pts[i:]``
    starting at ``i``; ``prev`` and ``nxt`` recover the chains.
    """
    n = len(pts)
    arr = np.asarray(pts)
    left = np.full(n, np.inf)
    right = np.full(n, np.inf)
    prev = np.full(n, -1)
    nxt = np.full(n, -1)
    for i in range(n):
        if allowed[i] and (i == 0 or arr[i] - arr[0] < s - NET_EPS):
            left[i] = 1
        for h in range(i):
            if allowed[i] and left[h] + 1 < left[i] and _pair_ok(arr, h, i, s):
                left[i], prev[i] = left[h] + 1, h
    for i in range(n - 1, -1, -1):
        if allowed[i] and (arr[-1] - arr[i] < s - NET_EPS or i == n - 1):
            right[i] = 1
        for h in range(n - 1, i, -1):
            if allowed[i] and right[h] + 1 < right[i] and _pair_ok(arr, i, h, s):
                right[i], nxt[i] = right[h] + 1, h
    return left, right, prev, nxt


def _pair_ok(arr: np.ndarray, i: int, j: int, s: float) -> bool:
    """Whether ``arr[i] < arr[j]`` may be consecutive net elements: gap at
    least ``s`` and every point strictly between them within ``s`` of one."""
    a, b = arr[i], arr[j]
    if b - a < s - NET_EPS:
        return False
    lo = int(np.searchsorted(arr, a + s - NET_EPS, side="left"))
    return not (lo < j and arr[lo] <= b - s + NET_EPS)


def _walk(i: int, links: np.ndarray) -> list:
    out = []
    while i >= 0:
        out.append(i)
        i = int(links[i])
    return out


def centred_net(points: Sequence[float], s: float, reach: float = math.inf) -> list:
    """An ``s``-net of ``points``: pairwise gaps ``>= s`` and every point
    strictly within ``s`` of the net (or in it).

    Among all such nets the preferred ones have no element in ``[0, s]``;
    otherwise exactly one element ``p0`` there whose larger gap to its net
    neighbours is as small as possible (within ``reach`` when attainable).
    Ties go to the smaller net. Exact search by dynamic programming over
    consecutive net elements.
    """
    pts = sorted(float(p) for p in points)
    if not pts:
        return []
    arr = np.asarray(pts)
    inside = (arr >= -NET_EPS) & (arr <= s + NET_EPS)
    left, right, prev, nxt = _net_chains(pts, s, ~inside)
    n = len(pts)
    best_key, best = None, None
    ends = [i for i in range(n) if np.isfinite(left[i]) and (i == n - 1 or arr[-1] - arr[i] < s - NET_EPS)]
    if ends:
        i = min(ends, key=lambda e: left[e])
        best_key = (0.0 >= reach, 0.0, left[i])
        best = _walk(i, prev)[::-1]
    for c in np.flatnonzero(inside):
        lo_opts = [(math.inf, 0, -1)] if (c == 0 or arr[c] - arr[0] < s - NET_EPS) else []
        lo_opts += [(arr[c] - arr[i], left[i], i) for i in range(c)
                    if np.isfinite(left[i]) and _pair_ok(arr, i, c, s)]
        hi_opts = [(math.inf, 0, -1)] if (c == n - 1 or arr[-1] - arr[c] < s - NET_EPS) else []
        hi_opts += [(arr[j] - arr[c], right[j], j) for j in range(c + 1, n)
                    if np.isfinite(right[j]) and _pair_ok(arr, c, j, s)]
        for gl, nl, i in lo_opts:
            for gh, nh, j in hi_opts:
                sc = max(gl, gh)
                key = (sc >= reach, sc, nl + 1 + nh)
                if best_key is None or key < best_key:
                    best_key = key
                    lpart = _walk(i, prev)[::-1] if i >= 0 else []
                    rpart = _walk(j, nxt) if j >= 0 else []
                    best = lpart + [int(c)] + rpart
    if best is None:
        return greedy_net(pts, s)
    return [pts[i] for i in best]


def tent_values(poles, pole_values, xs) -> np.ndarray:
    """Linear interpolation through ``(poles, pole_values)``."""
    return np.interp(xs, poles, pole_values)


# ---------------------------------------------------------------------------
# Parameter schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleParams:
    """Scale parameters of one resampling experiment.

    ``c2_scale`` sets the parabola-proximity tolerance ``c2_scale * T^2``
    used by the favorable-event check (default ``1/400``).
    """

    epsilon: Optional[float]
    k: int
    s: float
    E: Optional[float]
    T: float
    ell0: float
    r0: float
    Delta: float
    d: float
    dprime: float
    Delta_k: float
    c2_scale: float = 1.0 / 400.0

    @property
    def c2_tolerance(self) -> float:
        return self.c2_scale * self.T ** 2


def _derived(T: float, k: int):
    logT = math.log(T)
    Delta = 8.0 * logT
    return dict(T=T, ell0=-(k + 1) * T, r0=(k + 1) * T, Delta=Delta,
                d=64.0 * T ** -4 * logT ** 2, dprime=T ** -1.5,
                Delta_k=(k + 2) * Delta + k * math.log(k))


def parameter_schedule(epsilon: float, k: int, s: float, E: float,
                       c2_scale: float = 1.0 / 400.0) -> ScheduleParams:
    """``T = E max((log 1/eps)^{1/3}, s)`` and the quantities derived from it."""
    if E < 10:
        raise BadParams(f"need E >= 10, got E={E}")
    if s < 1:
        raise BadParams(f"need s >= 1, got s={s}")
    if k < 1:
        raise BadParams(f"need k >= 1, got k={k}")
    if not (0 < epsilon < 1):
        raise BadParams(f"need 0 < epsilon < 1, got epsilon={epsilon}")
    T = E * max(math.log(1.0 / epsilon) ** (1.0 / 3.0), s)
    return ScheduleParams(epsilon=epsilon, k=k, s=float(s), E=float(E),
                          c2_scale=c2_scale, **_derived(T, k))


def schedule_for_scale(T: float, k: int, s: float = 1.0, epsilon: Optional[float] = None,
                       c2_scale: float = 1.0 / 400.0) -> ScheduleParams:
    """Schedule at an explicitly chosen scale ``T`` (desk-scale runs)."""
    if T <= 1:
        raise BadParams(f"need T > 1, got T={T}")
    if s < 1:
        raise BadParams(f"need s >= 1, got s={s}")
    if k < 1:
        raise BadParams(f"need k >= 1, got k={k}")
    return ScheduleParams(epsilon=epsilon, k=k, s=float(s), E=None,
                          c2_scale=c2_scale, **_derived(float(T), k))


def box_grid(schedule: ScheduleParams, n_per_unit: int) -> Grid:
    """Grid on the box with step ``1/n_per_unit``; the box edge is rounded
    to the nearest lattice point so that 0 is a grid point."""
    m = int(round(schedule.r0 * n_per_unit))
    return make_grid(-m / n_per_unit, m / n_per_unit, 2 * m)


# ---------------------------------------------------------------------------
# Stopping endpoints
# ---------------------------------------------------------------------------

def _layer(boundary: BoundaryData, j: int) -> Path:
    if j < 1 or j > len(boundary.layers) or boundary.layer(j) is None:
        raise LayerMissing(f"layer f_{j} is required")
    return boundary.layer(j)


def _window(grid: Grid, lo: float, hi: float):
    i0 = max(0, int(math.ceil((lo - grid.a) / grid.step - 1e-9)))
    i1 = min(grid.n, int(math.floor((hi - grid.a) / grid.step + 1e-9)))
    return i0, i1


def stopping_endpoints(boundary: BoundaryData, schedule: ScheduleParams, j: int):
    """Endpoints ``(l_j, r_j)`` read off the concave majorant of ``f_{j+1}``
    near ``-/+(k+1-j)T``, snapped to the grid."""
    k, T = schedule.k, schedule.T
    f = _layer(boundary, j + 1)
    grid = f.grid
    xs = grid.points
    c = (k + 1 - j) * T
    out = []
    for side in (-1, 1):
        centre = side * c
        i0, i1 = _window(grid, centre - T / 2, centre + T / 2)
        hull = concave_majorant(xs[i0:i1 + 1], f.values[i0:i1 + 1])
        b0, b1 = _window(grid, centre - T / 5, centre + T / 5)
        cand = xs[b0:b1 + 1]
        if side < 0:
            ok = right_slopes_at(hull, cand) <= c
            x = cand[np.argmax(ok)] if ok.any() else grid.point(grid.snap((-(k + 1 - j) + 0.2) * T))
        else:
            ok = left_slopes_at(hull, cand) >= -c
            x = cand[len(ok) - 1 - np.argmax(ok[::-1])] if ok.any() else grid.point(
                grid.snap(((k + 1 - j) - 0.2) * T))
        out.append(float(x))
    return out[0], out[1]


def stopping_domain(boundary: BoundaryData, schedule: ScheduleParams) -> DomainSpec:
    ends = [stopping_endpoints(boundary, schedule, j) for j in range(1, schedule.k + 1)]
    grid = _layer(boundary, schedule.k + 1).grid
    return DomainSpec(schedule.k, tuple(e[0] for e in ends), tuple(e[1] for e in ends),
                      grid.a, grid.b)


# ---------------------------------------------------------------------------
# Lower boundary
# ---------------------------------------------------------------------------

def lower_boundary(boundary: BoundaryData, domain: DomainSpec) -> Path:
    """The piecewise lower boundary assembled from ``f_2..f_{k+1}``.

    Junction points ``l_i, r_i`` (``i >= 2``) carry ``max(f_i, f_{i+1})``.
    """
    k = domain.k
    layers = [_layer(boundary, j) for j in range(2, k + 2)]
    grid = layers[0].grid
    vals = np.array(layers[0].values)
    il = [grid.index_of(x) for x in domain.ell]
    ir = [grid.index_of(x) for x in domain.r]
    for i in range(2, k + 1):
        f_next = layers[i - 1].values  # f_{i+1}
        if i < k:
            vals[il[i - 1] + 1:il[i]] = f_next[il[i - 1] + 1:il[i]]
            vals[ir[i] + 1:ir[i - 1]] = f_next[ir[i] + 1:ir[i - 1]]
        else:
            vals[il[k - 1] + 1:ir[k - 1]] = f_next[il[k - 1] + 1:ir[k - 1]]
    for i in range(2, k + 1):
        f_i, f_next = layers[i - 2].values, layers[i - 1].values
        for p in (il[i - 1], ir[i - 1]):
            vals[p] = max(f_i[p], f_next[p])
    return Path(grid, vals)


def linear_bound_gap(boundary: BoundaryData, domain: DomainSpec, g_under: Path,
                     T: float, j: int) -> float:
    """Smallest slack of ``g(x) <= f_{j+1}(l_j) + (k+1-j)T (x - l_j)`` and its
    mirror image on ``(l_j, r_j)``; non-negative when the bound holds."""
    k = domain.k
    f = _layer(boundary, j + 1)
    grid = g_under.grid
    lo, hi = grid.index_of(domain.ell[j - 1]), grid.index_of(domain.r[j - 1])
    x = grid.points[lo + 1:hi]
    g = g_under.values[lo + 1:hi]
    m = (k + 1 - j) * T
    left = f.values[lo] + m * (x - grid.point(lo)) - g
    right = f.values[hi] + m * (grid.point(hi) - x) - g
    return float(min(left.min(), right.min())) if len(x) else math.inf


# ---------------------------------------------------------------------------
# Pole sets and tent maps
# ---------------------------------------------------------------------------

BUNDLE_INVARIANTS = ("Pole", "Pole_agree", "Pole_three", "Pole_i",
                     "Tent_lowerbound", "Tent_slope")


@dataclass(frozen=True)
class PoleTentBundle:
    g_under: Path
    pole_sets: tuple      # P_2 .. P_{k+1}, sorted arrays of grid abscissae
    joint_poles: np.ndarray
    tents: tuple          # Tent_2 .. Tent_{k+1}, Paths on [l_j, r_j]
    d: float              # strip widths after snapping to whole cells
    dprime: float
    notes: tuple = field(default_factory=tuple)


def _hull_vertices(grid: Grid, values: np.ndarray) -> np.ndarray:
    return concave_majorant(grid.points, values).support_x


def build_pole_tent(boundary: BoundaryData, domain: DomainSpec,
                    schedule: ScheduleParams) -> PoleTentBundle:
    """Pole sets ``P_{j+1}`` and tent maps ``Tent_{j+1}`` for ``j = 1..k``."""
    k, T, s = domain.k, schedule.T, schedule.s
    if k != schedule.k:
        raise ScheduleMismatch("domain and schedule disagree on k")
    g_under = lower_boundary(boundary, domain)
    grid = g_under.grid
    h = grid.step
    dprime = strip_cells(schedule.dprime, h) * h
    d = strip_cells(schedule.d, h) * h
    if s / h < 1:
        raise ScheduleMismatch("s must span at least one grid step")
    il = [grid.index_of(x) for x in domain.ell]
    ir = [grid.index_of(x) for x in domain.r]
    notes = []

    def g_for(j):
        f = _layer(boundary, j + 1).values
        g = np.array(f)
        g[il[j - 1] + 1:ir[j - 1]] = g_under.values[il[j - 1] + 1:ir[j - 1]]
        return g

    central_vertices = _hull_vertices(grid, g_for(k))
    shared = centred_net([x for x in central_vertices if -T / 2 < x < T / 2], s, T / 4)

    pole_sets, tents = [], []
    for j in range(1, k + 1):
        lj, rj = domain.ell[j - 1], domain.r[j - 1]
        verts = _hull_vertices(grid, g_for(j))
        verts = verts[(verts >= lj) & (verts <= rj)]
        sel = [lj]
        for y in verts:
            if lj < y <= -T / 2 and y - sel[-1] >= s - NET_EPS:
                sel.append(y)
        if shared:
            while len(sel) > 1 and shared[0] - sel[-1] < s - NET_EPS:
                sel.pop()
            sel.extend(shared)
        for y in verts:
            if T / 2 <= y < rj and y - sel[-1] >= s - NET_EPS:
                sel.append(y)
        # the right end is always a pole; nearer outer vertices are covered by it
        while len(sel) > 1 and rj - sel[-1] < s - NET_EPS and sel[-1] >= T / 2:
            sel.pop()
        if rj - sel[-1] < s - NET_EPS:
            notes.append(f"P_{j + 1}: right end {rj} is within s of {sel[-1]}")
        sel.append(rj)
        poles = np.array(sel)
        # keep the end strips near l_i, r_i (i > j) free of poles
        for i in range(j + 1, k + 1):
            li, ri = domain.ell[i - 1], domain.r[i - 1]
            near_l = (poles > li) & (poles < li + 2 * dprime - 1e-12)
            near_r = (poles > ri - 2 * dprime + 1e-12) & (poles < ri)
            extra = []
            if near_l.any():
                extra.append(li)
            if near_r.any():
                extra.append(ri)
            poles = np.concatenate([poles[~(near_l | near_r)], extra])
        poles = np.unique(poles)
        pole_sets.append(poles)
        f_next = _layer(boundary, j + 1)
        pidx = np.array([grid.index_of(p) for p in poles])
        pv = g_under.values[pidx].copy()
        pv[0] = f_next.values[pidx[0]]
        pv[-1] = f_next.values[pidx[-1]]
        sub = grid.sub(il[j - 1], ir[j - 1])
        tents.append(Path(sub, tent_values(poles, pv, sub.points)))
    joint = np.unique(np.concatenate(pole_sets))
    return PoleTentBundle(g_under, tuple(pole_sets), joint, tuple(tents), d, dprime, tuple(notes))


def check_bundle(bundle: PoleTentBundle, domain: DomainSpec, schedule: ScheduleParams) -> dict:
    """Evaluate the six bundle invariants. Maps each name to ``(ok, margin)``
    where a non-negative margin means the invariant holds."""
    k, T, s = domain.k, schedule.T, schedule.s
    grid = bundle.g_under.grid
    eps = 1e-9 * grid.step
    out = {}

    m_pole = math.inf
    for j, P in enumerate(bundle.pole_sets, start=1):
        lj, rj = domain.ell[j - 1], domain.r[j - 1]
        has_ends = np.any(np.abs(P - lj) < eps) and np.any(np.abs(P - rj) < eps)
        inside = P.min() >= lj - eps and P.max() <= rj + eps
        m_pole = min(m_pole, ((rj - lj) + 1) - len(P))
        if not (has_ends and inside):
            m_pole = -math.inf
    out["Pole"] = (m_pole >= 0, m_pole)

    centre = [tuple(np.round(P[(P > -T / 2) & (P < T / 2)] / grid.step).astype(int))
              for P in bundle.pole_sets]
    agree = all(c == centre[0] for c in centre)
    out["Pole_agree"] = (agree, 0.0 if agree else -1.0)

    m_three, ok_three = math.inf, True
    for P in bundle.pole_sets:
        inwin = P[(P >= -eps) & (P <= s + eps)]
        if len(inwin) > 1:
            ok_three, m_three = False, -math.inf
            continue
        if len(inwin) == 1:
            p0 = inwin[0]
            lower, upper = P[P < p0 - eps], P[P > p0 + eps]
            if not (len(lower) and len(upper)):
                ok_three, m_three = False, -math.inf
                continue
            for gap in (p0 - lower.max(), upper.min() - p0):
                ok_three &= bool(gap >= s - eps and gap < T / 4)
                m_three = min(m_three, gap - s, T / 4 - gap)
    out["Pole_three"] = (ok_three, m_three)

    ok_i = True
    for j, P in enumerate(bundle.pole_sets, start=1):
        for i in range(j, k + 1):
            li, ri = domain.ell[i - 1], domain.r[i - 1]
            if np.any((P > li + eps) & (P < li + 2 * bundle.dprime - eps)):
                ok_i = False
            if np.any((P > ri - 2 * bundle.dprime + eps) & (P < ri - eps)):
                ok_i = False
    out["Pole_i"] = (ok_i, 0.0 if ok_i else -1.0)

    m_low, m_slope = math.inf, math.inf
    for j, tent in enumerate(bundle.tents, start=1):
        i0 = grid.index_of(tent.grid.a)
        g = bundle.g_under.values[i0:i0 + tent.grid.n + 1]
        slack = tent.values - g + 3 * (k + 1 - j) * s * T
        if len(slack) > 2:
            m_low = min(m_low, float(slack[1:-1].min()))
        slopes = np.abs(np.diff(tent.values)) / grid.step
        m_slope = min(m_slope, 2 * (k + 1 - j) * T - float(slopes.max()))
    out["Tent_lowerbound"] = (m_low >= 0, m_low)
    out["Tent_slope"] = (m_slope >= 0, m_slope)
    return out


# ---------------------------------------------------------------------------
# Favorable event
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FavorableReport:
    passed: bool
    failures: frozenset
    margins: dict


def _jct_masks(grid: Grid, ell: Sequence[float], r: Sequence[float], k: int):
    """Boolean node masks of the junction region for layers ``1..k+1``."""
    masks = []
    for j in range(1, k + 2):
        m = np.ones(grid.n + 1, dtype=bool)
        if j <= k:
            m[grid.index_of(ell[j - 1]) + 1:grid.index_of(r[j - 1])] = False
        masks.append(m)
    return masks


def _oscillation(values: np.ndarray, mask: np.ndarray, lag_max: int) -> float:
    worst = 0.0
    for lag in range(1, lag_max + 1):
        both = mask[lag:] & mask[:-lag]
        if both.any():
            worst = max(worst, float(np.max(np.abs(values[lag:] - values[:-lag])[both])))
    return worst


def favorable_margins(values: np.ndarray, grid: Grid, schedule: ScheduleParams,
                      masks: Sequence[np.ndarray], c2_tolerance: Optional[float] = None) -> dict:
    """Worst slack of the parabola, oscillation and ordering conditions on
    the node sets given by ``masks`` (one per layer)."""
    tol = schedule.c2_tolerance if c2_tolerance is None else c2_tolerance
    x = grid.points
    nlag = max(1, int(math.floor(schedule.d / grid.step + 1e-9)))
    c2 = c3 = c4 = math.inf
    for j, m in enumerate(masks):
        f = values[j]
        c2 = min(c2, tol - float(np.max(np.abs(f + 0.5 * x ** 2)[m])))
        c3 = min(c3, schedule.Delta - _oscillation(f, m, nlag))
        if j + 1 < len(masks):
            both = m & masks[j + 1]
            if both.any():
                c4 = min(c4, float(np.min((f - values[j + 1] + 3 * schedule.Delta)[both])))
    return {"C2": c2, "C3": c3, "C4": c4}


def check_favorable(ell: Sequence[float], r: Sequence[float], boundary: BoundaryData,
                    schedule: ScheduleParams, c2_tolerance: Optional[float] = None) -> FavorableReport:
    """Conditions C1 to C4 on the junction region of ``(ell, r)``."""
    k = schedule.k
    layers = [_layer(boundary, j) for j in range(1, k + 2)]
    grid = layers[0].grid
    values = np.array([f.values for f in layers])
    margins = favorable_margins(values, grid, schedule, _jct_masks(grid, ell, r, k), c2_tolerance)
    worst_c1 = 0.0
    for j in range(1, k + 1):
        lj, rj = stopping_endpoints(boundary, schedule, j)
        worst_c1 = max(worst_c1, abs(lj - ell[j - 1]), abs(rj - r[j - 1]))
    c1_ok = worst_c1 <= 1e-9 * grid.step
    margins["C1"] = 0.0 if c1_ok else -worst_c1
    failures = {c for c in ("C2", "C3", "C4") if margins[c] < 0}
    if not c1_ok:
        failures.add("C1")
    failures = frozenset(failures)
    return FavorableReport(not failures, failures, margins)


def box_conditions(values: np.ndarray, grid: Grid, schedule: ScheduleParams,
                   c2_tolerance: Optional[float] = None) -> dict:
    """Parabola, oscillation and ordering slacks on the whole box."""
    masks = [np.ones(grid.n + 1, dtype=bool)] * values.shape[0]
    return favorable_margins(values, grid, schedule, masks, c2_tolerance)
