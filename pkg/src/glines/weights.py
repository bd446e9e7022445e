"""
Hamiltonians, Boltzmann weights on nested domains and the jump/rest split.

All integrals use the trapezoid rule cell by cell on the shared grid. A cell
``[x_c, x_{c+1}]`` of the box belongs to exactly one region: region ``i`` is
the part of ``[ell_i, r_i]`` not covered by ``[ell_{i+1}, r_{i+1}]`` (region
``k`` is all of ``[ell_k, r_k]``). In region ``i`` the full integrand at a
node is

    sum_{j<i} H(L_{j+1} - L_j) + H(f_{i+1} - L_i)

and the jump integrand is either ``H(f_{i+1} - L_i)`` (end strips of width
d') or ``sum_{j<=i} H^{j,i+1}(f_{i+1} - L_j)`` (pole strips of width d), or
zero. The chain inequality makes the jump integrand at most the full
integrand node by node; the node value actually used is the minimum of the
two, so that ``log_full <= log_jump`` also holds exactly in floating point.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .grid_paths import (BoundaryData, DomainMismatch, DomainSpec, GlinesError,
                         Grid, LineEnsemble, OffGrid, make_grid)

# Exponent clamp applied before every exp.
EXP_CAP = 700.0
# Clamp on every accumulated integral of a Hamiltonian.
INTEGRAL_CAP = 1e6


class BadIndices(GlinesError, ValueError):
    pass


class BundleStale(GlinesError, ValueError):
    pass


@dataclass(frozen=True)
class HamiltonianSpec:
    """Parameter ``t >= 1`` of ``H_t(x) = exp(t^{1/3} x)``."""

    t: float = 1.0

    def __post_init__(self):
        if not (self.t >= 1.0):
            raise ValueError(f"need t >= 1, got t={self.t}")

    @property
    def rate(self) -> float:
        return float(np.cbrt(self.t))


@dataclass(frozen=True)
class WeightBreakdown:
    log_full: float
    log_jump: float
    log_rest: float
    cap_hit: bool = False


def _exp_clamped(z):
    return np.exp(np.clip(z, -EXP_CAP, EXP_CAP))


def ham_ht(spec: HamiltonianSpec, x):
    """``exp(t^{1/3} x)`` with the exponent clamped to ``[-EXP_CAP, EXP_CAP]``."""
    out = _exp_clamped(spec.rate * np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def ham_ht_jk(spec: HamiltonianSpec, j: int, k: int, x):
    """Weakened Hamiltonian ``(k-1)^{-1} exp(t^{1/3} x / (k-j))`` for ``1 <= j < k``."""
    if not (1 <= j < k):
        raise BadIndices(f"need 1 <= j < k, got j={j}, k={k}")
    out = _exp_clamped(spec.rate * np.asarray(x, dtype=float) / (k - j)) / (k - 1)
    return float(out) if np.ndim(out) == 0 else out


def chain_interaction(spec: HamiltonianSpec, y) -> np.ndarray:
    """``sum_j H_t(y_{j+1} - y_j)`` along the last axis."""
    y = np.asarray(y, dtype=float)
    return np.sum(ham_ht(spec, np.diff(y, axis=-1)), axis=-1)


def chain_weakened(spec: HamiltonianSpec, y) -> np.ndarray:
    """``sum_{j=1}^{k} H_t^{j,k+1}(y_{k+1} - y_j)`` along the last axis."""
    y = np.asarray(y, dtype=float)
    k = y.shape[-1] - 1
    gaps = y[..., -1:] - y[..., :-1]
    div = (k + 1) - np.arange(1, k + 1)
    return np.sum(_exp_clamped(spec.rate * gaps / div), axis=-1) / k


def exp_chain_gap(y) -> tuple:
    """Both sides of ``-sum e^{y_{j+1}-y_j} <= -k e^{(y_{k+1}-y_1)/k}``."""
    y = np.asarray(y, dtype=float)
    k = y.shape[-1] - 1
    lhs = -np.sum(np.exp(np.diff(y, axis=-1)), axis=-1)
    rhs = -k * np.exp((y[..., -1] - y[..., 0]) / k)
    return lhs, rhs


def _grid_of(boundary: BoundaryData, domain: DomainSpec, step: Optional[float]) -> Grid:
    for f in boundary.layers:
        if f is not None:
            return f.grid
    if step is None:
        raise DomainMismatch("no layer present and no step given")
    return make_grid(domain.ell0, domain.r0, int(round((domain.r0 - domain.ell0) / step)))


def strip_cells(width: float, step: float) -> int:
    """Number of whole cells used for a strip of the given width."""
    if width <= 0:
        return 0
    return max(1, int(round(width / step)))


class WeightLayout:
    """Cell classification for one (domain, boundary, pole set) triple.

    Evaluates full and jump log-weights for batches of ensembles given as
    arrays of shape ``(..., k, len(grid))`` (values outside a curve's span
    are ignored).
    """

    def __init__(self, domain: DomainSpec, boundary: BoundaryData, grid: Grid,
                 spec: HamiltonianSpec, joint_poles: Optional[Sequence[float]] = None,
                 d: float = 0.0, dprime: float = 0.0):
        self.domain, self.grid, self.spec = domain, grid, spec
        k = domain.k
        if boundary.k != k:
            raise DomainMismatch(f"boundary has {boundary.k + 1} layers, need {k + 1}")
        self.k = k
        self.il = np.array([grid.index_of(x) for x in domain.ell])
        self.ir = np.array([grid.index_of(x) for x in domain.r])
        ncell = grid.n
        reg = np.zeros(ncell, dtype=int)
        for i in range(1, k + 1):
            reg[self.il[i - 1]:self.ir[i - 1]] = i
        self.reg = reg
        # Layer values f_{i+1} for i = 1..k; absent layers flagged.
        lows = np.zeros((k, grid.n + 1))
        present = np.zeros(k, dtype=bool)
        for i in range(1, k + 1):
            f = boundary.layer(i + 1)
            if f is not None:
                if f.grid.n != grid.n or not np.isclose(f.grid.a, grid.a):
                    raise DomainMismatch("layers must live on the box grid")
                lows[i - 1] = f.values
                present[i - 1] = True
        self.lows, self.present = lows, present
        self.nd = strip_cells(d, grid.step)
        self.ndp = strip_cells(dprime, grid.step)
        self.kind = self._classify(joint_poles if joint_poles is not None else ())

    def _classify(self, poles) -> np.ndarray:
        k, grid = self.k, self.grid
        il, ir = self.il, self.ir
        kind = np.zeros(grid.n, dtype=np.int8)
        try:
            pidx = np.array(sorted(grid.index_of(p) for p in poles), dtype=int)
        except OffGrid as exc:
            raise BundleStale(str(exc)) from exc
        zero = grid.snap(0.0)
        pole_mask = np.zeros(grid.n, dtype=bool)
        for i in range(1, k + 1):
            lo, hi = il[i - 1], ir[i - 1]
            if i < k:
                left_end, right_start = il[i], ir[i]
                lp = pidx[(pidx > lo) & (pidx <= left_end)]
                rp = pidx[(pidx >= right_start) & (pidx < hi)]
                left_cells = (lo, left_end)
                right_cells = (right_start, hi)
            else:
                lp = pidx[(pidx > lo) & (pidx < zero)]
                rp = pidx[(pidx >= zero) & (pidx < hi)]
                left_cells = right_cells = (lo, hi)
            for p in lp:
                a, b = max(p - self.nd, left_cells[0]), min(p, left_cells[1])
                pole_mask[a:b] = True
            for p in rp:
                a, b = max(p, right_cells[0]), min(p + self.nd, right_cells[1])
                pole_mask[a:b] = True
        kind[pole_mask & (self.reg > 0)] = 2
        for i in range(1, k + 1):
            lo, hi = il[i - 1], ir[i - 1]
            kind[lo:min(lo + self.ndp, hi)] = 1
            kind[max(hi - self.ndp, lo):hi] = 1
        return kind

    # -- node integrands -------------------------------------------------
    def _node_terms(self, L: np.ndarray):
        """Full, end-strip and pole-strip integrands per region and node.

        Returns arrays of shape ``(..., k, n+1)`` indexed by region.
        """
        k, tau = self.k, self.spec.rate
        L = np.nan_to_num(np.asarray(L, dtype=float))
        lows = self.lows
        boundary_term = np.where(self.present[:, None],
                                 _exp_clamped(tau * (lows - L)), 0.0)
        if k > 1:
            pair = _exp_clamped(tau * (L[..., 1:, :] - L[..., :-1, :]))
            acc = np.cumsum(pair, axis=-2)
            zeros = np.zeros(acc.shape[:-2] + (1,) + acc.shape[-1:])
            prefix = np.concatenate([zeros, acc], axis=-2)
        else:
            prefix = np.zeros_like(L)
        full = prefix + boundary_term
        pole = np.zeros_like(L)
        for i in range(1, k + 1):
            if not self.present[i - 1]:
                continue
            div = (i + 1) - np.arange(1, i + 1)
            gaps = lows[i - 1] - L[..., :i, :]
            pole[..., i - 1, :] = np.sum(
                _exp_clamped(tau * gaps / div[:, None]), axis=-2) / i
        return full, boundary_term, pole

    def cell_integrals(self, L: np.ndarray):
        """Per-cell full and jump integrals, shape ``(..., n)`` each."""
        full, end, pole = self._node_terms(L)
        cells = np.arange(self.grid.n)
        active = self.reg > 0
        ridx = np.where(active, self.reg - 1, 0)
        fl = full[..., ridx, cells]
        fr = full[..., ridx, cells + 1]
        jl = np.where(self.kind == 1, end[..., ridx, cells],
                      np.where(self.kind == 2, pole[..., ridx, cells], 0.0))
        jr = np.where(self.kind == 1, end[..., ridx, cells + 1],
                      np.where(self.kind == 2, pole[..., ridx, cells + 1], 0.0))
        fl = np.where(active, fl, 0.0)
        fr = np.where(active, fr, 0.0)
        jl = np.minimum(np.where(active, jl, 0.0), fl)
        jr = np.minimum(np.where(active, jr, 0.0), fr)
        half = 0.5 * self.grid.step
        return half * (fl + fr), half * (jl + jr)

    def unguarded_jump_cells(self, L: np.ndarray) -> np.ndarray:
        """Jump integrals per cell without the node-wise minimum."""
        _, end, pole = self._node_terms(L)
        cells = np.arange(self.grid.n)
        ridx = np.where(self.reg > 0, self.reg - 1, 0)
        vals = []
        for off in (0, 1):
            v = np.where(self.kind == 1, end[..., ridx, cells + off],
                         np.where(self.kind == 2, pole[..., ridx, cells + off], 0.0))
            vals.append(np.where(self.reg > 0, v, 0.0))
        return 0.5 * self.grid.step * (vals[0] + vals[1])

    def evaluate(self, L: np.ndarray):
        """``(log_full, log_jump, cap_hit)`` arrays for a batch of ensembles."""
        fc, jc = self.cell_integrals(L)
        i_full = np.sum(fc, axis=-1)
        i_jump = np.sum(jc, axis=-1)
        cap = i_full > INTEGRAL_CAP
        return (-np.minimum(i_full, INTEGRAL_CAP), -np.minimum(i_jump, INTEGRAL_CAP), cap)

    def curve_jump_profile(self, j: int):
        """Per-cell description of the jump interaction seen by curve ``j``.

        Returns ``(active, scale, div, low)`` over cells where the integrand
        at node ``x`` of an active cell is
        ``scale * exp(t^{1/3} (low(x) - L_j(x)) / div)`` and ``low`` is given
        on nodes for the cell's own region (``low_left``, ``low_right``).
        """
        cells = np.arange(self.grid.n)
        reg = self.reg
        own_end = (self.kind == 1) & (reg == j)
        pole = (self.kind == 2) & (reg >= j)
        active = (own_end | pole) & (reg > 0)
        ridx = np.where(reg > 0, reg - 1, 0)
        present = self.present[ridx]
        active &= present
        scale = np.where(own_end, 1.0, 1.0 / np.maximum(reg, 1))
        div = np.where(own_end, 1.0, (reg + 1 - j).astype(float))
        div = np.maximum(div, 1.0)
        low_left = self.lows[ridx, cells]
        low_right = self.lows[ridx, cells + 1]
        return active, scale, div, low_left, low_right


def ensemble_array(ensemble: LineEnsemble, grid: Grid) -> np.ndarray:
    """Curves placed on the box grid; entries outside a span are NaN."""
    k = ensemble.domain.k
    out = np.full((k, grid.n + 1), np.nan)
    for j, c in enumerate(ensemble.curves):
        i0 = grid.index_of(c.grid.a)
        i1 = grid.index_of(c.grid.b)
        if i1 - i0 != c.grid.n:
            raise DomainMismatch("curve step differs from the box step")
        out[j, i0:i1 + 1] = c.values
    return out


def _check_pair(ensemble: LineEnsemble, boundary: BoundaryData):
    if boundary.k != ensemble.domain.k:
        raise DomainMismatch("ensemble and boundary disagree on k")


def log_weight_full(ensemble: LineEnsemble, boundary: BoundaryData,
                    spec: HamiltonianSpec) -> float:
    """Log Boltzmann weight of the ensemble on its nested domain (always <= 0)."""
    _check_pair(ensemble, boundary)
    step = ensemble.curves[0].grid.step
    grid = _grid_of(boundary, ensemble.domain, step)
    layout = WeightLayout(ensemble.domain, boundary, grid, spec)
    full, _, _ = layout.evaluate(ensemble_array(ensemble, grid))
    return float(full)


def log_weight_decomposition(ensemble: LineEnsemble, boundary: BoundaryData, bundle,
                             spec: HamiltonianSpec, d: float, dprime: float) -> WeightBreakdown:
    """Full, jump and rest log-weights; ``log_full <= log_jump <= 0`` always."""
    _check_pair(ensemble, boundary)
    step = ensemble.curves[0].grid.step
    grid = _grid_of(boundary, ensemble.domain, step)
    poles = () if bundle is None else bundle.joint_poles
    layout = WeightLayout(ensemble.domain, boundary, grid, spec, poles, d, dprime)
    full, jump, cap = layout.evaluate(ensemble_array(ensemble, grid))
    full, jump = float(full), float(jump)
    return WeightBreakdown(full, jump, full - jump, bool(cap))
