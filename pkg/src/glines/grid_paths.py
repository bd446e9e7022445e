"""
Grids, single curves, multi-curve ensembles on staggered intervals and exact
Brownian-bridge sampling.

Every curve lives on a sub-range of one uniform grid. Structural points are
snapped to grid indices once and the indices are reused afterwards, so that
pairwise-curve integrals never need interpolation.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class GlinesError(Exception):
    """Base class of every error raised by this package."""


class NonPositiveSpan(GlinesError, ValueError):
    pass


class ZeroSteps(GlinesError, ValueError):
    pass


class OffGrid(GlinesError, ValueError):
    pass


class DegenerateInterval(GlinesError, ValueError):
    pass


class DomainMismatch(GlinesError, ValueError):
    pass


# Relative tolerance (in units of the step) used to decide grid membership.
SNAP_TOL = 1e-6


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``a + i*step`` for ``i = 0..n``."""

    a: float
    b: float
    n: int
    step: float = field(init=False)

    def __post_init__(self):
        if not (self.a < self.b):
            raise NonPositiveSpan(f"need a < b, got a={self.a}, b={self.b}")
        if int(self.n) < 1:
            raise ZeroSteps(f"need n >= 1, got n={self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "step", (self.b - self.a) / self.n)

    @property
    def points(self) -> np.ndarray:
        return self.a + self.step * np.arange(self.n + 1)

    def __len__(self) -> int:
        return self.n + 1

    def index_of(self, x: float) -> int:
        """Index of the grid point equal to ``x``; raises OffGrid otherwise."""
        pos = (x - self.a) / self.step
        i = int(round(pos))
        if abs(pos - i) > SNAP_TOL or i < 0 or i > self.n:
            raise OffGrid(f"{x} is not a point of grid [{self.a}, {self.b}] / {self.n}")
        return i

    def snap(self, x: float) -> int:
        """Index of the grid point nearest to ``x`` (clipped to the grid)."""
        return int(min(max(round((x - self.a) / self.step), 0), self.n))

    def point(self, i: int) -> float:
        return self.a + self.step * i

    def sub(self, i0: int, i1: int) -> "Grid":
        """Sub-grid spanning indices ``i0..i1`` with the same step."""
        if not (0 <= i0 < i1 <= self.n):
            raise DegenerateInterval(f"bad index range [{i0}, {i1}]")
        return Grid(self.point(i0), self.point(i1), i1 - i0)


def make_grid(a: float, b: float, n: int) -> Grid:
    """Uniform grid on ``[a, b]`` with ``n`` steps."""
    return Grid(float(a), float(b), n)


@dataclass(frozen=True)
class Path:
    """Values of one curve at the points of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n + 1,):
            raise DomainMismatch(
                f"path has {v.shape} values, grid needs {self.grid.n + 1}")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def at(self, x: float) -> float:
        return float(self.values[self.grid.index_of(x)])

    def interp(self, x) -> np.ndarray:
        """Piecewise-linear evaluation at arbitrary points of the span."""
        return np.interp(x, self.grid.points, self.values)


@dataclass(frozen=True)
class DomainSpec:
    """Nested resampling intervals ``[ell_j, r_j]`` inside ``[ell0, r0]``."""

    k: int
    ell: tuple
    r: tuple
    ell0: float
    r0: float

    def __post_init__(self):
        object.__setattr__(self, "ell", tuple(float(v) for v in self.ell))
        object.__setattr__(self, "r", tuple(float(v) for v in self.r))
        if self.k < 1 or len(self.ell) != self.k or len(self.r) != self.k:
            raise DomainMismatch("need k >= 1 and k left and right endpoints")

    def ordering_ok(self, s: float) -> bool:
        """True when ell0 < ell_1 < ... < ell_k < 0 and s < r_k < ... < r_1 < r0."""
        left = (self.ell0,) + self.ell + (0.0,)
        right = (s,) + tuple(reversed(self.r)) + (self.r0,)
        return all(x < y for x, y in zip(left, left[1:])) and all(
            x < y for x, y in zip(right, right[1:]))

    def check_grid(self, grid: Grid) -> None:
        for x in (self.ell0, self.r0) + self.ell + self.r:
            grid.index_of(x)


@dataclass(frozen=True)
class LineEnsemble:
    """Curves ``1..k``; curve ``j`` spans ``[ell_j, r_j]`` exactly."""

    domain: DomainSpec
    curves: tuple

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        if len(self.curves) != self.domain.k:
            raise DomainMismatch("need one curve per index")
        for j, c in enumerate(self.curves):
            lo, hi = self.domain.ell[j], self.domain.r[j]
            if not (np.isclose(c.grid.a, lo) and np.isclose(c.grid.b, hi)):
                raise DomainMismatch(
                    f"curve {j + 1} spans [{c.grid.a}, {c.grid.b}], expected [{lo}, {hi}]")


@dataclass(frozen=True)
class BoundaryData:
    """Entrance/exit values and boundary layers ``f_1..f_{k+1}``.

    Each layer is a Path on the full box ``[ell0, r0]``, or ``None`` for an
    absent layer (which contributes nothing to any weight).
    """

    entrance: tuple
    exit: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "entrance", tuple(float(v) for v in self.entrance))
        object.__setattr__(self, "exit", tuple(float(v) for v in self.exit))
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def k(self) -> int:
        return len(self.layers) - 1

    def layer(self, j: int) -> Optional[Path]:
        """Layer ``f_j`` (1-based)."""
        return self.layers[j - 1]

    def consistent_with(self, domain: DomainSpec, atol: float = 1e-12) -> bool:
        for j in range(1, domain.k + 1):
            f = self.layer(j)
            if f is None:
                continue
            if abs(f.at(domain.ell[j - 1]) - self.entrance[j - 1]) > atol:
                return False
            if abs(f.at(domain.r[j - 1]) - self.exit[j - 1]) > atol:
                return False
        return True


def boundary_from_layers(layers: Sequence[Optional[Path]], domain: DomainSpec) -> BoundaryData:
    """BoundaryData whose entrance/exit values are read off the layers."""
    ent, ext = [], []
    for j in range(1, domain.k + 1):
        f = layers[j - 1]
        ent.append(f.at(domain.ell[j - 1]))
        ext.append(f.at(domain.r[j - 1]))
    return BoundaryData(tuple(ent), tuple(ext), tuple(layers))


def _purpose_key(purpose) -> int:
    if isinstance(purpose, (int, np.integer)):
        return int(purpose)
    return zlib.crc32(str(purpose).encode("utf-8"))


class RngStream:
    """Counter-based random stream keyed by ``(master_seed, replica, purpose)``.

    Draws come from a Philox generator whose key is derived from the three
    identifiers, so the sequence does not depend on how work is scheduled.
    """

    def __init__(self, master_seed: int, replica: int = 0, purpose="main"):
        self.master_seed = int(master_seed) & (2**64 - 1)
        self.stream_id = (int(replica), purpose)
        ss = np.random.SeedSequence([self.master_seed, int(replica) & (2**64 - 1),
                                     _purpose_key(purpose)])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def child(self, replica: int, purpose="main") -> "RngStream":
        """Independent stream derived from this stream's identifiers."""
        seed = zlib.crc32(repr((self.master_seed, self.stream_id)).encode()) ^ self.master_seed
        return RngStream(seed, replica, purpose)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


def bridge_values(x: np.ndarray, xa, xb, normals: np.ndarray) -> np.ndarray:
    """Brownian bridges through ``(x[0], xa)`` and ``(x[-1], xb)`` built from
    the given standard normals.

    Sequential conditional-Gaussian construction: given ``v`` at ``x_i`` the
    next value is Gaussian with mean ``v + h (xb - v) / (b - x_i)`` and
    variance ``h (b - x_{i+1}) / (b - x_i)``. The recursion telescopes after
    dividing by ``b - x_i``, so it is evaluated with one cumulative sum.

    ``normals`` has shape ``(..., len(x) - 2)``; ``xa`` and ``xb`` broadcast
    against the leading dimensions.
    """
    x = np.asarray(x, dtype=float)
    n = len(x) - 1
    xa = np.asarray(xa, dtype=float)[..., None]
    xb = np.asarray(xb, dtype=float)[..., None]
    lead = np.broadcast_shapes(xa.shape[:-1], xb.shape[:-1], normals.shape[:-1])
    out = np.empty(lead + (n + 1,))
    out[..., 0] = xa[..., 0]
    out[..., n] = xb[..., 0]
    if n >= 2:
        b = x[-1]
        rem = b - x[:-1]  # b - x_i, i = 0..n-1
        h = np.diff(x)
        # u_{i+1} = u_i + sqrt(h_i / ((b - x_i)(b - x_{i+1}))) Z_i
        coef = np.sqrt(h[:-1] / (rem[:-1] * rem[1:]))
        u = (xa - xb) / rem[0] + np.cumsum(coef * normals, axis=-1)
        out[..., 1:n] = xb + rem[1:] * u
    return out


def sample_bridge(grid: Grid, xa: float, xb: float, rng: RngStream) -> Path:
    """One exact Brownian bridge from ``(a, xa)`` to ``(b, xb)`` on ``grid``."""
    if not (np.isfinite(xa) and np.isfinite(xb)):
        raise ValueError("bridge endpoints must be finite")
    z = rng.normal(max(grid.n - 1, 0))
    return Path(grid, bridge_values(grid.points, xa, xb, z))


def sample_bridges(x: np.ndarray, xa, xb, rng: RngStream, size: int) -> np.ndarray:
    """``size`` independent bridges on the abscissae ``x`` (shape ``(size, len(x))``)."""
    z = rng.normal((size, max(len(x) - 2, 0)))
    return bridge_values(x, xa, xb, z)


def affine_residual(values: np.ndarray) -> np.ndarray:
    """Subtract the chord through the first and last entries (last axis),
    assuming uniform spacing."""
    v = np.asarray(values, dtype=float)
    n = v.shape[-1] - 1
    w = np.arange(n + 1) / n
    out = v - (v[..., :1] * (1.0 - w) + v[..., -1:] * w)
    out[..., 0] = 0.0
    out[..., -1] = 0.0
    return out


def bridge_part(path: Path, a: float, b: float) -> Path:
    """``h(x) - (x-a)/(b-a) h(b) - (b-x)/(b-a) h(a)`` on ``[a, b]``."""
    i0 = path.grid.index_of(a)
    i1 = path.grid.index_of(b)
    if i0 >= i1:
        raise DegenerateInterval(f"need a < b, got a={a}, b={b}")
    return Path(path.grid.sub(i0, i1), affine_residual(path.values[i0:i1 + 1]))


def bridge_conditional_law(ell: float, r: float, a: float, b: float, q: float):
    """Mean and variance at ``q`` of a Brownian bridge from ``(ell, a)`` to ``(r, b)``."""
    if not (ell < r):
        raise DegenerateInterval(f"need ell < r, got ell={ell}, r={r}")
    if not (ell <= q <= r):
        raise ValueError(f"q={q} outside [{ell}, {r}]")
    span = r - ell
    mean = ((r - q) * a + (q - ell) * b) / span
    var = (q - ell) * (r - q) / span
    return mean, var
