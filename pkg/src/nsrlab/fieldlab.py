"""Grids, sampled field stacks, parabolic cylinders and exponent algebra.

Everything here is immutable; quadrature helpers are cached because the same
ball stencils are requested over and over by the functional ladders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Union

import numpy as np

INF = math.inf

# Smallest admissible cylinder radius, in grid spacings.
RESOLUTION_FLOOR = 4.0
DEFAULT_SUBSAMPLES = 8
MIN_CELLS = 8

Exponent = Union[int, float, Fraction]


class ValidationError(ValueError):
    """Raised when a grid, field or cylinder violates its invariants."""


# ---------------------------------------------------------------------------
# Grid and field containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Cubic periodic space grid with uniform time nodes ``t0 + k*dt``."""

    nx: int
    ny: int
    nz: int
    nt: int
    domain_length: float
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if not (self.nx == self.ny == self.nz):
            raise ValidationError(
                f"grid must be cubic, got ({self.nx}, {self.ny}, {self.nz})")
        if self.nx < MIN_CELLS:
            raise ValidationError(f"need at least {MIN_CELLS} cells per axis, got {self.nx}")
        if self.nt < 2:
            raise ValidationError(f"need at least 2 time samples, got {self.nt}")
        if not (self.domain_length > 0 and math.isfinite(self.domain_length)):
            raise ValidationError(f"domain_length must be positive, got {self.domain_length}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not math.isfinite(self.t0):
            raise ValidationError("t0 must be finite")

    @classmethod
    def cube(cls, n: int, nt: int, domain_length: float, dt: float, t0: float = 0.0) -> "Grid":
        return cls(n, n, n, nt, domain_length, dt, t0)

    @property
    def n(self) -> int:
        return self.nx

    @property
    def h(self) -> float:
        return self.domain_length / self.nx

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.nt - 1)

    @property
    def time_extent(self) -> tuple[float, float]:
        return (self.t0, self.t_end)

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    def coords(self) -> np.ndarray:
        return self.h * np.arange(self.nx)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self.coords()
        return np.meshgrid(x, x, x, indexing="ij")

    def time_index(self, t: float) -> int:
        """Index of the node at time ``t``; ``t`` must sit on a node."""
        k = (t - self.t0) / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-6 or not (0 <= kr < self.nt):
            raise ValidationError(f"t={t} is not a time node of the grid")
        return kr

    def replace(self, **changes) -> "Grid":
        values = dict(nx=self.nx, ny=self.ny, nz=self.nz, nt=self.nt,
                      domain_length=self.domain_length, dt=self.dt, t0=self.t0)
        values.update(changes)
        return Grid(**values)


def make_grid(nx: int, nt: int, domain_length: float, dt: float, t0: float = 0.0) -> Grid:
    return Grid(nx, nx, nx, nt, float(domain_length), float(dt), float(t0))


def _frozen_array(a, shape, name):
    if a is None:
        return None
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.shape != shape:
        raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite samples")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FieldStack:
    """Space-time samples of velocity ``u`` and optionally ``p``, ``w``, ``f``.

    Layout in memory: vectors are ``(nt, 3, n, n, n)``, scalars ``(nt, n, n, n)``,
    with array axes ordered ``(x1, x2, x3)``. When ``w`` is absent it is derived
    from ``u`` spectrally on demand.
    """

    grid: Grid
    u: np.ndarray
    p: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        g = self.grid
        vec = (g.nt, 3) + g.shape
        sca = (g.nt,) + g.shape
        object.__setattr__(self, "u", _frozen_array(self.u, vec, "u"))
        object.__setattr__(self, "p", _frozen_array(self.p, sca, "p"))
        object.__setattr__(self, "w", _frozen_array(self.w, vec, "w"))
        object.__setattr__(self, "f", _frozen_array(self.f, vec, "f"))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def w_derived(self) -> bool:
        return self.w is None

    @property
    def is_solution(self) -> bool:
        return bool(self.meta.get("solution", True))

    def fields_present(self) -> list[str]:
        names = ["u"]
        names += [k for k in ("p", "w", "f") if getattr(self, k) is not None]
        return names


# ---------------------------------------------------------------------------
# Cylinders and cutoffs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParabolicCylinder:
    """``B(center_x, r) x (center_t - r**2, center_t)``."""

    center_x: tuple[float, float, float]
    center_t: float
    r: float

    def __post_init__(self):
        cx = tuple(float(c) for c in self.center_x)
        if len(cx) != 3:
            raise ValidationError("center_x must be a 3-vector")
        object.__setattr__(self, "center_x", cx)
        if not self.r > 0:
            raise ValidationError(f"radius must be positive, got {self.r}")

    @property
    def t_start(self) -> float:
        return self.center_t - self.r ** 2

    def with_radius(self, r: float) -> "ParabolicCylinder":
        return ParabolicCylinder(self.center_x, self.center_t, r)

    @property
    def volume(self) -> float:
        return 4.0 * math.pi / 3.0 * self.r ** 5


def smoothstep5(s):
    """Quintic step: 0 for s <= 0, 1 for s >= 1, C^2 in between."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass(frozen=True)
class Cutoff:
    """Radial bump equal to 1 on ``B(plateau_fraction*rho)`` and 0 outside ``B(rho)``."""

    rho: float
    plateau_fraction: float = 0.75

    def __post_init__(self):
        if not self.rho > 0:
            raise ValidationError("cutoff radius must be positive")
        if not 0 < self.plateau_fraction < 1:
            raise ValidationError("plateau_fraction must lie in (0, 1)")

    @property
    def plateau_radius(self) -> float:
        return self.plateau_fraction * self.rho

    def __call__(self, dist):
        a = self.plateau_radius
        s = (np.asarray(dist, dtype=float) - a) / (self.rho - a)
        return 1.0 - smoothstep5(s)


# ---------------------------------------------------------------------------
# Exponent algebra
# ---------------------------------------------------------------------------


class Kind(str, Enum):
    velocity = "velocity"
    velocity_gradient = "velocity_gradient"
    vorticity = "vorticity"
    vorticity_gradient = "vorticity_gradient"


# (lower, upper) bounds on 3/p + 2/q for each criterion.
_SCALE_BOUNDS = {
    Kind.velocity: (1, 2),
    Kind.velocity_gradient: (2, 3),
    Kind.vorticity: (2, 3),
    Kind.vorticity_gradient: (3, 4),
}


def as_exponent(x) -> Union[Fraction, float]:
    """Exact representation of an exponent; infinity stays ``math.inf``."""
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "infinity", "oo"):
            return INF
        return Fraction(x)
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    x = float(x)
    if math.isinf(x):
        if x < 0:
            raise ValueError("exponents cannot be -inf")
        return INF
    return Fraction(x).limit_denominator(10 ** 6)


def reciprocal(x) -> Fraction:
    x = as_exponent(x)
    return Fraction(0) if x == INF else 1 / x


def scale_sum(p, q) -> Fraction:
    """``3/p + 2/q`` in exact arithmetic."""
    return 3 * reciprocal(p) + 2 * reciprocal(q)


@dataclass(frozen=True)
class RegionVerdict:
    admissible: bool
    scale_sum: Optional[Fraction]
    boundary_flags: dict
    rejection_reason: Optional[str] = None


def classify_exponents(kind, p, q) -> RegionVerdict:
    """Place ``(p, q)`` against the admissible region of a criterion kind.

    For ``velocity`` the first exponent is the starred one, for
    ``vorticity_gradient`` the sharp one.
    """
    kind = Kind(kind)
    p, q = as_exponent(p), as_exponent(q)
    flags = {"lower": False, "upper": False}
    if p < 1 or q < 1:
        return RegionVerdict(False, None, flags, "exponents must lie in [1, inf]")
    s = scale_sum(p, q)
    lo, hi = _SCALE_BOUNDS[kind]
    flags = {"lower": s == lo, "upper": s == hi}
    if s < lo:
        return RegionVerdict(False, s, flags, f"3/p+2/q = {s} < {lo}")
    if s > hi:
        return RegionVerdict(False, s, flags, f"3/p+2/q = {s} > {hi}")
    if kind is Kind.vorticity and p == 1 and q == INF:
        return RegionVerdict(False, s, flags, "(p, q) = (1, inf) is excluded for vorticity")
    return RegionVerdict(True, s, flags, None)


@dataclass(frozen=True)
class Conjugates:
    p: Union[Fraction, float]
    p_star: Optional[Fraction]
    p_sharp: Optional[Fraction]
    notes: tuple = ()


def conjugate_exponents(p, q=None) -> Conjugates:
    """``1/p* = 1/p - 1/3`` and ``1/p = 1/p# - 1/3``, with ``1 <= p# <= 3/2``.

    ``q`` does not enter either relation; when given it is only range-checked.
    """
    p = as_exponent(p)
    if q is not None and as_exponent(q) < 1:
        raise ValueError("q must be >= 1")
    notes = []
    inv = reciprocal(p)
    if p < 1:
        raise ValueError("p must be >= 1")
    star_inv = inv - Fraction(1, 3)
    p_star = None
    if star_inv > 0:
        p_star = 1 / star_inv
    else:
        notes.append("p_star undefined for p >= 3")
    sharp = 1 / (inv + Fraction(1, 3))
    p_sharp = None
    if 1 <= sharp <= Fraction(3, 2):
        p_sharp = sharp
    else:
        notes.append(f"p_sharp = {sharp} outside [1, 3/2]")
    return Conjugates(p, p_star, p_sharp, tuple(notes))


def p_from_star(p_star) -> Fraction:
    return 1 / (reciprocal(p_star) + Fraction(1, 3))


def p_from_sharp(p_sharp) -> Fraction:
    return 1 / (reciprocal(p_sharp) - Fraction(1, 3))


@dataclass(frozen=True)
class ExponentPair:
    p: Union[Fraction, float]
    q: Union[Fraction, float]
    kind: Kind

    def __post_init__(self):
        object.__setattr__(self, "p", as_exponent(self.p))
        object.__setattr__(self, "q", as_exponent(self.q))
        object.__setattr__(self, "kind", Kind(self.kind))

    @property
    def verdict(self) -> RegionVerdict:
        return classify_exponents(self.kind, self.p, self.q)


@dataclass(frozen=True)
class FunctionalExponents:
    """Borderline exponents ``3/p + 2/q = 3`` with the derived ``p*`` and ``p#``."""

    p: Union[Fraction, float]
    q: Union[Fraction, float]
    p_star: Optional[Fraction]
    p_sharp: Optional[Fraction]

    @classmethod
    def from_q(cls, q) -> "FunctionalExponents":
        q = as_exponent(q)
        if q < 1:
            raise ValidationError("q must be >= 1")
        p = 1 / (1 - Fraction(2, 3) * reciprocal(q))
        c = conjugate_exponents(p)
        return cls(p, q, c.p_star, c.p_sharp)

    @classmethod
    def from_pair(cls, p, q) -> "FunctionalExponents":
        fe = cls.from_q(q)
        if as_exponent(p) != fe.p:
            raise ValidationError(
                f"(p, q) = ({p}, {q}) violates 3/p + 2/q = 3; borderline p is {fe.p}")
        return fe

    def as_dict(self) -> dict:
        return {k: fmt_exponent(getattr(self, k)) for k in ("p", "q", "p_star", "p_sharp")}


def fmt_exponent(x) -> Optional[str]:
    if x is None:
        return None
    if x == INF:
        return "inf"
    return str(x)


def exponent_float(x) -> float:
    return INF if x == INF else float(x)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BallStencil:
    """Cell indices and volume weights approximating a ball on a cell grid.

    ``shift`` holds, for each cell cut by the sphere, the centroid of its inside
    part relative to the cell centre (in cells). :meth:`integrate` uses it for a
    first-order correction so the boundary layer does not bias the integral.
    """

    index: tuple
    weights: np.ndarray
    center: tuple
    r: float
    h: float
    shift: Optional[np.ndarray] = None

    def gather(self, arr: np.ndarray) -> np.ndarray:
        ix, iy, iz = self.index
        return arr[..., ix[:, None, None], iy[None, :, None], iz[None, None, :]]

    def integrate(self, vals: np.ndarray) -> np.ndarray:
        """``int_B F`` for gathered samples ``vals`` (trailing axes are the stencil)."""
        out = np.sum(vals * self.weights, axis=(-3, -2, -1))
        # Cell-average corrections from central differences: the curvature
        # term lifts the midpoint rule to fourth order in the interior, the
        # centroid term removes the first-order bias of cells cut by the
        # sphere. The outermost layer of the block carries no weight, so the
        # wrap-around of np.roll never contributes.
        lap = 0.0
        for a, ax in enumerate((-3, -2, -1)):
            up, dn = np.roll(vals, -1, axis=ax), np.roll(vals, 1, axis=ax)
            lap = lap + (up - 2.0 * vals + dn)
            if self.shift is not None:
                out = out + np.sum(0.5 * (up - dn) * (self.weights * self.shift[a]),
                                   axis=(-3, -2, -1))
        return out + np.sum(lap * self.weights, axis=(-3, -2, -1)) / 24.0

    def mean(self, vals: np.ndarray) -> np.ndarray:
        return self.integrate(vals) / self.total

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0


def _axis_cells(c, r, n, periodic):
    """Index set and signed cell-centre offsets (in cells) along one axis."""
    if periodic and 2 * r + 3 >= n:
        idx = np.arange(n)
        disp = np.mod(idx - c + n / 2.0, n) - n / 2.0
        return idx, disp
    lo = int(math.floor(c - r)) - 1
    hi = int(math.ceil(c + r)) + 1
    raw = np.arange(lo, hi + 1)
    disp = raw - c
    if periodic:
        return np.mod(raw, n), disp
    keep = (raw >= 0) & (raw < n)
    if not np.all(keep):
        # cells outside the array are only allowed if they miss the ball
        outside = np.abs(disp[~keep]) - 0.5
        if np.any(outside < r):
            raise ValidationError("ball leaves the sampled window")
    return raw[keep], disp[keep]


@lru_cache(maxsize=512)
def _ball_stencil_cached(center, r, h, n, subsamples, periodic):
    rc = r / h
    axes = [_axis_cells(c / h, rc, n, periodic) for c in center]
    idx = tuple(a[0] for a in axes)
    d0, d1, d2 = (axes[0][1][:, None, None], axes[1][1][None, :, None], axes[2][1][None, None, :])
    near = sum(np.maximum(np.abs(d) - 0.5, 0.0) ** 2 for d in (d0, d1, d2))
    far = sum((np.abs(d) + 0.5) ** 2 for d in (d0, d1, d2))
    frac = np.where(far <= rc * rc, 1.0, 0.0)
    partial = (near < rc * rc) & (far > rc * rc)
    if np.any(partial):
        pi, pj, pk = np.nonzero(partial)
        s = subsamples
        off = (np.arange(s) + 0.5) / s - 0.5
        ox, oy, oz = np.meshgrid(off, off, off, indexing="ij")
        ox, oy, oz = ox.ravel(), oy.ravel(), oz.ravel()
        px = axes[0][1][pi][:, None] + ox
        py = axes[1][1][pj][:, None] + oy
        pz = axes[2][1][pk][:, None] + oz
        inside = (px * px + py * py + pz * pz) < rc * rc
        cnt = inside.sum(axis=1)
        frac[pi, pj, pk] = cnt / inside.shape[1]
        shift = np.zeros((3,) + frac.shape)
        safe = np.maximum(cnt, 1)
        for a, o in enumerate((ox, oy, oz)):
            shift[a, pi, pj, pk] = (inside * o).sum(axis=1) / safe
        shift.setflags(write=False)
    else:
        shift = None
    weights = frac * h ** 3
    weights.setflags(write=False)
    return BallStencil(idx, weights, center, r, h, shift)


def ball_stencil(center, r, h, n, subsamples=DEFAULT_SUBSAMPLES, periodic=True) -> BallStencil:
    """Volume-fraction weights of ``B(center, r)`` over cells of side ``h``.

    Cells are centred on ``i*h``; a cell straddling the sphere gets the share
    of its ``subsamples**3`` stratified points that fall inside. With
    ``periodic`` the displacement is the minimum image, so each torus cell is
    counted once even for balls larger than the box.
    """
    center = tuple(round(float(c), 12) for c in center)
    if subsamples < 1:
        raise ValidationError("subsamples must be >= 1")
    return _ball_stencil_cached(center, float(r), float(h), int(n), int(subsamples), bool(periodic))


def hat_weights(t_nodes0: float, dt: float, nt: int, a: float, b: float):
    """Weights integrating the piecewise-linear interpolant over ``[a, b]``."""
    tol = 1e-9 * dt
    t_end = t_nodes0 + dt * (nt - 1)
    if a < t_nodes0 - tol or b > t_end + tol or b < a:
        raise ValidationError(
            f"time window [{a}, {b}] outside sampled extent [{t_nodes0}, {t_end}]")
    a = max(a, t_nodes0)
    b = min(b, t_end)
    w = np.zeros(nt)
    # local coordinates in units of dt
    sa, sb = (a - t_nodes0) / dt, (b - t_nodes0) / dt
    k0 = max(int(math.floor(sa)), 0)
    k1 = min(int(math.ceil(sb)), nt - 1)
    for k in range(k0, k1):
        lo, hi = max(sa, k), min(sb, k + 1)
        if hi <= lo:
            continue
        # integral of (k+1-s) and (s-k) over [lo, hi]
        w[k] += ((k + 1) * (hi - lo) - 0.5 * (hi * hi - lo * lo)) * dt
        w[k + 1] += (0.5 * (hi * hi - lo * lo) - k * (hi - lo)) * dt
    nz = np.nonzero(w > 0)[0]
    return nz, w[nz]


def window_nodes(grid: Grid, a: float, b: float) -> np.ndarray:
    """Nodes inside ``[a, b]`` plus the nodes nearest to each endpoint."""
    tol = 1e-9 * grid.dt
    if a < grid.t0 - tol or b > grid.t_end + tol:
        raise ValidationError(f"time window [{a}, {b}] outside sampled extent {grid.time_extent}")
    times = grid.times
    inside = set(np.nonzero((times >= a - tol) & (times <= b + tol))[0].tolist())
    inside.add(int(np.argmin(np.abs(times - a))))
    inside.add(int(np.argmin(np.abs(times - b))))
    return np.array(sorted(inside))


def bracket_nodes(grid: Grid, a: float, b: float) -> np.ndarray:
    """Contiguous nodes from the last one at or before ``a`` to the first at or after ``b``."""
    tol = 1e-9 * grid.dt
    if a < grid.t0 - tol or b > grid.t_end + tol or b < a:
        raise ValidationError(f"time window [{a}, {b}] outside sampled extent {grid.time_extent}")
    k0 = max(int(math.floor((a - grid.t0) / grid.dt + 1e-9)), 0)
    k1 = min(int(math.ceil((b - grid.t0) / grid.dt - 1e-9)), grid.nt - 1)
    return np.arange(k0, k1 + 1)


@dataclass(frozen=True, eq=False)
class CylinderWeights:
    time_index: np.ndarray
    time_weights: np.ndarray
    sup_index: np.ndarray
    stencil: BallStencil

    def total(self) -> float:
        return float(self.time_weights.sum() * self.stencil.total)


def check_cylinder(grid: Grid, Q: ParabolicCylinder, floor: float = RESOLUTION_FLOOR):
    if Q.r < floor * grid.h * (1 - 1e-12):
        raise ValidationError(
            f"radius {Q.r:.4g} below resolution floor {floor}h = {floor * grid.h:.4g}")
    if Q.r > grid.domain_length / 2:
        raise ValidationError(
            f"radius {Q.r:.4g} exceeds half the box; the ball would overlap its periodic image")
    tol = 1e-9 * grid.dt
    if Q.t_start < grid.t0 - tol or Q.center_t > grid.t_end + tol:
        raise ValidationError(
            f"cylinder time span [{Q.t_start:.6g}, {Q.center_t:.6g}] leaves the sampled "
            f"extent [{grid.t0:.6g}, {grid.t_end:.6g}]")


def cylinder_mask(grid: Grid, Q: ParabolicCylinder, subsamples: int = DEFAULT_SUBSAMPLES,
                  floor: float = RESOLUTION_FLOOR) -> CylinderWeights:
    """Space-time quadrature weights for ``Q`` on ``grid``."""
    check_cylinder(grid, Q, floor)
    ti, tw = hat_weights(grid.t0, grid.dt, grid.nt, Q.t_start, Q.center_t)
    stencil = ball_stencil(Q.center_x, Q.r, grid.h, grid.n, subsamples)
    sup = window_nodes(grid, Q.t_start, Q.center_t)
    return CylinderWeights(ti, tw, sup, stencil)
