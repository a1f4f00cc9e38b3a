"""Mixed norms over parabolic cylinders and the dimensionless functionals built on them.

All integrals share the ``cylinder_mask`` quadrature from :mod:`nsrlab.fieldlab`:
volume-fraction ball weights in space and hat-function weights in time. Sup
norms in time take the maximum over the nodes inside the window together with
the nodes nearest its endpoints, so no slice is ever interpolated.

Derived pointwise magnitudes (``|grad u|``, ``|w|``, ``|grad w|``, ``|curl w|``)
are computed one time slice at a time and kept in a bounded per-stack cache.
"""
from __future__ import annotations

import math
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .fieldlab import (
    DEFAULT_SUBSAMPLES,
    RESOLUTION_FLOOR,
    FieldStack,
    FunctionalExponents,
    Grid,
    Kind,
    ParabolicCylinder,
    ValidationError,
    as_exponent,
    ball_stencil,
    check_cylinder,
    classify_exponents,
    cylinder_mask,
    exponent_float,
    hat_weights,
    reciprocal,
    window_nodes,
)
from .singops import WORKERS, loglog_slope, spectral_curl, spectral_gradient

NAMES = ("A", "E", "C", "Ctilde", "D", "Gtilde", "G1", "W", "W1", "Wtilde1")
ALIASES = {
    "C̃": "Ctilde", "G̃": "Gtilde", "W̃1": "Wtilde1", "W̃_1": "Wtilde1",
    "G_1": "G1", "W_1": "W1", "Wtilde_1": "Wtilde1",
}
# names whose value depends on the (p, q) pair
EXPONENT_NAMES = ("Gtilde", "G1", "W", "W1", "Wtilde1")

_CACHE_SLOTS = int(os.environ.get("NSRLAB_SLICE_CACHE", "192"))
_CACHE_LOCK = threading.Lock()


class MissingFieldError(ValidationError):
    """A functional needs a field the stack does not carry."""


def canonical_name(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in NAMES:
        raise ValidationError(f"unknown functional {name!r}; choose from {NAMES}")
    return name


# ---------------------------------------------------------------------------
# per-slice magnitudes
# ---------------------------------------------------------------------------


def _vorticity(stack: FieldStack, k: int) -> np.ndarray:
    if stack.w is not None:
        return stack.w[k]
    return spectral_curl(stack.u[k], stack.grid.domain_length)


def _norm_over_components(a: np.ndarray) -> np.ndarray:
    if a.ndim == 3:
        return np.abs(a)
    return np.sqrt(np.sum(a.reshape((-1,) + a.shape[-3:]) ** 2, axis=0))


def _compute_magnitude(stack: FieldStack, name: str, k: int) -> np.ndarray:
    L = stack.grid.domain_length
    if name == "u":
        return _norm_over_components(stack.u[k])
    if name == "p":
        if stack.p is None:
            raise MissingFieldError("pressure is required")
        return np.abs(stack.p[k])
    if name == "f":
        if stack.f is None:
            raise MissingFieldError("force is required")
        return _norm_over_components(stack.f[k])
    if name == "grad_u":
        return _norm_over_components(spectral_gradient(stack.u[k], L))
    if name == "w":
        return _norm_over_components(_vorticity(stack, k))
    if name == "grad_w":
        return _norm_over_components(spectral_gradient(_vorticity(stack, k), L))
    if name == "curl_w":
        return _norm_over_components(spectral_curl(_vorticity(stack, k), L))
    raise ValidationError(f"unknown field {name!r}")


def magnitude(stack: FieldStack, name: str, k: int) -> np.ndarray:
    """Pointwise Euclidean magnitude of field ``name`` at time node ``k``."""
    key = (name, int(k))
    with _CACHE_LOCK:
        cache = stack._cache.setdefault("magnitudes", OrderedDict())
        if key in cache:
            cache.move_to_end(key)
            return cache[key]
    # computed outside the lock; two threads may race to fill the same slot
    val = _compute_magnitude(stack, name, k)
    val.setflags(write=False)
    with _CACHE_LOCK:
        cache[key] = val
        while len(cache) > _CACHE_SLOTS:
            cache.popitem(last=False)
    return val


# ---------------------------------------------------------------------------
# mixed norms
# ---------------------------------------------------------------------------

# A source maps (time node, stencil) to pointwise magnitudes on the stencil.
Source = Callable[[int, object], np.ndarray]


def _space_norm(vals: np.ndarray, st, p: float) -> float:
    if math.isinf(p):
        sup = vals[st.support]
        return float(sup.max()) if sup.size else 0.0
    return max(float(st.integrate(vals ** p)), 0.0) ** (1.0 / p)


def _mixed(source: Source, grid: Grid, Q: ParabolicCylinder, p, q,
           subsamples: int = DEFAULT_SUBSAMPLES, floor: float = RESOLUTION_FLOOR) -> float:
    pf, qf = exponent_float(as_exponent(p)), exponent_float(as_exponent(q))
    if pf < 1 or qf < 1:
        raise ValidationError("norm exponents must lie in [1, inf]")
    cw = cylinder_mask(grid, Q, subsamples, floor)
    st = cw.stencil
    if math.isinf(qf):
        return max(_space_norm(source(int(k), st), st, pf) for k in cw.sup_index)
    total = 0.0
    for k, w in zip(cw.time_index, cw.time_weights):
        total += w * _space_norm(source(int(k), st), st, pf) ** qf
    return total ** (1.0 / qf)


def _array_source(arr: np.ndarray) -> Source:
    def src(k, st):
        return _norm_over_components(st.gather(arr[k]))
    return src


def _stack_source(stack: FieldStack, name: str) -> Source:
    def src(k, st):
        return st.gather(magnitude(stack, name, k))
    return src


def _centered_source(stack: FieldStack) -> Source:
    """``|u - (u)_r(s)|`` with the average taken over the same ball."""
    def src(k, st):
        vals = st.gather(stack.u[k])
        mean = st.mean(vals)
        return np.sqrt(np.sum((vals - mean[:, None, None, None]) ** 2, axis=0))
    return src


def _check_field(arr: np.ndarray, grid: Grid) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim < 4 or arr.shape[0] != grid.nt or arr.shape[-3:] != grid.shape:
        raise ValidationError(
            f"field of shape {arr.shape} does not match grid (nt={grid.nt}, n={grid.n})")
    return arr


def mixed_norm(field_arr, Q: ParabolicCylinder, p, q, grid: Grid,
               subsamples: int = DEFAULT_SUBSAMPLES) -> float:
    """``|| ||f(., s)||_{L^p(B)} ||_{L^q(t - r^2, t)}`` for samples ``(nt, ..., n, n, n)``.

    Vector and tensor samples use the pointwise Euclidean magnitude.
    """
    arr = _check_field(field_arr, grid)
    return _mixed(_array_source(arr), grid, Q, p, q, subsamples)


def spatial_average(field_arr, x, r: float, s: float, grid: Grid,
                    subsamples: int = DEFAULT_SUBSAMPLES) -> np.ndarray:
    """Component-wise mean of ``field_arr`` over ``B(x, r)`` at time node ``s``."""
    arr = _check_field(field_arr, grid)
    if r < RESOLUTION_FLOOR * grid.h * (1 - 1e-12):
        raise ValidationError(f"radius {r:.4g} below resolution floor")
    k = grid.time_index(s)
    st = ball_stencil(x, r, grid.h, grid.n, subsamples)
    return st.mean(st.gather(arr[k]))


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------


def _resolve_exponents(exponents) -> Optional[FunctionalExponents]:
    if exponents is None or isinstance(exponents, FunctionalExponents):
        return exponents
    p, q = exponents
    return FunctionalExponents.from_pair(p, q)


def functional(name: str, stack: FieldStack, Q: ParabolicCylinder, exponents=None,
               subsamples: int = DEFAULT_SUBSAMPLES, floor: float = RESOLUTION_FLOOR) -> float:
    """Dimensionless functional ``name`` of ``stack`` on ``Q``.

    ``exponents`` is a :class:`FunctionalExponents` (or a borderline ``(p, q)``
    pair) and is required by ``Gtilde``, ``G1``, ``W``, ``W1`` and ``Wtilde1``.
    """
    return float(_functional(canonical_name(name), stack, Q, exponents, subsamples, floor))


def _functional(name, stack, Q, exponents, subsamples, floor):
    g = stack.grid
    r = Q.r
    if name == "A":
        check_cylinder(g, Q, floor)
        st = ball_stencil(Q.center_x, r, g.h, g.n, subsamples)
        nodes = window_nodes(g, Q.t_start, Q.center_t)
        best = 0.0
        for k in nodes:
            m = st.gather(magnitude(stack, "u", int(k)))
            best = max(best, float(st.integrate(m * m)))
        return best / r
    if name == "E":
        return _mixed(_stack_source(stack, "grad_u"), g, Q, 2, 2, subsamples, floor) ** 2 / r
    if name == "C":
        return _mixed(_stack_source(stack, "u"), g, Q, 3, 3, subsamples, floor) ** 3 / r ** 2
    if name == "Ctilde":
        return _mixed(_centered_source(stack), g, Q, 3, 3, subsamples, floor) ** 3 / r ** 2
    if name == "D":
        if stack.p is None:
            raise MissingFieldError("D needs the pressure")
        val = _mixed(_stack_source(stack, "p"), g, Q, 1.5, 1.5, subsamples, floor)
        return val ** 1.5 / r ** 2

    ex = _resolve_exponents(exponents)
    if ex is None:
        raise ValidationError(f"{name} needs (p, q) exponents")
    if name == "Gtilde":
        if ex.p_star is None:
            raise ValidationError(f"p* is undefined for p = {ex.p}")
        return _mixed(_centered_source(stack), g, Q, ex.p_star, ex.q, subsamples, floor) / r
    if name == "G1":
        return _mixed(_stack_source(stack, "grad_u"), g, Q, ex.p, ex.q, subsamples, floor) / r
    if name == "W":
        return _mixed(_stack_source(stack, "w"), g, Q, ex.p, ex.q, subsamples, floor) / r
    # W1 and Wtilde1 live in the regime 1 <= q <= 2
    if exponent_float(ex.q) > 2:
        raise ValidationError(f"{name} is defined only for q <= 2, got q = {ex.q}")
    if ex.p_sharp is None:
        raise ValidationError(f"p# is undefined for p = {ex.p}")
    src = "grad_w" if name == "W1" else "curl_w"
    return _mixed(_stack_source(stack, src), g, Q, ex.p_sharp, ex.q, subsamples, floor) / r


_KIND_SHIFT = {
    Kind.velocity: 1,
    Kind.velocity_gradient: 2,
    Kind.vorticity: 2,
    Kind.vorticity_gradient: 3,
}


def criterion_exponent(kind, p, q) -> float:
    """Power of ``r`` multiplying the norm in a criterion quantity."""
    kind = Kind(kind)
    return -float(3 * reciprocal(p) + 2 * reciprocal(q) - _KIND_SHIFT[kind])


def criterion_quantity(kind, stack: FieldStack, Q: ParabolicCylinder, p, q,
                       centered: bool = True, curl_vorticity: bool = False,
                       subsamples: int = DEFAULT_SUBSAMPLES,
                       floor: float = RESOLUTION_FLOOR) -> float:
    """Scaled mixed norm entering the regularity criterion of ``kind``.

    For ``velocity`` the space exponent is the starred one and ``centered``
    selects ``u - (u)_r`` over plain ``u``; for ``vorticity_gradient`` it is
    the sharp one, and ``curl_vorticity`` swaps ``grad w`` for ``curl w``
    (allowed only when that exponent exceeds 1).
    """
    kind = Kind(kind)
    verdict = classify_exponents(kind, p, q)
    if not verdict.admissible:
        raise ValidationError(f"inadmissible exponents for {kind.value}: {verdict.rejection_reason}")
    if curl_vorticity and (kind is not Kind.vorticity_gradient or as_exponent(p) <= 1):
        raise ValidationError("curl w may replace grad w only for vorticity_gradient with p# > 1")
    g = stack.grid
    if kind is Kind.velocity:
        src = _centered_source(stack) if centered else _stack_source(stack, "u")
    elif kind is Kind.velocity_gradient:
        src = _stack_source(stack, "grad_u")
    elif kind is Kind.vorticity:
        src = _stack_source(stack, "w")
    else:
        src = _stack_source(stack, "curl_w" if curl_vorticity else "grad_w")
    norm = _mixed(src, g, Q, p, q, subsamples, floor)
    return float(norm * Q.r ** criterion_exponent(kind, p, q))


# ---------------------------------------------------------------------------
# parabolic Morrey norm
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MorreyParams:
    """Search settings for ``sup_Q r^-(1+2 gamma) int_Q |f|^2`` (square root reported).

    Centres default to a lattice with ``stride`` cells in space and every time
    node whose cylinder fits; radii default to a halving ladder from a quarter
    box down to the resolution floor. ``sample_cylinders`` caps the number of
    cylinders evaluated; the space stride grows until the cap is met.
    """

    gamma: float
    sample_cylinders: int = 200_000
    stride: int = 4
    radii: Optional[tuple] = None
    centers: Optional[tuple] = None
    theta: float = 0.5

    def __post_init__(self):
        if not 0 < self.gamma <= 2:
            raise ValidationError(
                f"gamma must lie in (0, 2]; the space is trivial for gamma > 2 (got {self.gamma})")
        if self.stride < 1 or self.sample_cylinders < 1:
            raise ValidationError("stride and sample_cylinders must be positive")
        if not 0 < self.theta < 1:
            raise ValidationError("theta must lie in (0, 1)")


@dataclass(frozen=True)
class MorreyResult:
    value: float
    gamma: float
    maximizer: Optional[tuple]  # (x, t, r)
    cylinders: int

    def __float__(self) -> float:
        return self.value


def _default_radii(grid: Grid, params: MorreyParams) -> list:
    r = grid.domain_length / 4
    floor = RESOLUTION_FLOOR * grid.h
    out = []
    while r >= floor * (1 - 1e-12):
        out.append(r)
        r *= params.theta
    return out


def _ball_kernel(grid: Grid, r: float) -> np.ndarray:
    """Ball weights about the origin node laid out on the periodic grid."""
    st = ball_stencil((0.0, 0.0, 0.0), r, grid.h, grid.n)
    ker = np.zeros(grid.shape)
    ix, iy, iz = st.index
    np.add.at(ker, (ix[:, None, None], iy[None, :, None], iz[None, None, :]), st.weights)
    return ker


def _ball_integrals(dens: np.ndarray, grid: Grid, r: float) -> np.ndarray:
    """``int_{B(x_i, r)} dens`` at every node ``x_i`` (periodic convolution)."""
    kh = sfft.rfftn(_ball_kernel(grid, r), workers=WORKERS)
    dh = sfft.rfftn(dens, axes=(-3, -2, -1), workers=WORKERS)
    # the ball is symmetric, so correlation equals convolution
    return sfft.irfftn(dh * kh, s=grid.shape, axes=(-3, -2, -1), workers=WORKERS)


def morrey_search(f, params: MorreyParams, grid: Grid) -> MorreyResult:
    arr = _check_field(f, grid)
    dens = np.array([_norm_over_components(a) ** 2 for a in arr])
    radii = list(params.radii) if params.radii is not None else _default_radii(grid, params)
    floor = RESOLUTION_FLOOR * grid.h
    best, arg, count = 0.0, None, 0
    for r in radii:
        if r < floor * (1 - 1e-12):
            raise ValidationError(f"Morrey radius {r:.4g} below resolution floor")
        times = grid.times
        tc_nodes = [k for k in range(grid.nt) if times[k] - r * r >= grid.t0 - 1e-9 * grid.dt]
        if not tc_nodes:
            continue
        if params.centers is not None:
            centres = [tuple(float(c) for c in x) for x in params.centers]
            idx = np.array([[int(round(c / grid.h)) % grid.n for c in x] for x in centres])
            stride = 1
        else:
            stride = params.stride
            while (math.ceil(grid.n / stride) ** 3) * len(tc_nodes) > params.sample_cylinders:
                stride += 1
            lat = np.arange(0, grid.n, stride)
            idx = np.stack(np.meshgrid(lat, lat, lat, indexing="ij"), -1).reshape(-1, 3)
        ball = _ball_integrals(dens, grid, r)[:, idx[:, 0], idx[:, 1], idx[:, 2]]
        for k in tc_nodes:
            ti, tw = hat_weights(grid.t0, grid.dt, grid.nt, times[k] - r * r, times[k])
            mass = np.tensordot(tw, ball[ti], axes=1)
            j = int(np.argmax(mass))
            count += len(mass)
            val = float(mass[j]) / r ** (1 + 2 * params.gamma)
            if val > best or arg is None:
                best = max(val, best)
                arg = (tuple(float(c) * grid.h for c in idx[j]), float(times[k]), float(r))
    return MorreyResult(math.sqrt(max(best, 0.0)), params.gamma, arg, count)


def morrey_norm(f, params: MorreyParams, grid: Grid) -> float:
    """Lattice approximation of the parabolic Morrey norm ``||f||_{M_{2, gamma}}``."""
    return morrey_search(f, params, grid).value


# ---------------------------------------------------------------------------
# functional ladders
# ---------------------------------------------------------------------------


@dataclass
class FunctionalLadder:
    center: tuple  # (x, t)
    radii: list
    values: list  # one {name: value} dict per radius
    exponents: Optional[FunctionalExponents]
    warnings: list = field(default_factory=list)
    omissions: dict = field(default_factory=dict)

    def series(self, name: str) -> np.ndarray:
        name = canonical_name(name)
        return np.array([v.get(name, math.nan) for v in self.values])

    def tail(self, name: str, rungs: int = 3) -> tuple:
        """``(max over the last rungs, log-log slope over the whole ladder)``."""
        s = self.series(name)
        if s.size == 0:
            return math.nan, math.nan
        return float(np.max(s[-rungs:])), loglog_slope(self.radii, s)


def _omission_reason(name: str, stack: FieldStack, ex: Optional[FunctionalExponents]):
    if name == "D" and stack.p is None:
        return "pressure not supplied"
    if name in EXPONENT_NAMES and ex is None:
        return "no (p, q) exponents supplied"
    if name == "Gtilde" and ex.p_star is None:
        return f"p* undefined for p = {ex.p}"
    if name in ("W1", "Wtilde1"):
        if exponent_float(ex.q) > 2:
            return f"defined only for q <= 2 (q = {ex.q})"
        if ex.p_sharp is None:
            return f"p# undefined for p = {ex.p}"
    return None


def build_ladder(stack: FieldStack, z, r0: float, theta: float, k_max: int, exponents=None,
                 names: Sequence[str] = NAMES,
                 subsamples: int = DEFAULT_SUBSAMPLES) -> FunctionalLadder:
    """Every functional at ``r_k = r0 theta^k``, ``k = 0..k_max``, about ``z = (x, t)``.

    Rungs below the resolution floor (or whose cylinder starts before the first
    time node) are dropped with a warning; functionals whose inputs are absent
    are recorded in ``omissions``.
    """
    if not 0 < theta <= 0.5:
        raise ValidationError(f"ladder ratio theta must lie in (0, 1/2], got {theta}")
    if k_max < 0:
        raise ValidationError("k_max must be nonnegative")
    x, t = z
    g = stack.grid
    ex = _resolve_exponents(exponents)
    names = [canonical_name(n) for n in names]
    omissions = {}
    active = []
    for n in names:
        why = _omission_reason(n, stack, ex)
        if why:
            omissions[n] = why
        else:
            active.append(n)
    warnings, radii, values = [], [], []
    floor = RESOLUTION_FLOOR * g.h
    for k in range(k_max + 1):
        r = r0 * theta ** k
        if r < floor * (1 - 1e-12):
            warnings.append(
                f"ladder truncated at k = {k}: r = {r:.4g} is below the floor {floor:.4g}")
            break
        if t - r * r < g.t0 - 1e-9 * g.dt:
            warnings.append(f"rung k = {k} (r = {r:.4g}) skipped: cylinder starts before t0")
            continue
        Q = ParabolicCylinder(tuple(x), t, r)
        values.append({n: functional(n, stack, Q, ex, subsamples) for n in active})
        radii.append(r)
    return FunctionalLadder((tuple(float(c) for c in x), float(t)), radii, values, ex,
                            warnings, omissions)


def holder_factor(Q: ParabolicCylinder, p1, q1, p2, q2) -> float:
    """``|B|^(1/p1 - 1/p2) * (r^2)^(1/q1 - 1/q2)`` bounding ``L^{p1,q1}`` by ``L^{p2,q2}``."""
    ball = 4.0 * math.pi / 3.0 * Q.r ** 3
    a = float(reciprocal(p1) - reciprocal(p2))
    b = float(reciprocal(q1) - reciprocal(q2))
    return ball ** a * (Q.r ** 2) ** b


__all__ = [
    "NAMES", "EXPONENT_NAMES", "MissingFieldError", "canonical_name", "magnitude", "mixed_norm",
    "spatial_average", "functional", "criterion_exponent", "criterion_quantity", "MorreyParams",
    "MorreyResult", "morrey_norm", "morrey_search", "FunctionalLadder", "build_ladder",
    "holder_factor",
]
