"""Test flows, the scaling map, a pseudo-spectral integrator and the energy ledger."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid

from .fieldlab import FieldStack, Grid, ValidationError, smoothstep5
from .singops import WORKERS, _wavevectors, spectral_gradient

FAMILIES = ("abc", "single_mode_beltrami", "homogeneous_minus_one", "random_solenoidal")


class NumericalError(RuntimeError):
    """Integration produced NaN or broke the CFL limit."""


@dataclass(frozen=True)
class FlowSpec:
    """Parameters of a generated flow; unused fields are ignored by a family.

    ``mode`` is the integer wavenumber on the box (physical ``k = 2 pi mode / L``).
    ``force="steady"`` adds ``f = nu k^2 u0`` so a Beltrami flow stops decaying.
    """

    family: str
    A: float = 1.0
    B: float = 1.0
    C: float = 1.0
    nu: float = 0.1
    amplitude: float = 1.0
    mode: int = 1
    seed: int = 0
    k_max: int = 3
    r_moll: Optional[float] = None
    center: Optional[tuple] = None
    force: Optional[str] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown flow family {self.family!r}; choose from {FAMILIES}")
        if self.force not in (None, "steady"):
            raise ValidationError(f"unknown force description {self.force!r}")
        if self.nu < 0:
            raise ValidationError("viscosity must be nonnegative")
        if self.mode < 1 or self.k_max < 1:
            raise ValidationError("mode and k_max must be positive integers")

    def as_dict(self) -> dict:
        return asdict(self)


def _decay(spec: FlowSpec, k: float, times):
    if spec.force == "steady":
        return np.ones_like(times)
    return np.exp(-spec.nu * k * k * times)


def _abc(spec: FlowSpec, grid: Grid):
    k = 2 * np.pi * spec.mode / grid.domain_length
    X, Y, Z = grid.mesh()
    A, B, C = spec.A, spec.B, spec.C
    base = np.stack([A * np.sin(k * Z) + C * np.cos(k * Y),
                     B * np.sin(k * X) + A * np.cos(k * Z),
                     C * np.sin(k * Y) + B * np.cos(k * X)])
    # -|u|^2/2 with the box mean removed
    pbase = -(A * C * np.sin(k * Z) * np.cos(k * Y) + A * B * np.sin(k * X) * np.cos(k * Z)
              + B * C * np.cos(k * X) * np.sin(k * Y))
    return k, base, pbase


def _single_mode(spec: FlowSpec, grid: Grid):
    k = 2 * np.pi * spec.mode / grid.domain_length
    X, Y, Z = grid.mesh()
    base = spec.amplitude * np.stack([np.sin(k * Z), np.cos(k * Z), np.zeros_like(Z)])
    return k, base, np.zeros_like(Z)


def _min_image(d, L):
    return np.mod(d + L / 2, L) - L / 2


def _homogeneous(spec: FlowSpec, grid: Grid):
    L, h = grid.domain_length, grid.h
    r_moll = 2.1 * h if spec.r_moll is None else spec.r_moll
    if r_moll <= 2 * h:
        raise ValidationError(f"mollification radius {r_moll:.4g} must exceed 2h = {2 * h:.4g}")
    c = spec.center if spec.center is not None else (grid.n // 2 * h,) * 3
    X, Y, Z = grid.mesh()
    dx, dy, dz = (_min_image(a - ci, L) for a, ci in zip((X, Y, Z), c))
    s = np.sqrt(dx * dx + dy * dy + dz * dz)
    inner = smoothstep5((s - 0.5 * r_moll) / (0.5 * r_moll))
    outer = 1.0 - smoothstep5((s - 0.3 * L) / (0.15 * L))
    safe = np.where(s > 0, s, 1.0)
    env = spec.amplitude * inner * outer / safe
    # angular profile e1 + yhat x e3
    u = np.stack([env * (1.0 + dy / safe), env * (-dx / safe), np.zeros_like(s)])
    u[:, s == 0] = 0.0
    q = -0.5 * np.sum(u * u, axis=0)
    return u, q - q.mean()


def _random_coefficients(spec: FlowSpec):
    rng = np.random.default_rng(spec.seed)
    K = spec.k_max
    n = np.arange(-K, K + 1)
    NX, NY, NZ = np.meshgrid(n, n, n, indexing="ij")
    modes = np.stack([NX.ravel(), NY.ravel(), NZ.ravel()], axis=1)
    norm = np.linalg.norm(modes, axis=1)
    modes = modes[(norm > 0) & (norm <= K)]
    # keep one of each +/- pair; the real part supplies the conjugate
    first = np.array([tuple(m) > tuple(-m) for m in modes])
    modes = modes[first]
    cnt = len(modes)
    a = rng.normal(size=(cnt, 3)) + 1j * rng.normal(size=(cnt, 3))
    b = rng.normal(size=(cnt, 3)) + 1j * rng.normal(size=(cnt, 3))
    omega = rng.uniform(0.0, 2.0, size=cnt)
    kk = modes / np.linalg.norm(modes, axis=1, keepdims=True)
    a -= kk * np.sum(a * kk, axis=1, keepdims=True)
    b -= kk * np.sum(b * kk, axis=1, keepdims=True)
    decay = np.linalg.norm(modes, axis=1) ** -1.5
    return modes, a * decay[:, None], b * decay[:, None], omega


def _random_solenoidal(spec: FlowSpec, grid: Grid):
    n = grid.n
    if 2 * spec.k_max + 1 > n // 2:
        raise ValidationError("k_max too large for the grid; products would alias")
    modes, a, b, omega = _random_coefficients(spec)
    idx = tuple(np.mod(modes[:, i], n) for i in range(3))
    fields = []
    for t in grid.times:
        coef = a * np.cos(omega[:, None] * t) + b * np.sin(omega[:, None] * t)
        out = np.empty((3,) + grid.shape)
        for c in range(3):
            spec_arr = np.zeros(grid.shape, dtype=complex)
            spec_arr[idx] = coef[:, c]
            out[c] = 2.0 * np.real(sfft.ifftn(spec_arr, workers=WORKERS)) * n ** 3
        fields.append(out)
    u = np.array(fields)
    rms = math.sqrt(np.mean(np.sum(u[0] ** 2, axis=0)))
    if rms > 0:
        u *= spec.amplitude / rms
    p = np.array([pressure_from_velocity(ui, grid.domain_length) for ui in u])
    return u, p


def pressure_from_velocity(u, length, f=None):
    """Mean-zero ``p`` with ``-lap p = d_i d_j (u_i u_j) - div f``."""
    n = u.shape[-1]
    kx, ky, kz = _wavevectors(n, float(length), True)
    k0x, k0y, k0z = _wavevectors(n, float(length), False)
    ks = (kx, ky, kz)
    k2 = k0x ** 2 + k0y ** 2 + k0z ** 2
    src = 0.0
    for i in range(3):
        for j in range(3):
            src = src - ks[i] * ks[j] * sfft.rfftn(u[i] * u[j], workers=WORKERS)
    if f is not None:
        for i in range(3):
            src = src - 1j * ks[i] * sfft.rfftn(f[i], workers=WORKERS)
    ph = np.where(k2 > 0, src / np.where(k2 > 0, k2, 1.0), 0.0)
    return sfft.irfftn(ph, s=u.shape[-3:], workers=WORKERS)


def generate(spec: FlowSpec, grid: Grid) -> FieldStack:
    times = grid.times
    meta = {"family": spec.family, "nu": spec.nu, "solution": True, "spec": spec.as_dict()}
    f = None
    if spec.family in ("abc", "single_mode_beltrami"):
        maker = _abc if spec.family == "abc" else _single_mode
        k, base, pbase = maker(spec, grid)
        decay = _decay(spec, k, times)
        u = decay[:, None, None, None, None] * base[None]
        p = (decay ** 2)[:, None, None, None] * pbase[None]
        if spec.force == "steady":
            f = np.broadcast_to(spec.nu * k * k * base, u.shape)
    elif spec.family == "homogeneous_minus_one":
        u0, p0 = _homogeneous(spec, grid)
        u = np.broadcast_to(u0, (grid.nt,) + u0.shape)
        p = np.broadcast_to(p0, (grid.nt,) + p0.shape)
        meta["solution"] = False
    else:
        u, p = _random_solenoidal(spec, grid)
        meta["solution"] = False
    return FieldStack(grid, u, p, None, f, meta)


# ---------------------------------------------------------------------------
# Scaling map
# ---------------------------------------------------------------------------


def _check_lambda(lam) -> int:
    lam_f = float(lam)
    k = round(math.log2(lam_f)) if lam_f > 0 else -1
    if lam_f <= 0 or k < 0 or abs(2.0 ** k - lam_f) > 1e-12:
        raise ValidationError(
            f"lambda = {lam} is not a nonnegative integer power of 2; scaled samples "
            "would fall between grid nodes")
    return int(2 ** k)


def rescale(stack: FieldStack, lam, velocity_exponent: float = 1.0) -> FieldStack:
    """``{u, p, w, f} -> {lam u, lam^2 p, lam^2 w, lam^3 f}(lam x, lam^2 t)``.

    Space is resampled by index (``lam x_i`` is node ``lam i mod n``); time keeps
    every slice with ``dt -> dt / lam^2`` and ``t0 -> t0 / lam^2``.
    ``velocity_exponent`` exists only to build broken-scaling controls.
    """
    lam = _check_lambda(lam)
    g = stack.grid
    idx = np.mod(lam * np.arange(g.n), g.n)
    sel = np.ix_(idx, idx, idx)

    def take(a, power):
        if a is None:
            return None
        return (lam ** power) * a[(Ellipsis,) + sel]

    grid = g.replace(dt=g.dt / lam ** 2, t0=g.t0 / lam ** 2)
    meta = dict(stack.meta)
    meta["rescaled_by"] = lam * meta.get("rescaled_by", 1)
    return FieldStack(grid, take(stack.u, velocity_exponent), take(stack.p, 2),
                      take(stack.w, 2), take(stack.f, 3), meta)


def scaled_center(x, t, lam):
    return tuple(c / lam for c in x), t / lam ** 2


# ---------------------------------------------------------------------------
# Pseudo-spectral integrator
# ---------------------------------------------------------------------------


@dataclass
class _Spectral:
    n: int
    length: float
    ks: tuple
    k2: np.ndarray
    k2_inv: np.ndarray
    mask: np.ndarray

    @classmethod
    def build(cls, n, length):
        ks = _wavevectors(n, length, True)
        k0 = _wavevectors(n, length, False)
        k2 = sum(k * k for k in k0)
        k2_inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
        idx = np.abs(np.fft.fftfreq(n, 1.0 / n))
        idz = np.abs(np.fft.rfftfreq(n, 1.0 / n))
        cut = n / 3.0
        mask = ((idx[:, None, None] < cut) & (idx[None, :, None] < cut)
                & (idz[None, None, :] < cut))
        return cls(n, length, ks, k2, k2_inv, mask)

    def fwd(self, a):
        return sfft.rfftn(a, axes=(-3, -2, -1), workers=WORKERS)

    def inv(self, a):
        return sfft.irfftn(a, s=(self.n,) * 3, axes=(-3, -2, -1), workers=WORKERS)

    def project(self, vh):
        kdotv = sum(self.ks[i] * vh[i] for i in range(3))
        return vh - np.stack([self.ks[i] * kdotv for i in range(3)]) * self.k2_inv

    def advection(self, uh):
        """Dealiased transform of ``(u . grad) u = div(u u)``."""
        u = self.inv(uh * self.mask)
        nh = np.zeros_like(uh)
        for i in range(3):
            for j in range(i, 3):
                pij = self.fwd(u[i] * u[j])
                nh[j] += 1j * self.ks[i] * pij
                if i != j:
                    nh[i] += 1j * self.ks[j] * pij
        return nh * self.mask

    def pressure(self, uh, fh):
        nh = self.advection(uh)
        src = sum(1j * self.ks[i] * (nh[i] - (fh[i] if fh is not None else 0.0))
                  for i in range(3))
        return self.inv(src * self.k2_inv)


def ns_integrate(u0, f, nu: float, grid: Grid, steps: int, store_every: int = 1,
                 cfl_max: float = 1.0) -> FieldStack:
    """Integrate ``u_t + (u.grad)u + grad p = nu lap u + f`` on the periodic box.

    Integrating-factor RK4 on the projected, 2/3-dealiased nonlinearity. The
    returned stack holds every ``store_every``-th step starting at ``grid.t0``;
    its grid's ``dt`` is ``grid.dt * store_every``.
    """
    if steps < 1 or store_every < 1 or steps % store_every:
        raise ValidationError("steps must be a positive multiple of store_every")
    n, L, dt = grid.n, grid.domain_length, grid.dt
    sp = _Spectral.build(n, L)
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (3,) + grid.shape:
        raise ValidationError(f"u0 has shape {u0.shape}, expected {(3,) + grid.shape}")
    uh = sp.fwd(u0)
    div = np.sqrt(np.sum(np.abs(sum(sp.ks[i] * uh[i] for i in range(3))) ** 2))
    ref = np.sqrt(np.sum(sp.k2 * np.sum(np.abs(uh) ** 2, axis=0))) + 1e-300
    if div > 1e-8 * ref:
        raise ValidationError("initial velocity is not divergence-free")
    fh = None
    f_arr = None
    if f is not None:
        f_arr = np.asarray(f, dtype=float)
        fh = sp.project(sp.fwd(f_arr))
    E = np.exp(-nu * sp.k2 * dt)
    E2 = np.exp(-nu * sp.k2 * dt / 2)

    def rhs(vh):
        out = -sp.advection(vh)
        if fh is not None:
            out = out + fh
        return sp.project(out)

    fh_raw = sp.fwd(f_arr) if f_arr is not None else None
    nstore = steps // store_every + 1
    us = np.empty((nstore, 3) + grid.shape)
    ps = np.empty((nstore,) + grid.shape)
    us[0], ps[0] = u0, sp.pressure(uh, fh_raw)
    h = grid.h
    for step in range(1, steps + 1):
        k1 = rhs(uh)
        k2 = rhs(E2 * (uh + 0.5 * dt * k1))
        k3 = rhs(E2 * uh + 0.5 * dt * k2)
        k4 = rhs(E * uh + dt * E2 * k3)
        uh = E * uh + dt / 6.0 * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)
        u = sp.inv(uh)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite velocity at step {step}")
        umax = float(np.sqrt(np.sum(u * u, axis=0)).max())
        if umax * dt / h > cfl_max:
            raise NumericalError(
                f"CFL violated at step {step}: max|u| dt / h = {umax * dt / h:.3g} > {cfl_max}")
        if step % store_every == 0:
            j = step // store_every
            us[j], ps[j] = u, sp.pressure(uh, fh_raw)
    out_grid = grid.replace(nt=nstore, dt=dt * store_every)
    fs = None if f_arr is None else np.broadcast_to(f_arr, (nstore,) + f_arr.shape)
    return FieldStack(out_grid, us, ps, None, fs,
                      {"family": "ns_integrate", "nu": nu, "solution": True})


# ---------------------------------------------------------------------------
# Local energy inequality
# ---------------------------------------------------------------------------


def _smooth_ramp(s):
    """C-infinity step from 0 (s <= 0) to 1 (s >= 1) and its derivative."""
    s = np.asarray(s, dtype=float)
    inner = (s > 0) & (s < 1)
    val = np.where(s >= 1, 1.0, 0.0)
    der = np.zeros_like(s)
    si = s[inner]
    a = np.exp(-1.0 / si)
    b = np.exp(-1.0 / (1.0 - si))
    val[inner] = a / (a + b)
    der[inner] = a * b * (1.0 / si ** 2 + 1.0 / (1.0 - si) ** 2) / (a + b) ** 2
    return val, der


@dataclass(frozen=True)
class TestFunction:
    """``phi(x, t) = exp(kappa sum_i (cos(k0 (x_i - c_i)) - 1)) * ramp(t)``.

    Smooth and periodic in space; the time factor rises from 0 at the window
    start to 1 at the evaluation time with every derivative vanishing at both
    ends.
    """

    center: tuple
    kappa: float = 2.0

    __test__ = False

    def space(self, grid: Grid):
        k0 = 2 * np.pi / grid.domain_length
        X = grid.mesh()
        arg = [k0 * (X[i] - self.center[i]) for i in range(3)]
        phi = np.exp(self.kappa * sum(np.cos(a) - 1.0 for a in arg))
        grad = np.stack([-self.kappa * k0 * np.sin(a) * phi for a in arg])
        lap = sum((self.kappa ** 2 * k0 ** 2 * np.sin(a) ** 2 - self.kappa * k0 ** 2 * np.cos(a))
                  for a in arg) * phi
        return phi, grad, lap


@dataclass
class EnergyLedger:
    phi: dict
    terms: dict
    lhs: float
    rhs: float
    residual: float
    scale: float
    relative_residual: float
    satisfied: bool


def local_energy_residual(stack: FieldStack, phi_spec: TestFunction, t_window,
                          nu: Optional[float] = None, tolerance: float = 1e-6,
                          dissipation_scale: float = 1.0) -> EnergyLedger:
    """Both sides of the local energy inequality evaluated at ``t_window[1]``.

    Space integrals are torus sums; time integrals use the trapezoid rule on
    the nodes in ``t_window``. ``dissipation_scale`` inflates ``|grad u|^2``
    for sign checks only.
    """
    if not stack.is_solution:
        raise ValidationError("energy checks refuse fields marked as non-solutions")
    if stack.p is None:
        raise ValidationError("energy ledger needs the pressure")
    g = stack.grid
    ta, tb = map(float, t_window)
    tol = 1e-9 * g.dt
    if ta < g.t0 - tol or tb > g.t_end + tol:
        raise ValidationError(
            f"test function window [{ta}, {tb}] touches outside the sampled time extent "
            f"{g.time_extent}")
    if not tb > ta:
        raise ValidationError("empty time window")
    ka, kb = g.time_index(ta), g.time_index(tb)
    nu = float(stack.meta.get("nu", 1.0)) if nu is None else float(nu)
    phi, gphi, lphi = phi_spec.space(g)
    ramp, dramp = _smooth_ramp((g.times[ka:kb + 1] - ta) / (tb - ta))
    dramp = dramp / (tb - ta)
    dv = g.cell_volume
    L = g.domain_length
    names = ("dissipation", "heat", "transport", "pressure", "force")
    series = {k: np.zeros(kb - ka + 1) for k in names}
    for j, k in enumerate(range(ka, kb + 1)):
        u = stack.u[k]
        u2 = np.sum(u * u, axis=0)
        gu = spectral_gradient(u, L)
        series["dissipation"][j] = 2 * nu * dissipation_scale * np.sum(
            np.sum(gu * gu, axis=(0, 1)) * phi) * ramp[j] * dv
        series["heat"][j] = np.sum(u2 * (phi * dramp[j] + nu * lphi * ramp[j])) * dv
        udg = np.sum(u * gphi, axis=0) * ramp[j]
        series["transport"][j] = np.sum(u2 * udg) * dv
        series["pressure"][j] = 2 * np.sum(stack.p[k] * udg) * dv
        if stack.f is not None:
            series["force"][j] = 2 * np.sum(np.sum(stack.f[k] * u, axis=0) * phi) * ramp[j] * dv
    terms = {k: float(trapezoid(v, dx=g.dt)) for k, v in series.items()}
    uend = stack.u[kb]
    terms["kinetic"] = float(np.sum(np.sum(uend * uend, axis=0) * phi) * ramp[-1] * dv)
    lhs = terms["kinetic"] + terms["dissipation"]
    rhs = terms["heat"] + terms["transport"] + terms["pressure"] + terms["force"]
    scale = sum(abs(v) for v in terms.values())
    residual = rhs - lhs
    rel = residual / scale if scale > 0 else 0.0
    return EnergyLedger(
        {"center": list(phi_spec.center), "kappa": phi_spec.kappa, "window": [ta, tb]},
        terms, lhs, rhs, residual, scale, rel, bool(rel >= -tolerance))
