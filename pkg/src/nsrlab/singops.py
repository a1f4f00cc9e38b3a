"""Spectral calculus on the torus and cutoff singular-integral splittings.

Free-space potentials use the truncated-kernel method: the density lives in a
local window of ``m`` cells, the window is zero-padded to ``P >= (1+sqrt 3) m``
cells and convolved with the exact transform of ``1/(4 pi |x|)`` cut off at
``R = sqrt(3) m h``. Inside the window the result is the free-space potential
to spectral accuracy; periodic images never reach it.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.fft as sfft

from .fieldlab import (
    Cutoff,
    FieldStack,
    Grid,
    ValidationError,
    ball_stencil,
    hat_weights,
    window_nodes,
    DEFAULT_SUBSAMPLES,
    exponent_float,
)

WORKERS = int(os.environ.get("NSRLAB_FFT_WORKERS", "0")) or None
_AX = (-3, -2, -1)


class PaddingError(ValidationError):
    """The cutoff support does not fit in the periodic box with room to pad."""


def _rfft(a):
    return sfft.rfftn(a, axes=_AX, workers=WORKERS)


def _irfft(a, shape):
    return sfft.irfftn(a, s=shape, axes=_AX, workers=WORKERS)


@lru_cache(maxsize=32)
def _wavevectors(n: int, length: float, first_derivative: bool):
    """Broadcastable (kx, ky, kz) for an rfft over ``n`` cells spanning ``length``."""
    k = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
    kr = 2 * np.pi * np.fft.rfftfreq(n, d=length / n)
    if first_derivative and n % 2 == 0:
        # the Nyquist mode of a real signal has no consistent odd derivative
        k = k.copy()
        k[n // 2] = 0.0
        kr = kr.copy()
        kr[-1] = 0.0
    return k[:, None, None], k[None, :, None], kr[None, None, :]


def _check_cubic(a):
    n = a.shape[-1]
    if a.shape[-3:] != (n, n, n):
        raise ValidationError(f"expected cubic trailing axes, got {a.shape}")
    return n


def spectral_gradient(f, length):
    """``out[i, ...] = d f / d x_i``; a vector input gives ``out[i, j] = d_i f_j``."""
    f = np.asarray(f, dtype=float)
    n = _check_cubic(f)
    fh = _rfft(f)
    ks = _wavevectors(n, float(length), True)
    return np.stack([_irfft(1j * k * fh, f.shape[-3:]) for k in ks])


def spectral_divergence(v, length):
    v = np.asarray(v, dtype=float)
    n = _check_cubic(v)
    ks = _wavevectors(n, float(length), True)
    vh = _rfft(v)
    return _irfft(sum(1j * ks[i] * vh[i] for i in range(3)), v.shape[-3:])


def spectral_curl(v, length):
    v = np.asarray(v, dtype=float)
    n = _check_cubic(v)
    kx, ky, kz = _wavevectors(n, float(length), True)
    vh = _rfft(v)
    shape = v.shape[-3:]
    return np.stack([
        _irfft(1j * (ky * vh[2] - kz * vh[1]), shape),
        _irfft(1j * (kz * vh[0] - kx * vh[2]), shape),
        _irfft(1j * (kx * vh[1] - ky * vh[0]), shape),
    ])


def spectral_laplacian(f, length):
    f = np.asarray(f, dtype=float)
    n = _check_cubic(f)
    kx, ky, kz = _wavevectors(n, float(length), False)
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    return _irfft(-k2 * _rfft(f), f.shape[-3:])


# ---------------------------------------------------------------------------
# Free-space potential
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _FreeSpace:
    m: int
    h: float
    P: int
    kernel: np.ndarray
    kd: tuple  # first-derivative wavevectors
    k2: np.ndarray

    def forward(self, a):
        a = np.asarray(a, dtype=float)
        return sfft.rfftn(a, s=(self.P,) * 3, axes=_AX, workers=WORKERS)

    def back(self, ah):
        out = sfft.irfftn(ah, s=(self.P,) * 3, axes=_AX, workers=WORKERS)
        return out[..., : self.m, : self.m, : self.m]


@lru_cache(maxsize=16)
def _free_space(m: int, h: float) -> _FreeSpace:
    P = sfft.next_fast_len(int(math.ceil((1 + math.sqrt(3)) * m)) + 2)
    R = math.sqrt(3) * m * h
    length = P * h
    kx, ky, kz = _wavevectors(P, length, False)
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    k = np.sqrt(k2)
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = np.where(k2 > 0, (1 - np.cos(R * k)) / np.where(k2 > 0, k2, 1.0), 0.5 * R * R)
    return _FreeSpace(m, h, P, kernel, _wavevectors(P, length, True), k2)


def _check_support(density, rel=1e-6):
    """The density must vanish on the outer layer of its window."""
    d = np.abs(density)
    peak = d.max() if d.size else 0.0
    if peak == 0:
        return
    faces = max(d[..., 0, :, :].max(), d[..., -1, :, :].max(), d[..., :, 0, :].max(),
                d[..., :, -1, :].max(), d[..., :, :, 0].max(), d[..., :, :, -1].max())
    if faces > rel * peak:
        raise PaddingError(
            "density does not vanish on the window boundary; enlarge the window "
            "so the support sits inside the padded region")


def newtonian_potential(density, h):
    """Free-space ``int density(y) / (4 pi |x - y|) dy`` on the density's window.

    ``density`` has cubic trailing axes ``(m, m, m)`` with spacing ``h``; any
    leading axes are treated as independent components.
    """
    density = np.asarray(density, dtype=float)
    m = _check_cubic(density)
    _check_support(density)
    fs = _free_space(m, float(h))
    return fs.back(fs.kernel * fs.forward(density))


def free_space_gradient(density, h):
    """Gradient of :func:`newtonian_potential`, applied on the kernel side."""
    density = np.asarray(density, dtype=float)
    m = _check_cubic(density)
    _check_support(density)
    fs = _free_space(m, float(h))
    dh = fs.kernel * fs.forward(density)
    return np.stack([fs.back(1j * k * dh) for k in fs.kd])


# ---------------------------------------------------------------------------
# Local windows and decompositions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Cube of ``m`` cells of the periodic grid centred on node ``center_index``."""

    center_index: tuple
    m: int
    n: int
    h: float

    @property
    def half(self) -> int:
        return (self.m - 1) // 2

    @property
    def indices(self):
        return tuple(np.mod(np.arange(c - self.half, c + self.half + 1), self.n)
                     for c in self.center_index)

    @property
    def local_center(self) -> tuple:
        return (self.half * self.h,) * 3

    @property
    def center_x(self) -> tuple:
        return tuple(c * self.h for c in self.center_index)

    def extract(self, arr):
        ix, iy, iz = self.indices
        return arr[..., ix[:, None, None], iy[None, :, None], iz[None, None, :]]

    def distance(self):
        d = (np.arange(self.m) - self.half) * self.h
        return np.sqrt(d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2)

    def offsets(self):
        d = (np.arange(self.m) - self.half) * self.h
        return np.meshgrid(d, d, d, indexing="ij")


def make_window(grid: Grid, x, rho: float, margin_cells: int = 4) -> Window:
    h = grid.h
    center = tuple(int(round(c / h)) % grid.n for c in x)
    half = int(math.ceil(rho / h)) + margin_cells
    m = 2 * half + 1
    if m > grid.n:
        raise PaddingError(
            f"cutoff radius {rho:.4g} needs a {m}-cell window but the box has {grid.n} cells")
    return Window(center, m, grid.n, h)


@dataclass(frozen=True, eq=False)
class DecompositionResult:
    """``input = primary + harmonic`` on a local window, one entry per time node.

    Arrays are ``(nt_window, components..., m, m, m)``. ``lap_input`` holds
    the spectral Laplacian of the input taken on the torus; ``lap_primary``
    holds ``-(localized source)``, the Laplacian of the primary part away from
    the kernel's truncation sphere, which never meets the window.
    """

    kind: str
    primary_part: np.ndarray
    harmonic_part: np.ndarray
    input_field: np.ndarray
    cutoff: Cutoff
    interior_radius: float
    window: Window
    times: np.ndarray
    time_index: np.ndarray
    lap_input: Optional[np.ndarray] = None
    lap_primary: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return self.window.h

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 1.0

    def ball(self, r: float, subsamples: int = DEFAULT_SUBSAMPLES):
        return ball_stencil(self.window.local_center, r, self.h, self.window.m,
                            subsamples, periodic=False)

    def harmonic_residual(self, radius: Optional[float] = None, method: str = "spectral") -> float:
        """``||lap harmonic|| / ||lap input||`` in L2 over ``B(radius)`` and all slices.

        ``method="spectral"`` uses ``lap_input - lap_primary``; ``"fd"`` applies
        a sixth-order difference stencil to the harmonic part itself, which also
        picks up the stencil's error on the cutoff layer's near-grid-scale content.
        """
        radius = self.interior_radius / 2 if radius is None else radius
        if radius + 4 * self.h > self.window.half * self.h:
            raise ValidationError("residual ball too close to the window boundary")
        st = self.ball(radius)
        if method == "spectral":
            res = st.gather(self.lap_input - self.lap_primary)
        elif method == "fd":
            res = st.gather(laplacian_fd(self.harmonic_part, self.h))
        else:
            raise ValidationError(f"unknown residual method {method!r}")
        ref = st.gather(self.lap_input)
        caxes = tuple(range(1, res.ndim - 3))
        num = np.sum(np.sum(res ** 2, axis=caxes) * st.weights)
        den = np.sum(np.sum(ref ** 2, axis=caxes) * st.weights)
        if den == 0:
            return 0.0 if num == 0 else math.inf
        return float(math.sqrt(num / den))

    def harmonic_defect(self, r: float, slice_index: int = -1) -> float:
        return harmonic_defect(self.harmonic_part[slice_index], self.h,
                               self.window.local_center, r, periodic=False)

    @property
    def trace_field(self) -> np.ndarray:
        """Tensor whose ball averages enter the remainder ``g(u; r)``."""
        if "grad_harmonic" in self.extras:
            return self.extras["grad_harmonic"]
        return self.harmonic_part


def _node_slices(stack: FieldStack, t, rho, times=None):
    """Time nodes to decompose: all of ``[t - rho^2, t]`` unless ``times`` picks some."""
    nodes = window_nodes(stack.grid, t - rho * rho, t)
    if times is None:
        return nodes
    picked = np.array(sorted({stack.grid.time_index(s) for s in times}))
    if picked.size == 0 or not np.all(np.isin(picked, nodes)):
        raise ValidationError(f"requested times must be nodes inside [{t - rho * rho}, {t}]")
    return picked


def _ball_average(arr, stencil):
    vals = stencil.gather(arr)
    return np.sum(vals * stencil.weights, axis=(-3, -2, -1)) / stencil.total


def _vorticity_slice(stack: FieldStack, k: int):
    if stack.w is not None:
        return stack.w[k]
    return spectral_curl(stack.u[k], stack.grid.domain_length)


_D1 = (-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60)
_D2 = (1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90)


def _fd(values, h, axis, coef):
    out = np.zeros_like(values)
    for j, c in enumerate(coef):
        if c:
            out += c * np.roll(values, 3 - j, axis=axis)
    return out


def fd_derivative(values, h, axis):
    """Sixth-order central first derivative along ``axis`` (a trailing space axis)."""
    return _fd(np.asarray(values, dtype=float), h, axis, _D1) / h


def fd_curl(v, h):
    return np.stack([
        fd_derivative(v[2], h, -2) - fd_derivative(v[1], h, -1),
        fd_derivative(v[0], h, -1) - fd_derivative(v[2], h, -3),
        fd_derivative(v[1], h, -3) - fd_derivative(v[0], h, -2),
    ])


def _fd_gradient(v, h):
    return np.stack([fd_derivative(v, h, ax) for ax in (-3, -2, -1)])


# The localized sources below are differentiated with compact stencils rather
# than spectrally: the cutoff's transition layer is only a few cells wide, and a
# spectral derivative would smear its truncation error over the whole window,
# while a local stencil keeps it inside the layer where the source is not
# claimed to match anything. Potentials are then taken with the free-space
# kernel, whose Laplacian is minus the source away from the truncation sphere.


def pressure_split(stack: FieldStack, x, t, rho: float, plateau_fraction: float = 0.5,
                   times=None) -> DecompositionResult:
    """``p = p1 + p2`` with ``p1`` the potential of the localized pressure source.

    ``p1 = G * (d_i d_j[(u_i - (u_i)_rho)(u_j - (u_j)_rho) phi] - div(f phi))``;
    ``p2`` is harmonic where the cutoff is flat for a divergence-free ``u``.
    """
    if stack.p is None:
        raise ValidationError("pressure_split needs a pressure field")
    g = stack.grid
    L, h = g.domain_length, g.h
    win = make_window(g, x, rho)
    cut = Cutoff(rho, plateau_fraction)
    phi = cut(win.distance())
    fs = _free_space(win.m, h)
    avg_st = ball_stencil(win.center_x, rho, h, g.n)
    nodes = _node_slices(stack, t, rho, times)
    p1s, srcs, inputs, lapins = [], [], [], []
    axes = (-3, -2, -1)
    for k in nodes:
        u = stack.u[k]
        ubar = _ball_average(u, avg_st)
        uw = win.extract(u) - ubar[:, None, None, None]
        src = np.zeros((win.m,) * 3)
        for i in range(3):
            src += _fd(uw[i] * uw[i] * phi, h, axes[i], _D2) / (h * h)
            for j in range(i + 1, 3):
                tij = uw[i] * uw[j] * phi
                src += 2.0 * fd_derivative(fd_derivative(tij, h, axes[i]), h, axes[j])
        if stack.f is not None:
            fw = win.extract(stack.f[k]) * phi
            for i in range(3):
                src -= fd_derivative(fw[i], h, axes[i])
        p1s.append(fs.back(fs.kernel * fs.forward(src)))
        srcs.append(src)
        inputs.append(win.extract(stack.p[k]))
        lapins.append(win.extract(spectral_laplacian(stack.p[k], L)))
    p1 = np.array(p1s)
    pin = np.array(inputs)
    return DecompositionResult(
        "pressure", p1, pin - p1, pin, cut, cut.plateau_radius, win,
        g.times[nodes], nodes, np.array(lapins), -np.array(srcs))


def biot_savart_local(stack: FieldStack, x, t, rho: float, plateau_fraction: float = 0.75,
                      with_gradient: bool = False, with_curl: bool = False,
                      times=None) -> DecompositionResult:
    """``v = curl G * (w phi) = G * curl(w phi)``, ``h = u - v``; ``h`` is harmonic on the plateau.

    ``with_gradient`` stores ``grad h`` (``[i, j] = d_i h_j``) in ``extras['grad_harmonic']``;
    ``with_curl`` stores ``curl v`` in ``extras['curl_primary']``.
    """
    g = stack.grid
    L, h = g.domain_length, g.h
    win = make_window(g, x, rho)
    cut = Cutoff(rho, plateau_fraction)
    phi = cut(win.distance())
    fs = _free_space(win.m, h)
    nodes = _node_slices(stack, t, rho, times)
    vs, srcs, uin, lapu, grads, curls = [], [], [], [], [], []

    def potential(a):
        return fs.back(fs.kernel * fs.forward(a))

    for k in nodes:
        w = _vorticity_slice(stack, k)
        src = fd_curl(win.extract(w) * phi, h)
        vs.append(potential(src))
        srcs.append(src)
        uin.append(win.extract(stack.u[k]))
        lapu.append(win.extract(spectral_laplacian(stack.u[k], L)))
        if with_gradient:
            gu = win.extract(spectral_gradient(stack.u[k], L))
            grads.append(gu - potential(_fd_gradient(src, h)))
        if with_curl:
            curls.append(potential(fd_curl(src, h)))
    v = np.array(vs)
    u = np.array(uin)
    extras = {}
    if with_gradient:
        extras["grad_harmonic"] = np.array(grads)
    if with_curl:
        extras["curl_primary"] = np.array(curls)
    return DecompositionResult(
        "biot_savart", v, u - v, u, cut, cut.plateau_radius, win,
        g.times[nodes], nodes, np.array(lapu), -np.array(srcs), extras)


def curl_tensor_split(stack: FieldStack, x, t, rho: float, plateau_fraction: float = 0.75,
                      times=None) -> DecompositionResult:
    """``V_ij = d_i G * ((curl w)_j phi)``, ``H = grad u - V``.

    Uses ``-lap u = curl w`` for divergence-free ``u`` with ``G`` the
    fundamental solution of ``-lap``, so ``H`` is harmonic on the plateau.
    """
    g = stack.grid
    L, h = g.domain_length, g.h
    win = make_window(g, x, rho)
    cut = Cutoff(rho, plateau_fraction)
    phi = cut(win.distance())
    fs = _free_space(win.m, h)
    nodes = _node_slices(stack, t, rho, times)
    Vs, srcs, gin, lapg = [], [], [], []
    for k in nodes:
        cw = spectral_curl(_vorticity_slice(stack, k), L)
        src = _fd_gradient(win.extract(cw) * phi, h)
        Vs.append(fs.back(fs.kernel * fs.forward(src)))
        srcs.append(src)
        gu = spectral_gradient(stack.u[k], L)
        gin.append(win.extract(gu))
        lapg.append(win.extract(spectral_laplacian(gu, L)))
    V = np.array(Vs)
    G = np.array(gin)
    return DecompositionResult(
        "curl_tensor", V, G - V, G, cut, cut.plateau_radius, win,
        g.times[nodes], nodes, np.array(lapg), -np.array(srcs))


# ---------------------------------------------------------------------------
# Harmonicity diagnostics
# ---------------------------------------------------------------------------

def laplacian_fd(values, h):
    """Sixth-order central-difference Laplacian over the trailing three axes.

    The outer three layers wrap around and are meaningless for non-periodic data.
    """
    values = np.asarray(values, dtype=float)
    return sum(_fd(values, h, ax, _D2) for ax in (-3, -2, -1)) / (h * h)


def _trilinear(values, h, x0):
    """Value of ``values[..., i, j, k]`` (node ``i*h``) at ``x0``; non-periodic."""
    s = np.asarray(x0, dtype=float) / h
    i0 = np.floor(s).astype(int)
    fr = s - i0
    n = values.shape[-1]
    out = 0.0
    for corner in range(8):
        bits = [(corner >> a) & 1 for a in range(3)]
        idx = [int(i0[a] + bits[a]) for a in range(3)]
        wgt = 1.0
        for a in range(3):
            wgt *= fr[a] if bits[a] else 1 - fr[a]
        if wgt == 0:
            continue
        idx = [i % n for i in idx]
        out = out + wgt * values[..., idx[0], idx[1], idx[2]]
    return out


def harmonic_defect(values, h, x0, r, periodic=True, subsamples=DEFAULT_SUBSAMPLES) -> float:
    """``|f(x0) - mean_{B(x0,r)} f| / sup_{B(x0,r)} |f|``; zero for harmonic ``f``.

    ``values`` is one time slice with cubic trailing axes (components first).
    """
    values = np.asarray(values, dtype=float)
    n = _check_cubic(values)
    st = ball_stencil(x0, r, h, n, subsamples, periodic=periodic)
    vals = st.gather(values)
    mean = np.sum(vals * st.weights, axis=(-3, -2, -1)) / st.total
    center = _trilinear(values, h, x0)
    mag = vals.reshape((-1,) + vals.shape[-3:]) if vals.ndim > 3 else vals[None]
    sup = float(np.sqrt(np.sum(mag ** 2, axis=0))[st.support].max())
    if sup == 0:
        return 0.0
    return float(np.linalg.norm(np.ravel(center - mean)) / sup)


@dataclass(frozen=True)
class TraceReport:
    radii: tuple
    values: tuple
    slope: float
    decreasing: bool


def loglog_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return 0.0 if np.all(y == 0) else math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def harmonic_mean_trace(h_like: DecompositionResult, r_ladder, p, q,
                        floor: float = 4.0) -> TraceReport:
    """``g(r) = r^(3/p - 1) (int_{t-r^2}^t |(H)_r(s)|^q ds)^(1/q)`` along a ladder.

    ``H`` is the decomposition's :attr:`~DecompositionResult.trace_field`.
    """
    pf, qf = exponent_float(p), exponent_float(q)
    tensor = h_like.trace_field
    times = h_like.times
    t_end = float(times[-1])
    radii, vals = [], []
    for r in r_ladder:
        if r < floor * h_like.h * (1 - 1e-12):
            raise ValidationError(f"ladder radius {r:.4g} below resolution floor")
        if r > h_like.cutoff.rho * (1 + 1e-12):
            raise ValidationError("ladder radius exceeds the decomposition radius")
        st = h_like.ball(r)
        vals_r = st.gather(tensor)
        avg = np.sum(vals_r * st.weights, axis=(-3, -2, -1)) / st.total
        mag = np.sqrt(np.sum(avg.reshape(len(times), -1) ** 2, axis=1))
        if math.isinf(qf):
            tw_nodes = np.nonzero(times >= t_end - r * r - 1e-9 * h_like.dt)[0]
            integral = float(mag[tw_nodes].max())
        else:
            idx, tw = hat_weights(float(times[0]), h_like.dt, len(times), t_end - r * r, t_end)
            integral = float(np.sum(tw * mag[idx] ** qf)) ** (1.0 / qf)
        scale = r ** ((0.0 if math.isinf(pf) else 3.0 / pf) - 1.0)
        radii.append(float(r))
        vals.append(scale * integral)
    order = np.argsort(radii)[::-1]
    v_sorted = np.array(vals)[order]
    peak = max(np.max(np.abs(v_sorted)), 1e-300)
    decreasing = bool(np.all(np.diff(v_sorted) <= 1e-9 * peak))
    return TraceReport(tuple(radii), tuple(vals), loglog_slope(radii, vals), decreasing)
