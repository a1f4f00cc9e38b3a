import math

import numpy as np
import pytest
from scipy.special import erf

from nsrlab.fieldlab import Grid, ValidationError
from nsrlab.singops import (
    PaddingError,
    biot_savart_local,
    curl_tensor_split,
    fd_derivative,
    harmonic_defect,
    harmonic_mean_trace,
    laplacian_fd,
    loglog_slope,
    make_window,
    newtonian_potential,
    pressure_split,
    spectral_curl,
    spectral_divergence,
    spectral_gradient,
    spectral_laplacian,
)

L = 2 * math.pi


def _mesh(n):
    return Grid.cube(n, 2, L, 1.0).mesh()


def test_spectral_derivatives_on_modes():
    X, Y, Z = _mesh(16)
    f = np.sin(2 * X) * np.cos(Y)
    g = spectral_gradient(f, L)
    np.testing.assert_allclose(g[0], 2 * np.cos(2 * X) * np.cos(Y), atol=1e-12)
    np.testing.assert_allclose(g[1], -np.sin(2 * X) * np.sin(Y), atol=1e-12)
    np.testing.assert_allclose(spectral_laplacian(f, L), -5 * f, atol=1e-11)


def test_curl_and_divergence_of_beltrami_mode():
    X, Y, Z = _mesh(16)
    u = np.stack([np.sin(Z), np.cos(Z), 0 * Z])
    np.testing.assert_allclose(spectral_curl(u, L), u, atol=1e-12)
    np.testing.assert_allclose(spectral_divergence(u, L), 0, atol=1e-12)


def test_fd_derivative_is_sixth_order():
    errs = []
    for n in (16, 32):
        X, _, _ = _mesh(n)
        d = fd_derivative(np.sin(X), L / n, 0)
        errs.append(np.abs(d - np.cos(X)).max())
    assert math.log2(errs[0] / errs[1]) == pytest.approx(6, abs=0.3)
    X, Y, Z = _mesh(32)
    lap = laplacian_fd(np.sin(X) * np.sin(Y) * np.sin(Z), L / 32)
    np.testing.assert_allclose(lap, -3 * np.sin(X) * np.sin(Y) * np.sin(Z), atol=1e-5)


def test_newtonian_potential_of_gaussian():
    m, h, s = 49, 0.1, 0.3
    d = (np.arange(m) - m // 2) * h
    R = np.sqrt(d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2)
    rho = np.exp(-R ** 2 / (2 * s * s))
    mass = (2 * math.pi * s * s) ** 1.5
    phi = newtonian_potential(rho, h)
    for i in (m // 2 + 5, m // 2 + 15):
        r = R[i, m // 2, m // 2]
        exact = mass / (4 * math.pi * r) * erf(r / (math.sqrt(2) * s))
        assert phi[i, m // 2, m // 2] == pytest.approx(exact, rel=2e-3)


def test_newtonian_potential_requires_compact_support():
    with pytest.raises(PaddingError):
        newtonian_potential(np.ones((9, 9, 9)), 0.1)


def test_window_too_large_for_box():
    g = Grid.cube(16, 4, L, 0.1)
    with pytest.raises(PaddingError):
        make_window(g, (3.0, 3.0, 3.0), 3.0)
    w = make_window(g, (3.0, 3.0, 3.0), 1.0)
    assert w.m % 2 == 1 and w.half * w.h >= 1.0


def test_harmonic_defect_separates_harmonic_from_not():
    X, Y, Z = _mesh(32)
    x0 = (3.0, 3.0, 3.0)
    harm = (X - 3) ** 2 - (Y - 3) ** 2 + (Z - 3)
    bowl = (X - 3) ** 2 + (Y - 3) ** 2 + (Z - 3) ** 2
    h = L / 32
    assert harmonic_defect(harm, h, x0, 1.0, periodic=False) < 1e-3
    assert harmonic_defect(bowl, h, x0, 1.0, periodic=False) > 0.1


def test_loglog_slope_recovers_power():
    r = np.array([1.0, 0.5, 0.25])
    assert loglog_slope(r, 3 * r ** 1.5) == pytest.approx(1.5)
    assert loglog_slope(r, np.zeros(3)) == 0.0


@pytest.fixture(scope="module")
def point(abc64):
    h = abc64.grid.h
    return (32 * h, 24 * h, 40 * h), 4.0


@pytest.mark.parametrize("split", [pressure_split, biot_savart_local, curl_tensor_split])
def test_splits_are_exact_and_harmonic(abc64, point, split):
    x, t = point
    res = split(abc64, x, t, 1.6, times=[t])
    np.testing.assert_allclose(res.primary_part + res.harmonic_part, res.input_field, atol=1e-12)
    assert res.harmonic_residual() < 1e-3
    assert res.harmonic_defect(0.5) < 1e-3


def test_mean_trace_rejects_radius_beyond_cutoff(abc64, point):
    x, t = point
    res = biot_savart_local(abc64, x, t, 1.2, with_gradient=True, times=[t - 1.0, t])
    with pytest.raises(ValidationError):
        harmonic_mean_trace(res, [1.5], 3, 2)
    rep = harmonic_mean_trace(res, [1.0, 0.6], 3, 2)
    assert len(rep.values) == 2 and all(v > 0 for v in rep.values)
