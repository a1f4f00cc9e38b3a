import math

import numpy as np
import pytest

from nsrlab.fieldlab import Grid, ValidationError, make_grid
from nsrlab.genflow import (
    FlowSpec,
    NumericalError,
    TestFunction,
    generate,
    local_energy_residual,
    ns_integrate,
    pressure_from_velocity,
    rescale,
    scaled_center,
)
from nsrlab.singops import spectral_divergence, spectral_gradient, spectral_laplacian

L = 2 * math.pi


def ns_defect(stack, k, nu):
    """Residual of the momentum equation at node k, with d/dt by central differences."""
    dt = stack.grid.dt
    dudt = (stack.u[k + 1] - stack.u[k - 1]) / (2 * dt)
    u = stack.u[k]
    gu = spectral_gradient(u, L)  # [i, j] = d_i u_j
    adv = np.einsum("iabc,ijabc->jabc", u, gu)
    gp = spectral_gradient(stack.p[k], L)
    lap = np.stack([spectral_laplacian(c, L) for c in u])
    force = 0.0 if stack.f is None else stack.f[k]
    return np.abs(dudt + adv + gp - nu * lap - force).max()


def test_abc_solves_navier_stokes():
    s = generate(FlowSpec("abc", nu=0.1), make_grid(16, 3, L, 1e-4, 1.0))
    assert ns_defect(s, 1, 0.1) < 1e-6
    np.testing.assert_allclose(spectral_divergence(s.u[1], L), 0, atol=1e-12)
    np.testing.assert_allclose(pressure_from_velocity(s.u[1], L), s.p[1], atol=1e-12)


def test_steady_forcing_stops_decay():
    s = generate(FlowSpec("single_mode_beltrami", force="steady", mode=2), make_grid(16, 4, L, 0.5))
    np.testing.assert_allclose(s.u[0], s.u[-1])
    assert s.f is not None and ns_defect(s, 1, 0.1) < 1e-10


def test_rescaled_abc_is_the_next_mode():
    g = make_grid(32, 5, L, 0.1)
    sc = rescale(generate(FlowSpec("abc", nu=0.1), g), 2)
    assert sc.grid.dt == pytest.approx(0.025) and sc.meta["rescaled_by"] == 2
    ref = generate(FlowSpec("abc", A=2, B=2, C=2, mode=2, nu=0.1), make_grid(32, 5, L, 0.025))
    np.testing.assert_allclose(sc.u, ref.u, atol=1e-12)
    np.testing.assert_allclose(sc.p, ref.p, atol=1e-12)
    assert scaled_center((2.0, 4.0, 6.0), 1.0, 2) == ((1.0, 2.0, 3.0), 0.25)


@pytest.mark.parametrize("lam", [3, 0.5, 0, -2])
def test_rescale_rejects_off_grid_factors(lam):
    s = generate(FlowSpec("abc"), make_grid(16, 2, L, 0.1))
    with pytest.raises(ValidationError):
        rescale(s, lam)


def test_homogeneous_profile_scales_like_inverse_distance():
    g = make_grid(64, 2, L, 0.1)
    s = generate(FlowSpec("homogeneous_minus_one"), g)
    c = 32
    near, far = s.u[0][:, c + 4, c, c], s.u[0][:, c + 8, c, c]
    np.testing.assert_allclose(near, 2 * far, rtol=1e-12)
    diag_near, diag_far = s.u[0][:, c - 3, c + 3, c + 3], s.u[0][:, c - 6, c + 6, c + 6]
    np.testing.assert_allclose(diag_near, 2 * diag_far, rtol=1e-12)
    assert not s.is_solution
    with pytest.raises(ValidationError):
        generate(FlowSpec("homogeneous_minus_one", r_moll=2 * g.h), g)


def test_random_field_is_solenoidal_and_seeded():
    g = make_grid(32, 3, L, 0.2)
    a = generate(FlowSpec("random_solenoidal", seed=7, amplitude=0.5), g)
    b = generate(FlowSpec("random_solenoidal", seed=7, amplitude=0.5), g)
    c = generate(FlowSpec("random_solenoidal", seed=8, amplitude=0.5), g)
    np.testing.assert_array_equal(a.u, b.u)
    assert not np.allclose(a.u, c.u)
    for k in range(3):
        assert np.abs(spectral_divergence(a.u[k], L)).max() < 1e-10
    assert math.sqrt(np.mean(np.sum(a.u[0] ** 2, axis=0))) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        generate(FlowSpec("random_solenoidal", k_max=8), make_grid(32, 2, L, 0.1))


def test_flow_spec_validation():
    with pytest.raises(ValidationError):
        FlowSpec("vortex_ring")
    with pytest.raises(ValidationError):
        FlowSpec("abc", force="gusty")
    with pytest.raises(ValidationError):
        FlowSpec("abc", nu=-1)


def test_integrator_guards():
    g = make_grid(16, 2, L, 0.05)
    X, Y, Z = g.mesh()
    with pytest.raises(ValidationError):
        ns_integrate(np.stack([np.sin(X), 0 * X, 0 * X]), None, 0.1, g, 2)
    u0 = generate(FlowSpec("abc"), g).u[0]
    with pytest.raises(ValidationError):
        ns_integrate(u0, None, 0.1, g, 3, store_every=2)
    with pytest.raises(NumericalError):
        ns_integrate(20 * u0, None, 0.1, g, 2)


def test_integrator_keeps_store_spacing():
    g = make_grid(16, 2, L, 0.01)
    u0 = generate(FlowSpec("abc"), g).u[0]
    out = ns_integrate(u0, None, 0.1, g, 10, store_every=5)
    assert out.grid.nt == 3 and out.grid.dt == pytest.approx(0.05)
    exact = math.exp(-0.1 * 0.1) * u0
    np.testing.assert_allclose(out.u[-1], exact, atol=1e-10)


def test_energy_ledger_balances_and_detects_sign(abc32):
    phi = TestFunction((2.0, 3.0, 1.0))
    led = local_energy_residual(abc32, phi, (1.0, 2.0))
    assert abs(led.relative_residual) < 5e-3
    inflated = local_energy_residual(abc32, phi, (1.0, 2.0), dissipation_scale=2.0)
    assert not inflated.satisfied
    with pytest.raises(ValidationError):
        local_energy_residual(abc32, phi, (3.5, 4.5))


def test_energy_ledger_refuses_non_solutions(mock64):
    with pytest.raises(ValidationError):
        local_energy_residual(mock64, TestFunction((3.0, 3.0, 3.0)), (0.0, 1.0))
