import math

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import constant_stack
from nsrlab.fieldlab import FieldStack, Grid, ParabolicCylinder, ValidationError
from nsrlab.normcore import (
    MissingFieldError,
    MorreyParams,
    build_ladder,
    canonical_name,
    criterion_exponent,
    criterion_quantity,
    functional,
    holder_factor,
    mixed_norm,
    morrey_search,
    spatial_average,
)

BALL = 4 * math.pi / 3
CENTER = (3.0, 3.1, 2.9)


def shear_stack(n=32, nt=12, dt=0.25):
    """u = (sin z, 0, 0): |grad u| = |w| = |cos z|, pressure zero."""
    g = Grid.cube(n, nt, 2 * math.pi, dt)
    _, _, Z = g.mesh()
    u = np.zeros((nt, 3) + g.shape)
    u[:, 0] = np.sin(Z)
    return FieldStack(g, u, np.zeros((nt,) + g.shape))


def cos2_ball(z0, r):
    return quad(lambda s: math.pi * (r * r - s * s) * math.cos(z0 + s) ** 2, -r, r)[0]


def test_constant_field_functionals():
    c = np.array([1.0, -2.0, 0.5])
    s = constant_stack(c, n=32, p=-1.5)
    Q = ParabolicCylinder(CENTER, 2.0, 1.0)
    mag = float(np.linalg.norm(c))
    assert functional("C", s, Q) == pytest.approx(BALL * mag ** 3, rel=3e-3)
    assert functional("A", s, Q) == pytest.approx(BALL * mag ** 2, rel=3e-3)
    assert functional("D", s, Q) == pytest.approx(BALL * 1.5 ** 1.5, rel=3e-3)
    assert functional("Ctilde", s, Q) == pytest.approx(0.0, abs=1e-12)
    assert functional("E", s, Q) == pytest.approx(0.0, abs=1e-12)
    assert functional("W", s, Q, (2, "4/3")) == pytest.approx(0.0, abs=1e-12)


def test_pressure_functional_needs_pressure():
    s = constant_stack([1.0, 0, 0])
    with pytest.raises(MissingFieldError):
        functional("D", s, ParabolicCylinder(CENTER, 2.0, 1.0))


def test_functional_names_and_exponents():
    assert canonical_name("C̃") == "Ctilde" and canonical_name("W_1") == "W1"
    with pytest.raises(ValidationError):
        canonical_name("C~")
    s = constant_stack([1.0, 0, 0])
    Q = ParabolicCylinder(CENTER, 2.0, 1.0)
    with pytest.raises(ValidationError):
        functional("G1", s, Q)
    with pytest.raises(ValidationError):
        functional("Gtilde", s, Q, (3, 1))
    with pytest.raises(ValidationError):
        functional("W1", s, Q, ("6/5", 4))


def test_energy_of_shear_matches_quadrature():
    s = shear_stack()
    r, t = 0.9, 2.0
    Q = ParabolicCylinder(CENTER, t, r)
    want = cos2_ball(CENTER[2], r) * r * r / r
    assert functional("E", s, Q) == pytest.approx(want, rel=5e-3)
    # vorticity (0, cos z, 0) has the same magnitude as grad u, so W at (2, 4/3) is
    # the L^2 space norm raised to the L^{4/3} time norm
    w = math.sqrt(cos2_ball(CENTER[2], r)) * (r * r) ** 0.75 / r
    assert functional("W", s, Q, (2, "4/3")) == pytest.approx(w, rel=5e-3)
    assert functional("G1", s, Q, (2, "4/3")) == pytest.approx(w, rel=5e-3)


def test_velocity_criterion_plain_constant():
    s = constant_stack([0.6, 0.8, 0.0], n=64, nt=9)
    Q = ParabolicCylinder(CENTER, 2.0, 0.5)
    got = criterion_quantity("velocity", s, Q, 3, 6, centered=False)
    assert got == pytest.approx(BALL ** (1 / 3) * 0.5, rel=3e-3)
    assert criterion_quantity("velocity", s, Q, 3, 6) == pytest.approx(0.0, abs=1e-12)


def test_criterion_exponent_matches_scaling():
    assert criterion_exponent("velocity", 3, 6) == pytest.approx(-1 / 3)
    assert criterion_exponent("vorticity", 2, 2) == pytest.approx(-0.5)
    assert criterion_exponent("velocity_gradient", 3, 2) == pytest.approx(0.0)


def test_criterion_rejects_inadmissible_and_curl_swap():
    s = constant_stack([1.0, 0, 0])
    Q = ParabolicCylinder(CENTER, 2.0, 1.0)
    with pytest.raises(ValidationError):
        criterion_quantity("vorticity", s, Q, 1, "inf")
    with pytest.raises(ValidationError):
        criterion_quantity("vorticity", s, Q, 2, 2, curl_vorticity=True)


def test_holder_bound_holds_on_random_field():
    rng = np.random.default_rng(4)
    g = Grid.cube(32, 12, 2 * math.pi, 0.25)
    f = rng.standard_normal((g.nt,) + g.shape)
    Q = ParabolicCylinder(CENTER, 2.5, 1.2)
    lo = mixed_norm(f, Q, 2, "4/3", g)
    hi = mixed_norm(f, Q, 4, 3, g)
    assert lo <= holder_factor(Q, 2, "4/3", 4, 3) * hi * (1 + 1e-9)


def test_mixed_norm_sup_in_time_and_average():
    s = constant_stack([0.0, 0.0, 2.0], n=32)
    Q = ParabolicCylinder(CENTER, 2.0, 1.0)
    assert mixed_norm(s.u, Q, "inf", "inf", s.grid) == pytest.approx(2.0)
    avg = spatial_average(s.u, CENTER, 1.0, 1.0, s.grid)
    np.testing.assert_allclose(avg, [0.0, 0.0, 2.0], atol=1e-12)


def test_morrey_of_constant_picks_largest_radius():
    s = constant_stack([1.0, 0.0, 0.0], n=32, nt=12, dt=0.25)
    radii = (1.0, 0.8)
    res = morrey_search(s.u, MorreyParams(gamma=0.5, radii=radii, stride=4), s.grid)
    want = math.sqrt(BALL * 1.0 ** (4 - 2 * 0.5))
    assert res.value == pytest.approx(want, rel=2e-2)
    assert res.maximizer[2] == 1.0
    with pytest.raises(ValidationError):
        MorreyParams(gamma=2.5)


def test_ladder_truncates_and_records_omissions():
    s = constant_stack([1.0, 0, 0], n=32)
    lad = build_ladder(s, (CENTER, 2.5), 1.5, 0.5, 6, exponents=(2, "4/3"))
    assert lad.radii[0] == 1.5 and len(lad.radii) < 7
    assert any("floor" in w for w in lad.warnings)
    assert lad.omissions["D"] == "pressure not supplied"
    assert np.all(np.isfinite(lad.series("C")))
    with pytest.raises(ValidationError):
        build_ladder(s, (CENTER, 2.5), 1.5, 0.7, 2)
