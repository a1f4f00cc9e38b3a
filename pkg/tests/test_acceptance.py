"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line before asserting,
so ``pytest -s`` or the captured log shows the whole scoreboard.
"""
import json
import math
import time
from fractions import Fraction as F

import numpy as np
import pytest

from nsrlab import container
from nsrlab.cli import main
from nsrlab.criteria import (
    CriterionConfig,
    LadderSpec,
    contraction_trace,
    evaluate_criterion,
    lemma_audit,
    singular_set_dimension,
)
from nsrlab.fieldlab import (
    FunctionalExponents,
    Grid,
    ParabolicCylinder,
    classify_exponents,
    make_grid,
)
from nsrlab.genflow import (
    FlowSpec,
    TestFunction,
    generate,
    local_energy_residual,
    ns_integrate,
    rescale,
    scaled_center,
)
from nsrlab.normcore import functional
from nsrlab.singops import biot_savart_local, curl_tensor_split, loglog_slope, pressure_split

TWO_PI = 2 * math.pi
KINDS = ("velocity", "velocity_gradient", "vorticity", "vorticity_gradient")


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail, started):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - started:.1f} s) {detail}"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def _node_point(grid, i, j, k):
    h = grid.h
    return (i * h, j * h, k * h)


# 1 --------------------------------------------------------------------------


def test_criterion_1_scaling_invariance(abc64, verdict):
    started = time.perf_counter()
    scaled = rescale(abc64, 2)
    x, t = _node_point(abc64.grid, 32, 24, 40), 3.2
    xs, ts = scaled_center(x, t, 2)
    names = ("A", "E", "C", "Ctilde", "D", "Gtilde", "G1", "W")
    fe = FunctionalExponents.from_q(F(4, 3))
    worst, where = 0.0, None
    for r in (0.8, 0.64, 0.512, 0.4096):
        for name in names:
            a = functional(name, scaled, ParabolicCylinder(xs, ts, r), fe)
            b = functional(name, abc64, ParabolicCylinder(x, t, 2 * r), fe)
            mis = abs(a - b) / max(abs(b), 1e-9)
            if mis > worst:
                worst, where = mis, (name, r)
    verdict(1, worst < 0.02, f"max mismatch {worst:.2e} at {where}", started)


# 2 --------------------------------------------------------------------------

INF = "inf"


def _p(inv):
    return INF if inv == 0 else 1 / F(inv)


# (kind, 1/p, 1/q, admissible); the first exponent is p* for velocity and p# for
# the vorticity gradient
REGION_TABLE = [
    ("velocity", F(1, 3), F(1, 2), True),
    ("velocity", F(2, 3), 1, False),
    ("velocity", 1, F(1, 2), False),
    ("velocity", 0, F(1, 2), True),
    ("velocity", F(1, 3), 0, True),
    ("velocity", 0, 0, False),
    ("velocity", F(1, 6), F(1, 4), True),
    ("velocity", F(1, 6), F(1, 8), False),
    ("velocity", F(1, 2), F(1, 4), True),
    ("velocity", F(1, 2), F(1, 2), False),
    ("velocity", 0, 1, True),
    ("velocity", F(1, 3), 1, False),
    ("velocity", F(2, 3), 0, True),
    ("velocity", 1, 0, False),
    ("velocity_gradient", F(1, 3), F(1, 2), True),
    ("velocity_gradient", F(2, 3), 1, False),
    ("velocity_gradient", 1, F(1, 2), False),
    ("velocity_gradient", 1, 0, True),
    ("velocity_gradient", F(2, 3), F(1, 2), True),
    ("velocity_gradient", F(1, 2), F(1, 2), True),
    ("velocity_gradient", 0, 1, True),
    ("velocity_gradient", F(1, 3), 1, True),
    ("velocity_gradient", F(1, 6), F(1, 2), False),
    ("velocity_gradient", 0, 0, False),
    ("velocity_gradient", F(2, 3), 0, True),
    ("vorticity", F(1, 3), F(1, 2), True),
    ("vorticity", F(2, 3), 1, False),
    ("vorticity", 1, F(1, 2), False),
    ("vorticity", 1, 0, False),
    ("vorticity", F(2, 3), F(1, 2), True),
    ("vorticity", F(1, 2), F(1, 2), True),
    ("vorticity", F(1, 2), 0, False),
    ("vorticity", 0, 1, True),
    ("vorticity", F(1, 2), F(3, 4), True),
    ("vorticity", F(2, 3), F(1, 4), True),
    ("vorticity_gradient", F(1, 3), F(1, 2), False),
    ("vorticity_gradient", F(2, 3), 1, True),
    ("vorticity_gradient", 1, F(1, 2), True),
    ("vorticity_gradient", 1, 0, True),
    ("vorticity_gradient", 1, 1, False),
    ("vorticity_gradient", F(2, 3), F(1, 2), True),
    ("vorticity_gradient", F(1, 2), 1, True),
    ("vorticity_gradient", F(1, 3), 1, True),
    ("vorticity_gradient", F(5, 6), F(1, 4), True),
    ("vorticity_gradient", F(1, 2), F(1, 2), False),
]


def test_criterion_2_exponent_regions(verdict):
    started = time.perf_counter()
    wrong = [(kind, a, b) for kind, a, b, want in REGION_TABLE
             if classify_exponents(kind, _p(a), _p(b)).admissible != want]
    elapsed = time.perf_counter() - started
    ok = not wrong and len(REGION_TABLE) >= 40 and elapsed < 1.0
    verdict(2, ok, f"{len(REGION_TABLE)} points, mismatches {wrong}", started)


# 3 --------------------------------------------------------------------------

AUDIT_Z = ((3.0, 3.1, 2.9), 3.0)


def _audit(spec, n, q):
    stack = generate(spec, Grid.cube(n, 16, TWO_PI, 0.2))
    return lemma_audit(stack, AUDIT_Z, 0.8, 1.6, q)


def test_criterion_3_lemma_audits(verdict):
    started = time.perf_counter()
    problems, worst_l31, reports = [], 0.0, 0
    for seed in range(100):
        q = "4/3" if seed % 2 == 0 else 1
        audit = _audit(FlowSpec("random_solenoidal", seed=seed), 32, q)
        for rep in audit:
            reports += 1
            if not math.isfinite(rep.fitted_constant):
                problems.append(f"seed {seed} {rep.lemma_id} not finite")
            if rep.lemma_id == "L3-1":
                worst_l31 = max(worst_l31, rep.fitted_constant)
    worst_ratio, ratio_at = 1.0, None
    cases = [(FlowSpec("abc", nu=0.1), q) for q in ("4/3", 1)]
    cases += [(FlowSpec("random_solenoidal", seed=s), "4/3" if s % 2 == 0 else 1)
              for s in range(4)]
    for spec, q in cases:
        coarse = _audit(spec, 32, q).by_id()
        fine = _audit(spec, 64, q).by_id()
        for lid, rep in fine.items():
            reports += 2
            c32, c64 = coarse[lid].fitted_constant, rep.fitted_constant
            if not (math.isfinite(c32) and math.isfinite(c64)):
                problems.append(f"{spec.family} {lid} not finite")
                continue
            if lid == "L3-1":
                worst_l31 = max(worst_l31, c32, c64)
            if c32 == 0 and c64 == 0:
                continue
            ratio = max(c32, c64) / max(min(c32, c64), 1e-300)
            if ratio > worst_ratio:
                worst_ratio, ratio_at = ratio, (spec.family, spec.seed, lid)
    ok = not problems and worst_l31 <= 32 and worst_ratio < 2
    verdict(3, ok, f"{reports} reports, max L3-1 constant {worst_l31:.3g}, worst 32->64 ratio "
            f"{worst_ratio:.4f} at {ratio_at}, problems {problems[:3]}", started)


# 4 --------------------------------------------------------------------------


def test_criterion_4_harmonic_remainders(abc64, verdict):
    started = time.perf_counter()
    x, t = _node_point(abc64.grid, 32, 24, 40), 4.0
    rho, bound = 1.6, 1e-2
    parts = {
        "p2": pressure_split(abc64, x, t, rho, times=[t - 1.0, t]),
        "h": biot_savart_local(abc64, x, t, rho, times=[t - 1.0, t]),
        "H": curl_tensor_split(abc64, x, t, rho, times=[t - 1.0, t]),
    }
    rows, ok = [], True
    for name, dec in parts.items():
        half = dec.interior_radius / 2
        res = dec.harmonic_residual(half)
        defect = max(dec.harmonic_defect(half, k) for k in range(len(dec.times)))
        ok &= res < bound and defect < 3 * bound
        rows.append(f"{name}: residual {res:.1e} defect {defect:.1e}")
    verdict(4, ok, "; ".join(rows), started)


# 5 --------------------------------------------------------------------------


def _lei_residual(dt):
    window = 0.048
    grid = make_grid(64, 2, TWO_PI, dt)
    u0 = generate(FlowSpec("abc", nu=0.1), grid).u[0]
    steps = int(round(window / dt))
    out = ns_integrate(u0, None, 0.1, grid, steps)
    ledger = local_energy_residual(out, TestFunction((2.0, 3.0, 1.0)), (0.0, window))
    return ledger.relative_residual


def test_criterion_5_local_energy_inequality(verdict):
    started = time.perf_counter()
    dts = [4e-3, 2e-3, 1e-3]
    res = [_lei_residual(dt) for dt in dts]
    slope = loglog_slope(dts, np.abs(res))
    ok = abs(res[-1]) < 1e-6 and slope >= 1.8
    verdict(5, ok, f"relative residuals {[f'{r:.1e}' for r in res]}, dt slope {slope:.2f}",
            started)


# 6 --------------------------------------------------------------------------


def test_criterion_6_exact_solution_fidelity(verdict):
    started = time.perf_counter()
    nu, T, steps = 0.1, 0.1, 20
    grid = make_grid(32, 2, TWO_PI, T / steps)
    u0 = generate(FlowSpec("abc", nu=nu), grid).u[0]
    out = ns_integrate(u0, None, nu, grid, steps)
    exact = math.exp(-nu * T) * u0
    err = float(np.linalg.norm(out.u[-1] - exact) / np.linalg.norm(exact))
    verdict(6, err < 1e-6, f"relative L2 error {err:.1e}", started)


# 7 --------------------------------------------------------------------------


def test_criterion_7_criterion_discrimination(calm_abc64, mock64, verdict):
    started = time.perf_counter()
    g = calm_abc64.grid
    ladder = LadderSpec(r0=1.8, ratio=0.85, k_max=8)
    points = [_node_point(g, 32, 24, 40), _node_point(g, 20, 30, 28), _node_point(g, 40, 40, 16)]
    statuses = {}
    for x in points:
        for kind in KINDS:
            v = evaluate_criterion(calm_abc64, (x, 3.0), CriterionConfig(kind, ladder))
            statuses[(x, kind)] = v.status
    abc_ok = all(s == "regular" for s in statuses.values())
    centre = _node_point(mock64.grid, 32, 32, 32)
    mock = evaluate_criterion(mock64, (centre, 3.5),
                              CriterionConfig("velocity", LadderSpec(r0=1.8, ratio=0.85, k_max=4)))
    tail = mock.values[-3:]
    spread = (max(tail) - min(tail)) / max(tail)
    ok = abc_ok and mock.status == "flagged" and spread < 0.05
    verdict(7, ok, f"ABC statuses {sorted(set(statuses.values()))} over {len(statuses)} checks; "
            f"mock {mock.status}, evidence {[round(float(v), 3) for v in mock.values]}, "
            f"tail spread {spread:.1%}", started)


# 8 --------------------------------------------------------------------------


def test_criterion_8_contraction_trace(calm_abc64, mock64, verdict):
    started = time.perf_counter()
    x = _node_point(calm_abc64.grid, 32, 24, 40)
    abc = contraction_trace(calm_abc64, (x, 4.0), 2.0, 0.2, 4)
    centre = _node_point(mock64.grid, 32, 32, 32)
    mock = contraction_trace(mock64, (centre, 4.0), 2.0, 0.2, 4)
    ok = abc.first_below is not None and abc.first_below <= 4 and mock.first_below is None
    verdict(8, ok, f"ABC first k below eps {abc.first_below} (C+D {abc.values.round(4).tolist()}); "
            f"mock C+D {mock.values.round(2).tolist()} over feasible k "
            f"{[s[0] for s in mock.steps]}", started)


# 9 --------------------------------------------------------------------------


def test_criterion_9_dimension_estimator(verdict):
    started = time.perf_counter()
    scales = [0.5, 0.25, 0.125, 0.0625, 0.03125]
    point = singular_set_dimension([(1.3, 2.1, 0.7, 0.4)], scales).dimension
    s = np.linspace(0.0, 1.0, 20000, endpoint=False)
    segment = singular_set_dimension([(1.0 + 1.5 * a, 2.0 + a, 2.0, 1.0) for a in s],
                                     scales).dimension
    ok = point == 0.0 and abs(segment - 1.0) <= 0.15
    verdict(9, ok, f"point {point:.3f}, segment {segment:.3f}", started)


# 10 -------------------------------------------------------------------------


def test_criterion_10_format_determinism(tmp_path, verdict):
    started = time.perf_counter()
    path = tmp_path / "abc.nsrl"
    stack = generate(FlowSpec("abc", nu=0.1), make_grid(32, 31, TWO_PI, 0.1))
    container.write(path, stack)
    raw = path.read_bytes()
    again = tmp_path / "again.nsrl"
    container.write(again, container.read(path))
    round_trip = again.read_bytes() == raw
    out = tmp_path / "report.json"
    texts = []
    for _ in range(2):
        main(["diagnose", str(path), "--no-timestamp", "--out", str(out)])
        texts.append(out.read_bytes())
    reports_equal = texts[0] == texts[1] and bool(json.loads(texts[0])["verdicts"])
    verdict(10, round_trip and reports_equal,
            f"container round trip identical {round_trip}, reports identical {reports_equal}",
            started)
