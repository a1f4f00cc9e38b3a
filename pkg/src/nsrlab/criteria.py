"""Regularity verdicts, the contraction trace, lemma audits and box counting of flagged points.

A verdict is built from a ladder of criterion quantities. The limit as the
radius shrinks cannot be sampled on a grid, so it is stood in for by the
largest value among the last three feasible rungs, and a log-log slope is
reported next to it so the reader can tell a field that is still decaying
from one that has flattened out.

Verdict vocabulary is deliberately weak: ``regular`` means the smallness
condition was met on the sampled ladder, ``flagged`` means the evidence stayed
above the threshold without decaying, and ``inconclusive`` covers the rest.
Nothing here certifies a singularity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .config import pool_map
from .fieldlab import (
    DEFAULT_SUBSAMPLES,
    INF,
    RESOLUTION_FLOOR,
    ExponentPair,
    FieldStack,
    FunctionalExponents,
    Kind,
    ParabolicCylinder,
    ValidationError,
    as_exponent,
    bracket_nodes,
    check_cylinder,
    exponent_float,
    fmt_exponent,
    reciprocal,
)
from .genflow import NumericalError
from .normcore import (
    MissingFieldError,
    MorreyParams,
    criterion_quantity,
    functional,
    mixed_norm,
    morrey_norm,
)
from .singops import biot_savart_local, curl_tensor_split, harmonic_mean_trace, loglog_slope

DEFAULT_EPSILON = 0.05
# One threshold per criterion so a calibration can move them independently.
EPSILON_BY_KIND = {k: DEFAULT_EPSILON for k in Kind}
DEFAULT_EXPONENTS = {
    Kind.velocity: (Fraction(3, 2), INF),
    Kind.velocity_gradient: (2, 2),
    Kind.vorticity: (2, 2),
    Kind.vorticity_gradient: (Fraction(3, 2), 2),
}
STATUSES = ("regular", "flagged", "inconclusive")
LEMMA_IDS = ("lei2", "basiclemma", "L3-1", "preest", "lemma3-6", "TH3-4a", "TH3-4b", "RK3.7",
             "lemma3-7a", "lemma3-7b")


class LadderInfeasible(ValidationError):
    """No rung of the requested ladder fits the grid and the sampled time extent."""


def _finite_or_raise(values, what):
    for v in values:
        if not math.isfinite(v):
            raise NumericalError(f"non-finite {what} encountered: {v}")


# ---------------------------------------------------------------------------
# ladders and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LadderSpec:
    """Radii ``r0 * ratio**k`` for ``k = 0..k_max``, or an explicit descending list."""

    r0: Optional[float] = None
    ratio: float = 0.7
    k_max: int = 4
    radii: Optional[tuple] = None

    def __post_init__(self):
        if self.radii is not None:
            rr = tuple(float(r) for r in self.radii)
            if not rr or any(r <= 0 for r in rr):
                raise ValidationError("explicit ladder radii must be positive")
            object.__setattr__(self, "radii", tuple(sorted(rr, reverse=True)))
            return
        if self.r0 is None or not self.r0 > 0:
            raise ValidationError("ladder needs r0 > 0 or explicit radii")
        if not 0 < self.ratio < 1:
            raise ValidationError(f"ladder ratio must lie in (0, 1), got {self.ratio}")
        if self.k_max < 0:
            raise ValidationError("k_max must be nonnegative")

    def candidates(self) -> list:
        if self.radii is not None:
            return list(self.radii)
        return [self.r0 * self.ratio ** k for k in range(self.k_max + 1)]

    def feasible(self, grid, t: float, floor: float = RESOLUTION_FLOOR):
        """Radii whose cylinders fit, and a warning for every rung dropped."""
        keep, warnings = [], []
        for r in self.candidates():
            try:
                check_cylinder(grid, ParabolicCylinder((0.0, 0.0, 0.0), t, r), floor)
            except ValidationError as exc:
                warnings.append(f"rung r = {r:.4g} dropped: {exc}")
                continue
            keep.append(r)
        return keep, warnings

    def as_dict(self) -> dict:
        return {"r0": self.r0, "ratio": self.ratio, "k_max": self.k_max,
                "radii": list(self.radii) if self.radii is not None else None}


@dataclass(frozen=True)
class CriterionConfig:
    kind: Kind
    ladder: LadderSpec
    exponents: Optional[ExponentPair] = None
    epsilon: Optional[float] = None
    theta: float = 0.2
    use_centered_velocity: bool = True
    use_curl_vorticity: bool = False
    flat_slope: float = 0.25
    tail_rungs: int = 3

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        ex = self.exponents
        if ex is None:
            ex = DEFAULT_EXPONENTS[kind]
        if not isinstance(ex, ExponentPair):
            ex = ExponentPair(ex[0], ex[1], kind)
        if ex.kind is not kind:
            raise ValidationError(f"exponents were classified for {ex.kind.value}, not {kind.value}")
        verdict = ex.verdict
        if not verdict.admissible:
            raise ValidationError(f"inadmissible exponents for {kind.value}: "
                                  f"{verdict.rejection_reason}")
        object.__setattr__(self, "exponents", ex)
        eps = EPSILON_BY_KIND[kind] if self.epsilon is None else float(self.epsilon)
        if not eps > 0:
            raise ValidationError("epsilon must be positive")
        object.__setattr__(self, "epsilon", eps)
        if not 0 < self.theta < 0.25:
            raise ValidationError(f"theta must lie in (0, 1/4), got {self.theta}")
        if self.tail_rungs < 1:
            raise ValidationError("tail_rungs must be positive")
        if self.use_curl_vorticity and (kind is not Kind.vorticity_gradient or ex.p <= 1):
            raise ValidationError("curl w replaces grad w only for vorticity_gradient with p# > 1")

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value, "p": fmt_exponent(self.exponents.p),
            "q": fmt_exponent(self.exponents.q), "epsilon": self.epsilon, "theta": self.theta,
            "ladder": self.ladder.as_dict(), "use_centered_velocity": self.use_centered_velocity,
            "use_curl_vorticity": self.use_curl_vorticity, "flat_slope": self.flat_slope,
            "tail_rungs": self.tail_rungs,
        }


@dataclass
class CriterionVerdict:
    status: str
    evidence: list  # [(r, value)] from the largest radius down
    trend_slope: float
    threshold_used: float
    kind: str
    center: tuple
    tail_max: float
    tail_slope: float
    witness_radius: Optional[float] = None
    warnings: list = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.evidence])

    @property
    def radii(self) -> np.ndarray:
        return np.array([r for r, _ in self.evidence])

    def as_dict(self) -> dict:
        return {
            "kind": self.kind, "status": self.status, "center": list(self.center),
            "evidence": [{"r": r, "value": v} for r, v in self.evidence],
            "trend_slope": _json_float(self.trend_slope), "tail_max": self.tail_max,
            "tail_slope": _json_float(self.tail_slope), "threshold_used": self.threshold_used,
            "witness_radius": self.witness_radius, "warnings": list(self.warnings),
        }


def _json_float(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _classify(radii, values, eps, tail_rungs, flat_slope):
    tail_v = values[-tail_rungs:]
    tail_r = radii[-tail_rungs:]
    tail_max = float(max(tail_v))
    tail_slope = loglog_slope(tail_r, tail_v) if len(tail_v) >= 2 else math.nan
    if tail_max < eps:
        status = "regular"
    elif (len(values) >= 3 and len(tail_v) >= 3 and min(tail_v) >= eps
          and tail_slope <= flat_slope):
        # a smooth field decays like a positive power of r; a flat tail does not
        status = "flagged"
    else:
        status = "inconclusive"
    return status, tail_max, tail_slope


def _split_z(z):
    if len(z) == 2:
        x, t = z
    elif len(z) == 4:
        x, t = z[:3], z[3]
    else:
        raise ValidationError("z must be (x, t) or (x1, x2, x3, t)")
    x = tuple(float(c) for c in x)
    if len(x) != 3:
        raise ValidationError("spatial center must have three coordinates")
    return x, float(t)


def _radii_or_raise(ladder: LadderSpec, grid, t):
    radii, warnings = ladder.feasible(grid, t)
    if not radii:
        raise LadderInfeasible("no feasible ladder rung: " + "; ".join(warnings))
    return radii, warnings


# ---------------------------------------------------------------------------
# the four criteria and the one-radius test
# ---------------------------------------------------------------------------


def evaluate_criterion(stack: FieldStack, z, config: CriterionConfig) -> CriterionVerdict:
    x, t = _split_z(z)
    radii, warnings = _radii_or_raise(config.ladder, stack.grid, t)
    ex = config.exponents

    def rung(r):
        return criterion_quantity(config.kind, stack, ParabolicCylinder(x, t, r), ex.p, ex.q,
                                  centered=config.use_centered_velocity,
                                  curl_vorticity=config.use_curl_vorticity)

    values = pool_map(rung, radii)
    _finite_or_raise(values, "criterion evidence")
    status, tail_max, tail_slope = _classify(radii, values, config.epsilon, config.tail_rungs,
                                             config.flat_slope)
    return CriterionVerdict(status, list(zip(radii, values)), loglog_slope(radii, values),
                            config.epsilon, config.kind.value, (x, t), tail_max, tail_slope,
                            None, warnings)


def _c_plus_d(stack, x, t, radii):
    if stack.p is None:
        raise MissingFieldError("the C + D test needs the pressure")

    def one(r):
        Q = ParabolicCylinder(x, t, r)
        return functional("C", stack, Q), functional("D", stack, Q)

    pairs = pool_map(one, radii)
    cs = [c for c, _ in pairs]
    ds = [d for _, d in pairs]
    _finite_or_raise(cs + ds, "C or D value")
    return cs, ds


def ckn_check(stack: FieldStack, z, ladder: LadderSpec,
              epsilon: float = DEFAULT_EPSILON) -> CriterionVerdict:
    """Regular as soon as one rung has ``C(r) + D(r) < epsilon``; never flags."""
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    if stack.p is None:
        raise MissingFieldError("the C + D test needs the pressure")
    x, t = _split_z(z)
    radii, warnings = _radii_or_raise(ladder, stack.grid, t)
    cs, ds = _c_plus_d(stack, x, t, radii)
    values = [c + d for c, d in zip(cs, ds)]
    witness = next((r for r, v in zip(radii, values) if v < epsilon), None)
    status = "regular" if witness is not None else "inconclusive"
    tail = values[-3:]
    tail_slope = loglog_slope(radii[-3:], tail) if len(tail) >= 2 else math.nan
    return CriterionVerdict(status, list(zip(radii, values)), loglog_slope(radii, values),
                            float(epsilon), "ckn", (x, t), float(max(tail)), tail_slope,
                            witness, warnings)


@dataclass
class ContractionTrace:
    theta: float
    epsilon: float
    steps: list  # [(k, r, C, D)]
    first_below: Optional[int]
    warnings: list = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([c + d for _, _, c, d in self.steps])

    def as_dict(self) -> dict:
        return {
            "theta": self.theta, "epsilon": self.epsilon, "first_below": self.first_below,
            "steps": [{"k": k, "r": r, "C": c, "D": d, "C+D": c + d}
                      for k, r, c, d in self.steps],
            "warnings": list(self.warnings),
        }


def contraction_trace(stack: FieldStack, z, r0: float, theta: float, k_max: int,
                      epsilon: float = DEFAULT_EPSILON) -> ContractionTrace:
    """``C + D`` at ``theta^k r0``; records the first ``k`` below ``epsilon`` without assuming decay."""
    if not 0 < theta < 0.25:
        raise ValidationError(f"theta must lie in (0, 1/4), got {theta}")
    x, t = _split_z(z)
    ladder = LadderSpec(r0=r0, ratio=theta, k_max=k_max)
    kept, warnings = ladder.feasible(stack.grid, t)
    ks = [k for k, r in enumerate(ladder.candidates()) if r in kept]
    if not ks:
        raise LadderInfeasible("no feasible rung: " + "; ".join(warnings))
    cs, ds = _c_plus_d(stack, x, t, kept)
    steps = [(k, r, c, d) for k, r, c, d in zip(ks, kept, cs, ds)]
    first = next((k for k, _, c, d in steps if c + d < epsilon), None)
    return ContractionTrace(theta, float(epsilon), steps, first, warnings)


# ---------------------------------------------------------------------------
# lemma audits
# ---------------------------------------------------------------------------


@dataclass
class LemmaReport:
    lemma_id: str
    lhs: float
    rhs_terms: dict
    fitted_constant: float
    context: dict
    trivially_satisfied: bool = False

    def as_dict(self) -> dict:
        return {
            "lemma_id": self.lemma_id, "lhs": self.lhs, "rhs_terms": dict(self.rhs_terms),
            "fitted_constant": _json_float(self.fitted_constant)
            if math.isfinite(self.fitted_constant) else "inf",
            "trivially_satisfied": self.trivially_satisfied, "context": self.context,
        }


class LemmaAudit(list):
    """The applicable :class:`LemmaReport` objects; ``skipped`` maps the rest to a reason."""

    def __init__(self, reports=(), skipped=None, notes=()):
        super().__init__(reports)
        self.skipped = dict(skipped or {})
        self.notes = list(notes)

    def by_id(self) -> dict:
        return {rep.lemma_id: rep for rep in self}

    def as_dict(self) -> dict:
        return {"reports": [r.as_dict() for r in self], "skipped": dict(self.skipped),
                "notes": list(self.notes)}


def audit_exponents(exponents):
    """Borderline ``3/p + 2/q = 3`` exponents from a ``q`` or a ``(p, q)`` pair.

    A pair off the borderline keeps its ``q``; the returned note says so.
    """
    if isinstance(exponents, FunctionalExponents):
        return exponents, None
    if isinstance(exponents, (tuple, list)):
        p, q = exponents
        fe = FunctionalExponents.from_q(q)
        if as_exponent(p) != fe.p:
            return fe, (f"(p, q) = ({fmt_exponent(as_exponent(p))}, {fmt_exponent(fe.q)}) is off "
                        f"3/p + 2/q = 3; audited at p = {fmt_exponent(fe.p)}")
        return fe, None
    return FunctionalExponents.from_q(exponents), None


def _fit(lemma_id, lhs, rhs, context) -> LemmaReport:
    total = sum(rhs.values())
    if lhs == 0:
        return LemmaReport(lemma_id, 0.0, rhs, 0.0, context, True)
    fitted = lhs / total if total > 0 else math.inf
    return LemmaReport(lemma_id, float(lhs), rhs, float(fitted), context, False)


def _g_term(stack, x, t, r, rho, fe, which):
    """Remainder ``g(u; r)`` from the harmonic part of a split on ``B(rho)``."""
    g = stack.grid
    nodes = bracket_nodes(g, t - r * r, t)
    times = [float(g.times[k]) for k in nodes]
    if which == "biot_savart":
        dec = biot_savart_local(stack, x, t, rho, with_gradient=True, times=times)
    else:
        dec = curl_tensor_split(stack, x, t, rho, times=times)
    return float(harmonic_mean_trace(dec, [r], fe.p, fe.q).values[0])


def lemma_audit(stack: FieldStack, z, r: float, rho: float, exponents, gamma: float = 1.0,
                subsamples: int = DEFAULT_SUBSAMPLES,
                morrey: Optional[MorreyParams] = None) -> LemmaAudit:
    """Fit the smallest constant in each applicable lemma on the cylinders ``Q_r`` and ``Q_rho``.

    Every right-hand term is reported without its constant, so
    ``fitted_constant = lhs / sum(rhs_terms)``.
    """
    if not (0 < 2 * r <= rho * (1 + 1e-12)):
        raise ValidationError(f"lemma hypothesis 0 < 2r <= rho violated (r = {r}, rho = {rho})")
    x, t = _split_z(z)
    grid = stack.grid
    check_cylinder(grid, ParabolicCylinder(x, t, rho))
    check_cylinder(grid, ParabolicCylinder(x, t, r))
    fe, note = audit_exponents(exponents)
    p, q = fe.p, fe.q
    pf, qf = exponent_float(p), exponent_float(q)
    has_p = stack.p is not None
    has_star = fe.p_star is not None
    has_sharp = fe.p_sharp is not None and qf <= 2
    r2 = 2 * r

    jobs = [("A", r), ("E", r), ("C", r), ("Ctilde", r), ("G1", r), ("W", r), ("W", r2),
            ("C", r2), ("C", rho), ("Ctilde", rho), ("G1", rho), ("W", rho)]
    if has_p:
        jobs += [("D", r), ("D", r2), ("D", rho)]
    if has_star:
        jobs.append(("Gtilde", r))
    if has_sharp:
        jobs += [("W1", rho), ("Wtilde1", rho)]

    def run(job):
        name, rad = job
        Q = ParabolicCylinder(x, t, rad)
        if name == "u_norm":
            return mixed_norm(stack.u, Q, p, q, grid, subsamples)
        return functional(name, stack, Q, fe, subsamples)

    jobs.append(("u_norm", r2))
    vals = dict(zip(jobs, pool_map(run, jobs)))
    _finite_or_raise(list(vals.values()), "functional")
    F = lambda name, rad: vals[(name, rad)]  # noqa: E731

    m_gamma = 0.0
    if stack.f is not None:
        m_gamma = morrey_norm(stack.f, morrey or MorreyParams(gamma), grid)
    context = {"z": list(x) + [t], "r": r, "rho": rho, "exponents": fe.as_dict(),
               "gamma": gamma, "m_gamma": m_gamma}
    reports, skipped = [], {}
    a_over_r, r_over_a = rho / r, r / rho

    # lei2
    if not has_p:
        skipped["lei2"] = "pressure not supplied"
    elif m_gamma > 0 and r > m_gamma ** (-1.0 / (1.0 + gamma)):
        skipped["lei2"] = (f"radius restriction r <= m_gamma^(-1/(1+gamma)) = "
                           f"{m_gamma ** (-1.0 / (1.0 + gamma)):.4g} violated")
    else:
        rhs = {"1": 1.0, "C(2r)": F("C", r2), "D(2r)": F("D", r2)}
        if m_gamma > 0:
            rhs["r^(2(gamma+1)) m_gamma^2"] = r ** (2 * (gamma + 1)) * m_gamma ** 2
        ctx = dict(context, radius_limit=(m_gamma ** (-1.0 / (1.0 + gamma))
                                          if m_gamma > 0 else None))
        reports.append(_fit("lei2", F("A", r) + F("E", r), rhs, ctx))

    a_pow = 0.0 if math.isinf(qf) else 1.0 / qf
    ae = F("A", r) ** a_pow * F("E", r) ** (1.0 - a_pow)
    if has_star:
        reports.append(_fit("basiclemma", F("Ctilde", r),
                            {"A^(1/q) E^(1-1/q) Gtilde(r)": ae * F("Gtilde", r)}, context))
    else:
        skipped["basiclemma"] = f"p* undefined for p = {fmt_exponent(p)}"

    reports.append(_fit("L3-1", F("C", r), {
        "(r/rho) C(rho)": r_over_a * F("C", rho),
        "(rho/r)^2 Ctilde(rho)": a_over_r ** 2 * F("Ctilde", rho)}, context))

    if has_p:
        rhs = {"(rho/r)^2 Ctilde(rho)": a_over_r ** 2 * F("Ctilde", rho),
               "(r/rho) D(rho)": r_over_a * F("D", rho)}
        if m_gamma > 0:
            rhs["(rho/r)^2 rho^(3(gamma+1)/2) m_gamma^(3/2)"] = (
                a_over_r ** 2 * rho ** (1.5 * (gamma + 1)) * m_gamma ** 1.5)
        reports.append(_fit("preest", F("D", r), rhs, context))
    else:
        skipped["preest"] = "pressure not supplied"

    if 1 <= pf <= 3:
        reports.append(_fit("lemma3-6", F("Ctilde", r),
                            {"A^(1/q) E^(1-1/q) G1(r)": ae * F("G1", r)}, context))
    else:
        skipped["lemma3-6"] = "needs 1 <= p <= 3"

    decay = r_over_a ** (3.0 / pf - 1.0)
    if not math.isinf(qf):
        reports.append(_fit("TH3-4a", F("G1", r), {
            "(rho/r) W(rho)": a_over_r * F("W", rho),
            "(r/rho)^(3/p-1) G1(rho)": decay * F("G1", rho)}, context))
    else:
        skipped["TH3-4a"] = "needs q < inf"

    if p == 3 and q == 1:
        g = _g_term(stack, x, t, r, rho, fe, "biot_savart")
        reports.append(_fit("TH3-4b", F("G1", r), {
            "(rho/r) W(rho)": a_over_r * F("W", rho),
            "(r/rho) G1(rho)": r_over_a * F("G1", rho), "g(u;r)": g}, context))
    else:
        skipped["TH3-4b"] = "only for p = 3, q = 1"

    # the remark needs r < rho' <= 2r, so its outer radius is 2r whatever rho is
    reports.append(_fit("RK3.7", F("G1", r), {
        "(rho'/r) W(rho')": 2.0 * F("W", r2),
        "||u||_{L^{p,q}(Q_rho')} / (r rho')": F("u_norm", r2) / (r * r2)},
        dict(context, rho_remark=r2)))

    if has_sharp:
        reports.append(_fit("lemma3-7a", F("W", r), {
            "(rho/r) W1(rho)": a_over_r * F("W1", rho),
            "(r/rho)^(3/p-1) W(rho)": decay * F("W", rho)}, context))
    else:
        skipped["lemma3-7a"] = "needs q <= 2 and a defined p#"
    if has_sharp and qf < 2:
        g = _g_term(stack, x, t, r, rho, fe, "curl_tensor")
        reports.append(_fit("lemma3-7b", F("G1", r), {
            "(rho/r) Wtilde1(rho)": a_over_r * F("Wtilde1", rho),
            "(r/rho)^(3/p) G1(rho)": r_over_a ** (3.0 / pf) * F("G1", rho), "g(u;r)": g},
            context))
    else:
        skipped["lemma3-7b"] = "needs q < 2 and a defined p#"

    order = {lid: i for i, lid in enumerate(LEMMA_IDS)}
    reports.sort(key=lambda rep: order[rep.lemma_id])
    return LemmaAudit(reports, skipped, [note] if note else [])


def ensemble_constants(audits: Sequence[LemmaAudit]) -> dict:
    """Largest fitted constant per lemma over an ensemble of audits."""
    out = {}
    for audit in audits:
        for rep in audit:
            out[rep.lemma_id] = max(out.get(rep.lemma_id, 0.0), rep.fitted_constant)
    return out


# ---------------------------------------------------------------------------
# parabolic box counting
# ---------------------------------------------------------------------------


@dataclass
class SingularSetEstimate:
    points: list
    scales: list  # spatial box sides, largest first
    counts: list
    dimension: float
    hausdorff_proxy: float

    def as_dict(self) -> dict:
        return {"points": [list(p) for p in self.points], "scales": list(self.scales),
                "counts": list(self.counts), "dimension": self.dimension,
                "hausdorff_proxy": self.hausdorff_proxy}


def _check_nested(scales):
    for big, small in zip(scales, scales[1:]):
        ratio = big / small
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 2:
            raise ValidationError(
                "box sides must shrink by integer factors so the boxes nest "
                f"(got {big:.6g} -> {small:.6g})")


def singular_set_dimension(points, scales, grid=None) -> SingularSetEstimate:
    """Box-counting dimension of ``(x1, x2, x3, t)`` points in the parabolic metric.

    A box of side ``d`` spans ``d`` in each space direction and ``d**2`` in
    time, the unit ball of ``max(|dx|, |dt|^(1/2))``. Boxes are anchored at a
    common origin and the sides must nest, so counts never grow with ``d``.
    ``hausdorff_proxy`` is ``count * d`` at the finest side, an indicator of
    one-dimensional parabolic content and not a measure.
    """
    scales = sorted((float(s) for s in scales), reverse=True)
    if not scales:
        raise ValidationError("empty scale list")
    if len(scales) < 2:
        raise ValidationError("need at least two scales to fit a dimension")
    if any(s <= 0 for s in scales):
        raise ValidationError("scales must be positive")
    _check_nested(scales)
    pts = np.asarray(points, dtype=float).reshape(-1, 4) if len(points) else np.zeros((0, 4))
    if grid is not None and len(pts):
        L = grid.domain_length
        tol = 1e-9 * max(L, 1.0)
        inside = (np.all((pts[:, :3] >= -tol) & (pts[:, :3] <= L + tol), axis=1)
                  & (pts[:, 3] >= grid.t0 - tol) & (pts[:, 3] <= grid.t_end + tol))
        if not np.all(inside):
            raise ValidationError("points must lie inside the grid extent")
    counts = []
    for d in scales:
        if not len(pts):
            counts.append(0)
            continue
        cells = np.floor(np.column_stack([pts[:, :3] / d, pts[:, 3] / d ** 2]) + 1e-9)
        counts.append(int(len(np.unique(cells.astype(np.int64), axis=0))))
    if counts[-1] == 0:
        dim = 0.0
    else:
        dim = float(np.polyfit(np.log(1.0 / np.array(scales)), np.log(counts), 1)[0])
        dim = min(max(dim, 0.0), 5.0)
    proxy = float(counts[-1] * scales[-1])
    return SingularSetEstimate([tuple(p) for p in pts.tolist()], scales, counts, dim, proxy)


__all__ = [
    "DEFAULT_EPSILON", "EPSILON_BY_KIND", "DEFAULT_EXPONENTS", "STATUSES", "LEMMA_IDS",
    "LadderInfeasible", "LadderSpec", "CriterionConfig", "CriterionVerdict", "evaluate_criterion",
    "ckn_check", "ContractionTrace", "contraction_trace", "LemmaReport", "LemmaAudit",
    "audit_exponents", "lemma_audit", "ensemble_constants", "SingularSetEstimate",
    "singular_set_dimension",
]
