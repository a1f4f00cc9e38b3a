"""``nsrlab`` command line: generate, diagnose, audit, scale-check.

Exit codes: 0 success, 2 usage, 3 data integrity, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from . import container
from .config import RunConfig
from .criteria import (
    DEFAULT_EPSILON,
    DEFAULT_EXPONENTS,
    CriterionConfig,
    LadderInfeasible,
    LadderSpec,
    ckn_check,
    contraction_trace,
    evaluate_criterion,
    lemma_audit,
)
from .fieldlab import (
    ExponentPair,
    FunctionalExponents,
    Grid,
    Kind,
    ParabolicCylinder,
    ValidationError,
    as_exponent,
    fmt_exponent,
)
from .genflow import FAMILIES, FlowSpec, NumericalError, generate, rescale, scaled_center
from .normcore import functional

log = logging.getLogger("nsrlab")

REPORT_SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_INTEGRITY, EXIT_NUMERIC = 0, 2, 3, 4
SCALE_NAMES = ("A", "E", "C", "Ctilde", "D", "Gtilde", "G1", "W")


class UsageError(Exception):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return fmt_exponent(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else ("-inf" if x < 0 else "nan"))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(report: dict, args) -> None:
    report = dict(report)
    report["schema_version"] = REPORT_SCHEMA_VERSION
    report["nsrlab_version"] = __version__
    report["format_version"] = container.VERSION
    if not args.no_timestamp:
        report["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _center(stack, z):
    g = stack.grid
    if z is None:
        return (g.domain_length / 2,) * 3, g.t_end
    return tuple(z[:3]), z[3]


def _pair(text: str):
    try:
        p, q = text.split(",")
        return as_exponent(p.strip()), as_exponent(q.strip())
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"exponent pair must look like 'p,q', got {text!r}") from None


def _keyval(items, conv, what):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"{what} must look like kind=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            kind = Kind(k.strip())
        except ValueError:
            raise UsageError(f"unknown criterion kind {k!r}") from None
        out[kind] = conv(v)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    spec = FlowSpec(args.family, A=args.A, B=args.B, C=args.C, nu=args.nu,
                    amplitude=args.amplitude, mode=args.mode, seed=args.seed, k_max=args.k_max,
                    r_moll=args.r_moll, center=tuple(args.center) if args.center else None,
                    force=args.force)
    grid = Grid.cube(args.n, args.nt, args.length, args.dt, args.t0)
    stack = generate(spec, grid)
    if not np.all(np.isfinite(stack.u)):
        raise NumericalError("generated velocity contains non-finite samples")
    crc = container.write(args.output, stack)
    print(f"wrote {args.output}: {grid.n}^3 x {grid.nt} nodes, L = {grid.domain_length:.6g}, "
          f"dt = {grid.dt:.6g}, t0 = {grid.t0:.6g}, fields = {','.join(stack.fields_present())}, "
          f"crc32 = {crc:08x}")
    return EXIT_OK


def _ladder(args, stack):
    r0 = args.r0
    if r0 is None:
        g = stack.grid
        r0 = min(g.domain_length / 4, math.sqrt(max(g.t_end - g.t0, 0.0)))
    return LadderSpec(r0=r0, ratio=args.ratio, k_max=args.k_max)


def cmd_diagnose(args) -> int:
    stack = container.read(args.container)
    x, t = _center(stack, args.z)
    ladder = _ladder(args, stack)
    kinds = [Kind(k) for k in (args.kinds or [k.value for k in Kind])]
    eps_over = _keyval(args.epsilon_override, float, "--epsilon-override")
    exps = _keyval(args.exponents, _pair, "--exponents")
    rc = RunConfig("diagnose", container=args.container, output=args.out,
                   center=list(x) + [t], kinds=[k.value for k in kinds],
                   exponents={k.value: [fmt_exponent(v[0]), fmt_exponent(v[1])]
                              for k, v in exps.items()},
                   epsilon=args.epsilon,
                   epsilon_overrides={k.value: v for k, v in eps_over.items()},
                   theta=args.theta, ladder=ladder.as_dict())
    warnings, verdicts = [], {}
    for kind in kinds:
        pq = exps.get(kind, DEFAULT_EXPONENTS[kind])
        cfg = CriterionConfig(kind, ladder, ExponentPair(pq[0], pq[1], kind),
                              epsilon=eps_over.get(kind, args.epsilon), theta=args.theta)
        try:
            v = evaluate_criterion(stack, (x, t), cfg)
        except LadderInfeasible as exc:
            warnings.append(f"{kind.value}: {exc}")
            continue
        verdicts[kind.value] = dict(v.as_dict(), config=cfg.as_dict())
        warnings += [f"{kind.value}: {w}" for w in v.warnings]
    report = {"command": "diagnose", "config": rc.as_dict(), "verdicts": verdicts,
              "container_crc32": f"{container.checksum(args.container):08x}",
              "meta": stack.meta}
    if stack.p is not None:
        try:
            report["ckn"] = ckn_check(stack, (x, t), ladder, args.epsilon).as_dict()
            report["contraction_trace"] = contraction_trace(
                stack, (x, t), ladder.candidates()[0], args.theta, args.k_max,
                args.epsilon).as_dict()
        except LadderInfeasible as exc:
            warnings.append(f"ckn: {exc}")
    else:
        warnings.append("ckn: pressure absent, C + D test skipped")
    report["warnings"] = warnings
    _emit(report, args)
    return EXIT_OK


def cmd_audit(args) -> int:
    stack = container.read(args.container)
    x, t = _center(stack, args.z)
    if not (0 < 2 * args.r <= args.rho):
        raise UsageError(f"lemma hypothesis 0 < 2r <= rho violated (r = {args.r}, "
                         f"rho = {args.rho})")
    exps = as_exponent(args.q) if args.p is None else (as_exponent(args.p), as_exponent(args.q))
    audit = lemma_audit(stack, (x, t), args.r, args.rho, exps, gamma=args.gamma)
    rc = RunConfig("audit", container=args.container, output=args.out, center=list(x) + [t],
                   r=args.r, rho=args.rho, q=args.q, gamma=args.gamma)
    _emit({"command": "audit", "config": rc.as_dict(), **audit.as_dict(),
           "container_crc32": f"{container.checksum(args.container):08x}"}, args)
    return EXIT_OK


def cmd_scale_check(args) -> int:
    stack = container.read(args.container)
    lam = args.lam
    try:
        scaled = rescale(stack, lam, velocity_exponent=args.velocity_exponent)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    x, t = _center(stack, args.z)
    xs, ts = scaled_center(x, t, lam)
    fe = FunctionalExponents.from_q(as_exponent(args.q))
    radii = args.radii or [args.r0 * args.ratio ** k for k in range(args.k_max + 1)]
    rows = []
    for r in radii:
        row = {"r": r, "lambda_r": lam * r, "functionals": {}}
        for name in SCALE_NAMES:
            if name == "D" and stack.p is None:
                continue
            if name == "Gtilde" and fe.p_star is None:
                continue
            a = functional(name, scaled, ParabolicCylinder(xs, ts, r), fe)
            b = functional(name, stack, ParabolicCylinder(x, t, lam * r), fe)
            row["functionals"][name] = {"scaled": a, "original": b,
                                        "mismatch": abs(a - b) / max(abs(b), 1e-9)}
        rows.append(row)
    worst = max((v["mismatch"] for row in rows for v in row["functionals"].values()), default=0.0)
    rc = RunConfig("scale-check", container=args.container, output=args.out,
                   center=list(x) + [t], lam=lam, q=args.q,
                   ladder={"r0": args.r0, "ratio": args.ratio, "k_max": args.k_max,
                           "radii": args.radii})
    report = {"command": "scale-check", "config": rc.as_dict(), "rungs": rows,
              "max_mismatch": worst, "exponents": fe.as_dict(),
              "container_crc32": f"{container.checksum(args.container):08x}"}
    if args.velocity_exponent != 1.0:
        report["velocity_exponent"] = args.velocity_exponent
    _emit(report, args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _z(parser):
    parser.add_argument("--z", type=float, nargs=4, metavar=("X1", "X2", "X3", "T"),
                        help="evaluation point; default is the box centre at the last time")


def _report_opts(parser):
    parser.add_argument("--out", help="write the JSON report here instead of stdout")
    parser.add_argument("--no-timestamp", action="store_true",
                        help="omit the generation time so reports are byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsrlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"nsrlab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a test flow to a container")
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--n", type=int, default=32)
    g.add_argument("--nt", type=int, default=16)
    g.add_argument("--dt", type=float, default=0.1)
    g.add_argument("--t0", type=float, default=0.0)
    g.add_argument("--length", type=float, default=2 * math.pi)
    g.add_argument("--nu", type=float, default=0.1)
    g.add_argument("--A", type=float, default=1.0)
    g.add_argument("--B", type=float, default=1.0)
    g.add_argument("--C", type=float, default=1.0)
    g.add_argument("--amplitude", type=float, default=1.0)
    g.add_argument("--mode", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--k-max", type=int, default=3)
    g.add_argument("--r-moll", type=float)
    g.add_argument("--center", type=float, nargs=3)
    g.add_argument("--force", choices=("steady",))
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("diagnose", help="criterion verdicts and the C + D test at a point")
    d.add_argument("container")
    _z(d)
    d.add_argument("--kinds", nargs="+", choices=[k.value for k in Kind])
    d.add_argument("--exponents", nargs="+", metavar="KIND=P,Q")
    d.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    d.add_argument("--epsilon-override", nargs="+", metavar="KIND=EPS")
    d.add_argument("--theta", type=float, default=0.2)
    d.add_argument("--r0", type=float)
    d.add_argument("--ratio", type=float, default=0.7)
    d.add_argument("--k-max", type=int, default=4)
    _report_opts(d)
    d.set_defaults(func=cmd_diagnose)

    a = sub.add_parser("audit", help="fitted constants of the supporting lemmas")
    a.add_argument("container")
    _z(a)
    a.add_argument("--r", type=float, required=True)
    a.add_argument("--rho", type=float, required=True)
    a.add_argument("--q", default="4/3")
    a.add_argument("--p", help="optional; off-borderline pairs keep q")
    a.add_argument("--gamma", type=float, default=1.0)
    _report_opts(a)
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("scale-check", help="compare functionals before and after rescaling")
    s.add_argument("container")
    _z(s)
    s.add_argument("--lam", "--lambda", dest="lam", type=float, default=2)
    s.add_argument("--q", default="4/3")
    s.add_argument("--r0", type=float, default=0.8)
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--k-max", type=int, default=3)
    s.add_argument("--radii", type=float, nargs="+")
    s.add_argument("--velocity-exponent", type=float, default=1.0, help=argparse.SUPPRESS)
    _report_opts(s)
    s.set_defaults(func=cmd_scale_check)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except container.IntegrityError as exc:
        log.error("integrity: %s", exc)
        return EXIT_INTEGRITY
    except NumericalError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (UsageError, ValidationError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except OSError as exc:
        log.error("I/O: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
