"""Command-line front end."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import measures, rmt_oracle, spectrum
from .measures import MeasureError
from .rmt_oracle import EigensolverFailure, RangeMismatch
from .spectrum import CaseMismatch, ClassificationConflict, FitAmbiguous, SpectrumError
from .subordination import SolverError
from .transforms import TransformError, hat_measure

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_CONFLICT = 4

VALUE_OPTIONS = {"--grid", "--t", "--atom", "--measure", "--a", "--b", "--out", "--report", "--threads"}


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    points: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise UsageError(f"grid needs lo < hi, got {self.lo} and {self.hi}")
        if self.points < 2:
            raise UsageError("grid needs at least 2 points")

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid must look like LO:HI:N, got {text!r}")
        try:
            return cls(float(parts[0]), float(parts[1]), int(parts[2]))
        except ValueError as exc:
            raise UsageError(f"bad grid {text!r}: {exc}") from exc

    def abscissae(self) -> np.ndarray:
        i = np.arange(self.points)
        return self.lo + i * (self.hi - self.lo) / (self.points - 1)


def _diag(kind: str, message: str, **extra):
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")


def _emit(obj, path: str | None = None):
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _write_text(text: str, path: str | None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _sidecar(path: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".atoms.json")


def load_measure(arg: str) -> measures.MeasureSpec:
    """A JSON file path, or an inline JSON object."""
    try:
        raw = json.loads(arg) if arg.lstrip().startswith("{") else json.loads(Path(arg).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"no such measure file: {arg}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"measure is not valid JSON: {exc}") from exc
    try:
        return measures.validate(raw)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"malformed measure description: {exc!r}") from exc


def resolve_threads(flag: int | None) -> int:
    env = os.environ.get("FREECONV_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise UsageError(f"FREECONV_THREADS must be an integer, got {env!r}") from exc
    else:
        n = flag if flag is not None else (os.cpu_count() or 1)
    if n < 1:
        raise UsageError("thread count must be positive")
    return n


def _t_value(t: float) -> float:
    if not t > 1:
        raise UsageError(f"t must exceed 1, got {t}")
    return t


# --- subcommands ----------------------------------------------------------------------


def cmd_validate(args) -> int:
    _emit(load_measure(args.spec).to_dict())
    return EXIT_OK


def cmd_density(args) -> int:
    spec = load_measure(args.measure)
    t = _t_value(args.t)
    grid = spectrum.semigroup_density_grid(hat_measure(spec), spec, t, GridSpec.parse(args.grid).abscissae(),
                                           args.threads)
    _write_text(grid.to_csv(), args.out)
    if args.out:
        _sidecar(args.out).write_text(grid.atoms_json() + "\n")
    return EXIT_OK


def cmd_support(args) -> int:
    spec = load_measure(args.measure)
    _emit(spectrum.support_semigroup(hat_measure(spec), spec, _t_value(args.t)).to_dict())
    return EXIT_OK


def cmd_atoms(args) -> int:
    spec = load_measure(args.measure)
    t = _t_value(args.t)
    _emit([{"location": x, "mass": m} for x, m in spectrum.semigroup_atoms(spec, t)])
    return EXIT_OK


def _classify_all(edges, classify):
    out, code = [], EXIT_OK
    for e in edges:
        try:
            out.append(classify(e).to_dict())
        except (FitAmbiguous, ClassificationConflict, CaseMismatch) as exc:
            _diag(type(exc).__name__, str(exc), location_z=e)
            out.append({"location_z": e, "error": type(exc).__name__, "message": str(exc)})
            code = EXIT_CONFLICT
    return out, code


def cmd_edges(args) -> int:
    spec = load_measure(args.measure)
    t = _t_value(args.t)
    hat = hat_measure(spec)
    report = spectrum.support_semigroup(hat, spec, t)
    edges = report.edges + list(report.atom_critical)
    if not args.classify:
        ws = [w for c in report.components_omega for w in c]
        out = [{"location_z": e, "omega_image": w} for e, w in zip(report.edges, ws)]
        out += [{"location_z": e, "kind": "AtomCritical"} for e in report.atom_critical]
        _emit(out)
        return EXIT_OK
    out, code = _classify_all(edges, lambda e: spectrum.classify_semigroup_edge(hat, spec, t, e, report))
    _emit(out)
    return code


def cmd_critical(args) -> int:
    spec = load_measure(args.measure)
    _emit([cp.to_dict() for cp in spectrum.critical_times(hat_measure(spec), spec)])
    return EXIT_OK


def cmd_atom_profile(args) -> int:
    spec = load_measure(args.measure)
    t = _t_value(args.t)
    try:
        profile, report = spectrum.atom_profile(hat_measure(spec), spec, t, args.atom)
    except CaseMismatch as exc:
        if exc.profile is not None:
            _write_text(exc.profile.to_csv(), args.out)
        raise
    _write_text(profile.to_csv(), args.out)
    case = {"profile": profile.to_dict() | {"offsets": None, "rho_left": None, "rho_right": None},
            "edge": report.to_dict()}
    if args.out or args.report:
        _emit(case, args.report)
    return EXIT_OK


def cmd_convolve(args) -> int:
    if args.edges and not (args.out or args.report):
        raise UsageError("--edges needs --out or --report so CSV and JSON do not share stdout")
    a, b = load_measure(args.a), load_measure(args.b)
    threads = args.threads
    report = None
    if args.grid:
        Es = GridSpec.parse(args.grid).abscissae()
    else:
        report = spectrum.support_pair(a, b, threads)
        lo = min([c[0] for c in report.components_z] + [x for x, _ in report.atoms] or [-1.0])
        hi = max([c[1] for c in report.components_z] + [x for x, _ in report.atoms] or [1.0])
        pad = 0.05 * (hi - lo) + 1e-3
        Es = GridSpec(lo - pad, hi + pad, 1001).abscissae()
    grid = spectrum.pair_density_grid(a, b, Es, threads)
    _write_text(grid.to_csv(), args.out)
    if args.out:
        _sidecar(args.out).write_text(grid.atoms_json() + "\n")
    code = EXIT_OK
    if args.edges:
        report = report or spectrum.support_pair(a, b, threads)
        out, code = _classify_all(report.edges, lambda e: spectrum.classify_pair_edge(a, b, e, report))
        _emit({"support": report.to_dict(), "edges": out}, args.report)
    return code


def cmd_validate_rmt(args) -> int:
    if args.measure:
        if args.a or args.b:
            raise UsageError("give either --measure/--t or --a/--b")
        if args.t is None or float(args.t) != int(args.t) or args.t < 2:
            raise UsageError("validate-rmt needs an integer --t >= 2")
        res = rmt_oracle.validate_semigroup(load_measure(args.measure), int(args.t), args.n, args.trials,
                                            args.seed, args.threads, threshold=args.threshold)
    elif args.a and args.b:
        res = rmt_oracle.validate_pair(load_measure(args.a), load_measure(args.b), args.n, args.trials,
                                       args.seed, args.threads, threshold=args.threshold)
    else:
        raise UsageError("validate-rmt needs --measure and --t, or --a and --b")
    _emit(res.to_dict())
    return EXIT_OK if res.passed else EXIT_FAILED


# --- parser ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="freeconv", description="Free additive convolution toolkit.")
    p.add_argument("--threads", type=int, default=None, help="worker threads (FREECONV_THREADS overrides)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="normalize and print a measure spec")
    s.add_argument("spec")
    s.set_defaults(func=cmd_validate)

    def semigroup(name, func, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("--measure", required=True)
        s.add_argument("--t", type=float, required=True)
        s.set_defaults(func=func)
        return s

    s = semigroup("density", cmd_density, "density of mu^t on a grid (CSV)")
    s.add_argument("--grid", required=True, help="LO:HI:N")
    s.add_argument("--out")
    semigroup("support", cmd_support, "support report (JSON)")
    semigroup("atoms", cmd_atoms, "atoms of mu^t (JSON)")
    s = semigroup("edges", cmd_edges, "edges of mu^t (JSON)")
    s.add_argument("--classify", action="store_true")
    s = semigroup("atom-profile", cmd_atom_profile, "density profile next to an atom")
    s.add_argument("--atom", type=float, required=True)
    s.add_argument("--out")
    s.add_argument("--report")

    s = sub.add_parser("critical", help="critical times of gap closing (JSON)")
    s.add_argument("--measure", required=True)
    s.set_defaults(func=cmd_critical)

    s = sub.add_parser("convolve", help="pair convolution density (CSV) and edges")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--grid")
    s.add_argument("--edges", action="store_true")
    s.add_argument("--out")
    s.add_argument("--report")
    s.set_defaults(func=cmd_convolve)

    s = sub.add_parser("validate-rmt", help="random-matrix cross-check")
    s.add_argument("--measure")
    s.add_argument("--t", type=float)
    s.add_argument("--a")
    s.add_argument("--b")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--trials", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold", type=float, default=rmt_oracle.KS_THRESHOLD)
    s.set_defaults(func=cmd_validate_rmt)
    return p


def _join_negative_values(argv: list[str]) -> list[str]:
    """Turn `--grid -3:3:5` into `--grid=-3:3:5` so argparse does not read it as a flag."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in VALUE_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-") and len(argv[i + 1]) > 1 \
                and (argv[i + 1][1].isdigit() or argv[i + 1][1] == "."):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_join_negative_values(argv))
        args.threads = resolve_threads(args.threads)
        return args.func(args)
    except (UsageError, MeasureError, RangeMismatch) as exc:
        _diag(type(exc).__name__, str(exc))
        return EXIT_INPUT
    except (ClassificationConflict, CaseMismatch, FitAmbiguous) as exc:
        _diag(type(exc).__name__, str(exc))
        return EXIT_CONFLICT
    except (SolverError, TransformError, SpectrumError, EigensolverFailure, ArithmeticError) as exc:
        _diag(type(exc).__name__, str(exc))
        return EXIT_SOLVER
    except ValueError as exc:
        _diag(type(exc).__name__, str(exc))
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())
