"""`gk` command-line front end.

Exit codes: 0 success, 2 malformed input, 3 Delzant violation,
4 inadmissible datum, 5 non-convergence.
"""
from __future__ import annotations

import os

if "GK_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["GK_THREADS"])

import argparse
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .polytope import PolytopeError, average_gscal, grid_sample, load_polytope, validate_delzant

EXIT_OK, EXIT_MALFORMED, EXIT_DELZANT, EXIT_INADMISSIBLE, EXIT_NONCONVERGED = 0, 2, 3, 4, 5
COMMANDS = ("validate", "lext", "gscal", "stability", "mabuchi", "geodesic", "solve", "continue", "crosscheck")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunManifest:
    command: str
    polytope: str | None = None
    options: dict = field(default_factory=dict)
    out: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise CliError(EXIT_MALFORMED, f"unknown command {self.command!r}")


# --- serialization -----------------------------------------------------------

_FLOAT_TAG = "\x00f:"


def _tag_floats(obj):
    if isinstance(obj, dict):
        return {str(k): _tag_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tag_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _tag_floats(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else _FLOAT_TAG + format(v, ".17g")
    return obj


def dumps(obj) -> str:
    """Deterministic JSON with every float written at 17 significant digits."""
    text = json.dumps(_tag_floats(obj), indent=1, sort_keys=True, ensure_ascii=False)
    return re.sub(r'"\\u0000f:([^"]*)"', r"\1", text) + "\n"


def _emit(name: str, payload, out: str | None, extra: dict[str, str] | None = None):
    if out is None:
        sys.stdout.write(dumps(payload))
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{name}.json").write_text(dumps(payload))
    for fname, text in (extra or {}).items():
        (d / fname).write_text(text)


# --- argument parsing ---------------------------------------------------------

def _load_json_arg(text: str):
    p = Path(text)
    try:
        return json.loads(p.read_text()) if p.is_file() else json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_MALFORMED, f"malformed JSON: {exc}") from exc


def parse_matrix(text: str | None, n: int) -> np.ndarray:
    if text is None or text == "zero":
        return np.zeros((n, n))
    M = np.asarray(_load_json_arg(text), dtype=float)
    if M.shape != (n, n):
        raise CliError(EXIT_MALFORMED, f"expected a {n}x{n} matrix, got shape {M.shape}")
    if not np.array_equal(M, -M.T):
        raise CliError(EXIT_MALFORMED, "matrix is not antisymmetric")
    return M


def _read_polytope(args):
    from .polytope import DelzantPolytope
    spec = args.polytope or args.manifest_data.get("polytope")
    if spec is None:
        raise CliError(EXIT_MALFORMED, "no polytope given")
    try:
        return DelzantPolytope.from_json(spec) if isinstance(spec, dict) else load_polytope(spec)
    except (OSError, json.JSONDecodeError, PolytopeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_MALFORMED, f"cannot read polytope: {exc}") from exc


def _polytope(args):
    poly = _read_polytope(args)
    rep = validate_delzant(poly)
    if not rep.ok:
        raise CliError(EXIT_DELZANT, "Delzant violation: " + ", ".join(d.code for d in rep.failures))
    return poly


def _datum(args, n):
    from .potential import PoissonDatum
    return PoissonDatum(parse_matrix(args.A, n), parse_matrix(args.B, n))


def _potential(spec: str | None, poly):
    from .potential import SymplecticPotential, guillemin_potential
    if spec is None or spec == "guillemin":
        return guillemin_potential(poly)
    data = _load_json_arg(spec)
    try:
        return SymplecticPotential.from_json(data, poly)
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(EXIT_MALFORMED, f"bad potential file: {exc}") from exc


def _require_admissible(u, datum, level=4):
    from .polytope import interior_quadrature
    from .potential import admissibility_check
    rep = admissibility_check(u, datum, interior_quadrature(u.polytope, level))
    if not rep.admissible:
        raise CliError(EXIT_INADMISSIBLE, f"not admissible: margin {rep.margin:.6g}")
    return rep


def _solve_options(args):
    from .solver import SolveOptions
    o = dict(args.manifest_data.get("options", {}))
    if args.degree is not None:
        o["degree"] = args.degree
        o["degree_cap"] = max(args.degree, o.get("degree_cap", args.degree + 4))
    if args.tol is not None:
        o["residual_target"] = args.tol
    if getattr(args, "steps", None):
        o["continuation_steps"] = tuple(float(t) for t in args.steps.split(","))
    if "continuation_steps" in o:
        o["continuation_steps"] = tuple(o["continuation_steps"])
    try:
        return SolveOptions(**o)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_MALFORMED, f"bad solve options: {exc}") from exc


# --- commands ---------------------------------------------------------------

def cmd_validate(args):
    poly = _read_polytope(args)
    rep = validate_delzant(poly)
    _emit("validate", rep.to_json(), args.out)
    return EXIT_OK if rep.ok else EXIT_DELZANT


def cmd_lext(args):
    from .extremal import extremal_affine, lext_residuals
    poly = _polytope(args)
    ell = extremal_affine(poly)
    _emit("lext", {"l_ext": ell.to_json(), "average_gscal": str(average_gscal(poly)),
                   "residuals": lext_residuals(poly, ell), "polytope": poly.to_json()}, args.out)
    return EXIT_OK


def cmd_gscal(args):
    from .gk_operator import gscal_field
    poly = _polytope(args)
    datum = _datum(args, poly.dim)
    u = _potential(args.potential, poly)
    _require_admissible(u, datum)
    pts = grid_sample(poly, args.grid or 64)
    fld = gscal_field(u, datum, pts)
    _emit("gscal", fld.summary(), args.out, {"gscal.csv": fld.to_csv()})
    if args.out is None:
        sys.stdout.write(fld.to_csv())
    return EXIT_OK


def cmd_stability(args):
    from .extremal import ProbeFamily, stability_probe
    poly = _polytope(args)
    fam = ProbeFamily(max_entry=args.max_entry, offsets_per_direction=args.offsets)
    rep = stability_probe(poly, fam)
    _emit("stability", rep.to_json(), args.out)
    return EXIT_OK


def cmd_mabuchi(args):
    from .mabuchi import mabuchi_energy
    from .polytope import interior_quadrature
    from .potential import AdmissibilityError
    poly = _polytope(args)
    datum = _datum(args, poly.dim)
    u = _potential(args.potential, poly)
    try:
        E = mabuchi_energy(u, datum, None, interior_quadrature(poly, args.level))
    except AdmissibilityError as exc:
        raise CliError(EXIT_INADMISSIBLE, str(exc)) from exc
    _emit("mabuchi", E.to_json(), args.out)
    return EXIT_OK


def cmd_geodesic(args):
    from .mabuchi import convexity_scan, scan_to_csv
    from .polytope import interior_quadrature
    from .potential import AdmissibilityError
    poly = _polytope(args)
    datum = _datum(args, poly.dim)
    ua, ub = _potential(args.potential, poly), _potential(args.potential_b, poly)
    for u in (ua, ub):
        _require_admissible(u, datum)
    try:
        rows = convexity_scan(ua, ub, datum, args.samples, interior_quadrature(poly, args.level))
    except AdmissibilityError as exc:
        raise CliError(EXIT_INADMISSIBLE, str(exc)) from exc
    d2 = [r.d2M for r in rows if r.d2M is not None]
    payload = {"rows": [r.__dict__ for r in rows], "min_second_difference": min(d2)}
    _emit("geodesic", payload, args.out, {"scan.csv": scan_to_csv(rows)})
    return EXIT_OK


def cmd_solve(args):
    from .potential import AdmissibilityError
    from .solver import save_checkpoint, solve_extremal
    poly = _polytope(args)
    B = parse_matrix(args.B, poly.dim)
    opts = _solve_options(args)
    init = None if args.potential is None else _potential(args.potential, poly)
    try:
        rep = solve_extremal(poly, B, opts, initial=init)
    except AdmissibilityError as exc:
        raise CliError(EXIT_INADMISSIBLE, str(exc)) from exc
    _emit("solve", rep.to_json(), args.out)
    if args.out is not None:
        save_checkpoint(Path(args.out) / "potential.json", rep.potential)
    if not rep.converged:
        sys.stderr.write(f"gk: not converged, residual {rep.residual_sup:.3e}; " + "; ".join(rep.diagnostics) + "\n")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_continue(args):
    from .solver import continuation, lext_invariance_check, save_checkpoint
    poly = _polytope(args)
    B = parse_matrix(args.B, poly.dim)
    opts = _solve_options(args)
    reps = continuation(poly, B, opts)
    inv = lext_invariance_check(reps)
    payload = {"reports": [r.to_json() for r in reps], "ceiling": reps.diagnostic,
               "lext_invariance": inv.to_json()}
    _emit("continue", payload, args.out)
    if args.out is not None:
        for k, r in enumerate(reps):
            save_checkpoint(Path(args.out) / f"potential_{k:03d}.json", r.potential)
    if reps.diagnostic is not None or not inv.passed:
        sys.stderr.write(f"gk: {reps.diagnostic or 'ℓ_ext invariance failed'}\n")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_crosscheck(args):
    from .gk_operator import bihermitian_frame, gscal_crosscheck, identity_suite
    poly = _polytope(args)
    datum = _datum(args, poly.dim)
    u = _potential(args.potential, poly)
    _require_admissible(u, datum)
    rng = np.random.default_rng(args.seed)
    pts = grid_sample(poly, 32, margin=0.1)
    pts = pts[rng.choice(len(pts), size=min(args.points, len(pts)), replace=False)]
    results, identities = [], []
    for k, x in enumerate(pts):
        results.append(gscal_crosscheck(u, datum, x).to_json())
        identities.append(identity_suite(bihermitian_frame(u, datum, x), seed=args.seed + k).to_json())
    errs = [r["rel_err"] for r in results if not r["excluded"]]
    payload = {"points": results, "identities": identities,
               "max_rel_err": max(errs) if errs else None, "excluded": len(results) - len(errs),
               "identities_passed": all(i["passed"] for i in identities)}
    _emit("crosscheck", payload, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gk", description="Toric generalized-Kähler extremal metrics.")
    sub = p.add_subparsers(dest="command", required=True)
    p.commands = {}

    def common(sp):
        sp.add_argument("polytope", nargs="?", help="polytope JSON file or built-in name")
        sp.add_argument("--manifest", help="JSON manifest with polytope, B, A, options, seed")
        sp.add_argument("--B", help='antisymmetric matrix as inline JSON, a file, or "zero"')
        sp.add_argument("--A", help="antisymmetric matrix (frame and cross-check paths only)")
        sp.add_argument("--potential", help='"guillemin" or a potential JSON file')
        sp.add_argument("--degree", type=int)
        sp.add_argument("--grid", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (default: stdout)")
        p.commands[sp.prog.split()[-1]] = sp
        return sp

    common(sub.add_parser("validate"))
    common(sub.add_parser("lext"))
    common(sub.add_parser("gscal"))
    sp = common(sub.add_parser("stability"))
    sp.add_argument("--max-entry", type=int, default=3)
    sp.add_argument("--offsets", type=int, default=13)
    sp = common(sub.add_parser("mabuchi"))
    sp.add_argument("--level", type=int, default=6)
    sp = common(sub.add_parser("geodesic"))
    sp.add_argument("--potential-b", required=False)
    sp.add_argument("--samples", type=int, default=11)
    sp.add_argument("--level", type=int, default=6)
    common(sub.add_parser("solve"))
    sp = common(sub.add_parser("continue"))
    sp.add_argument("--steps", help="comma-separated t values starting at 0")
    sp = common(sub.add_parser("crosscheck"))
    sp.add_argument("--points", type=int, default=20)
    return p


def _read_manifest(path: str) -> dict:
    data = _load_json_arg(path)
    if not isinstance(data, dict):
        raise CliError(EXIT_MALFORMED, "manifest must be a JSON object")
    return data


def _manifest_defaults(sp: argparse.ArgumentParser, data: dict) -> dict:
    """Manifest keys that name flags of this subcommand; explicit flags still win."""
    dests = {a.dest for a in sp._actions}
    out = {}
    for key, val in data.items():
        dest = key.replace("-", "_")
        if dest in ("polytope", "options", "command") or dest not in dests:
            continue
        if dest in ("B", "A") and not isinstance(val, str):
            val = json.dumps(val)
        out[dest] = val
    if isinstance(data.get("polytope"), str):
        out["polytope"] = data["polytope"]
    return out


def _resolve_relative(args, base: Path):
    """File references in a manifest are read relative to the manifest itself."""
    for key in ("polytope", "potential", "potential_b", "B", "A"):
        val = getattr(args, key, None)
        if isinstance(val, str) and not Path(val).exists() and (base / val).is_file():
            setattr(args, key, str(base / val))


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.manifest_data = {}
    if args.manifest:
        data = _read_manifest(args.manifest)
        if data.get("command", args.command) != args.command:
            raise CliError(EXIT_MALFORMED, f"manifest is for {data['command']!r}, not {args.command!r}")
        parser.commands[args.command].set_defaults(**_manifest_defaults(parser.commands[args.command], data))
        args = parser.parse_args(argv)
        args.manifest_data = data
        _resolve_relative(args, Path(args.manifest).parent if Path(args.manifest).is_file() else Path("."))
    if args.seed is None:
        args.seed = 0
    RunManifest(args.command, args.polytope, args.manifest_data.get("options", {}), args.out, args.seed)
    return args


def main(argv=None) -> int:
    handlers = {"validate": cmd_validate, "lext": cmd_lext, "gscal": cmd_gscal, "stability": cmd_stability,
                "mabuchi": cmd_mabuchi, "geodesic": cmd_geodesic, "solve": cmd_solve,
                "continue": cmd_continue, "crosscheck": cmd_crosscheck}
    try:
        args = parse_args(argv)
        return handlers[args.command](args)
    except CliError as exc:
        sys.stderr.write(f"gk: {exc}\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
