"""Command-line interface: ``slitsphere <subcommand> [options]``.

Every option can also come from a plain ``key=value`` file given with
``--config``; flags on the command line take precedence.  Exit status is
0 on success, 1 when a computation fails (or an anchor check fails) and 2
on usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence


_PI_RE = re.compile(r"^\s*([+-]?[0-9]*\.?[0-9]*(?:[eE][+-]?[0-9]+)?)\s*\*?\s*pi\s*(?:/\s*([0-9.]+))?\s*$")


class UsageError(Exception):
    pass


def parse_angle(text: str) -> float:
    """Radians, with the convenience forms ``0.5pi``, ``pi``, ``pi/3``."""
    t = text.strip().lower()
    m = _PI_RE.match(t)
    if m:
        coef = m.group(1)
        c = 1.0 if coef in ("", "+") else (-1.0 if coef == "-" else float(coef))
        div = float(m.group(2)) if m.group(2) else 1.0
        return c * math.pi / div
    try:
        return float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse angle {text!r}") from None


def parse_delta(text: str) -> List[float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) == 2:
        parts.append(parts[1])
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated arc lengths (or two: d1,d2=d3)")
    return [parse_angle(p) for p in parts]


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def parse_rho(text: str):
    if text.strip().lower() == "auto":
        return "auto"
    vals = [parse_angle(p) for p in text.split(",")]
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("rho is 'auto' or three radii")
    return tuple(vals)


def read_config(path) -> Dict[str, str]:
    out = {}
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{i}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _common(p: argparse.ArgumentParser, n_default: int = 40):
    p.add_argument("--config", help="key=value file with defaults for any option")
    p.add_argument("--n", type=int, default=n_default, help="latitude rings per meridian")
    p.add_argument("--tol", type=float, default=1e-8, help="eigensolver tolerance")
    p.add_argument("--seed", type=int, default=0, help="seed of the eigensolver start vector")
    p.add_argument("--rho", type=parse_rho, default="auto", help="cutoff radii: auto or r1,r2,r3")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slitsphere", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build, validate and export a slit mesh")
    _common(p)
    p.add_argument("--delta", type=parse_delta, default=[0.0, 0.0, 0.0])
    p.add_argument("--min-quality", type=float, default=0.3)

    p = sub.add_parser("solve", help="eigenvalue and singular coefficients at one configuration")
    _common(p)
    p.add_argument("--delta", type=parse_delta, required=False)
    p.add_argument("--no-trace-jump", action="store_true", help="skip the FE-only solve")
    p.add_argument("--export-matrices", action="store_true", help="write K and M in MatrixMarket format")

    p = sub.add_parser("sweep", help="grid sweep over (delta1, delta2 = delta3)")
    _common(p)
    p.add_argument("--lo", type=parse_angle, default=0.14)
    p.add_argument("--hi", type=parse_angle, default=3.0)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--timing", action="store_true", help="record wall times (breaks byte-identical reruns)")
    p.add_argument("--margin", type=float, default=0.1)

    p = sub.add_parser("curve", help="lambda = 3/4 curve and verdict from a sweep CSV")
    _common(p)
    p.add_argument("--csv", required=False)
    p.add_argument("--margin", type=float, default=0.1)

    p = sub.add_parser("general", help="scan without the mirror symmetry")
    _common(p, 20)
    p.add_argument("--step", type=int, default=2, help="use every step-th ring latitude")
    p.add_argument("--k", type=int, default=6, help="eigenpairs per configuration")
    p.add_argument("--window", type=float, default=1e-2, help="half width around 3/4")
    p.add_argument("--threshold", type=float, default=0.1, help="equal-magnitude spread threshold")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("converge", help="mesh convergence study")
    _common(p)
    p.add_argument("--delta", type=parse_delta, default=[math.pi / 2] * 3)
    p.add_argument("--n-list", type=parse_int_list, default=[10, 20, 40, 80])
    p.add_argument("--n-ref", type=int, default=160)

    p = sub.add_parser("validate", help="exact-anchor suite")
    _common(p)

    p = sub.add_parser("plot", help="SVG figures from a sweep CSV")
    _common(p)
    p.add_argument("--csv", required=False)
    return ap


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            conf = read_config(args.config)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except UsageError as exc:
            parser.error(str(exc))
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in subparser._actions}
        defaults = {}
        for k, v in conf.items():
            if k not in actions or k in ("help", "config"):
                parser.error(f"unknown config key {k!r} for '{args.command}'")
            act = actions[k]
            if isinstance(act, argparse._StoreTrueAction):
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                conv = act.type or str
                try:
                    defaults[k] = conv(v)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    parser.error(f"config key {k}: {exc}")
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _resolved(args) -> Dict[str, object]:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "config":
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)
        out[k] = v
    return out


def _write_config(args, outdir: Path) -> None:
    with open(outdir / "config.txt", "w") as fh:
        for k, v in _resolved(args).items():
            if v is None:
                continue
            fh.write(f"{k}={v}\n")


def _outdir(args) -> Optional[Path]:
    if not args.out:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    _write_config(args, p)
    return p


def _snap(delta, n):
    from .mesh import snap_delta

    return [snap_delta(d, n) for d in delta]


def _options(args, **kw):
    from .sweep import RunOptions

    return RunOptions(rho_policy=args.rho, tol=args.tol, seed=args.seed, **kw)


# ---------------------------------------------------------------------------
# subcommands


def cmd_mesh(args) -> int:
    from .geometry import make_cut_spec
    from .mesh import build_symmetric_mesh, validate_mesh, write_off

    delta = _snap(args.delta, args.n)
    mesh = build_symmetric_mesh(args.n, make_cut_spec(*delta, rho_policy=args.rho))
    rep = validate_mesh(mesh, min_quality=args.min_quality)
    print(f"n={args.n} vertices={rep.n_vertices} triangles={rep.n_triangles} edges={rep.n_edges} "
          f"dofs={rep.n_dofs} duplicated={rep.duplicated}")
    print(f"euler={rep.euler} quality=[{rep.quality_min:.3f}, {rep.quality_max:.3f}] "
          f"edge_ratio={rep.edge_ratio:.3f} h={rep.h:.5f}")
    for v in rep.violations:
        print(f"violation: {v}")
    out = _outdir(args)
    if out:
        write_off(mesh, out / "mesh.off")
    return 0 if rep.ok else 1


def cmd_solve(args) -> int:
    from .fem import assemble_system, export_matrix_market
    from .geometry import make_cut_spec
    from .mesh import build_symmetric_mesh
    from .sweep import run_single, write_csv

    if args.delta is None:
        raise UsageError("solve needs --delta")
    delta = _snap(args.delta, args.n)
    spec = make_cut_spec(*delta, rho_policy=args.rho)
    rec = run_single(spec, args.n, _options(args, trace_jump=not args.no_trace_jump))
    print(f"n={rec.n} h={rec.h:.5f} delta=({rec.delta1:.6f}, {rec.delta2:.6f}, {rec.delta3:.6f})")
    print(f"lambda1A = {rec.lambda1A:.6f}   lambda2A = {rec.lambda2A:.6f}   residual = {rec.eig_residual:.2e}")
    if not math.isnan(rec.lambda_fe):
        print(f"lambda1A (FE only) = {rec.lambda_fe:.6f}")
    print(f"{'':18s}{'alpha1':>12s}{'alpha2':>12s}{'alpha3':>12s}{'ratio':>10s}")
    print(f"{'dual extraction':18s}{rec.alpha1:12.6f}{rec.alpha2:12.6f}{rec.alpha3:12.6f}{rec.ratio_moussaoui:10.5f}")
    if not math.isnan(rec.alpha1_ef):
        print(f"{'trace jump':18s}{rec.alpha1_ef:12.6f}{rec.alpha2_ef:12.6f}{'':12s}{rec.ratio_ef:10.5f}")
    if rec.flags:
        print(f"flags: {rec.flags}")
    out = _outdir(args)
    if out:
        write_csv([rec], out / "solve.csv")
        if args.export_matrices:
            system = assemble_system(build_symmetric_mesh(args.n, spec))
            export_matrix_market(out / "K.mtx", system.K, "stiffness")
            export_matrix_market(out / "M.mtx", system.M, "mass")
    return 0


def _curve_outputs(records, out: Path, margin: float):
    from .plotting import lambda_heatmap, ratio_along_curve, ratio_surface
    from .sweep import find_curve, hypothesis_report, write_report

    curve = find_curve(records)
    with open(out / "curve.csv", "w") as fh:
        fh.write("delta2,delta1,bracket_lo,bracket_hi,lambda_lo,lambda_hi,ratio_moussaoui,ratio_ef\n")
        for c in curve:
            vals = [c.delta2, c.delta1, *c.bracket, *c.lam_bracket, c.ratio_moussaoui, c.ratio_ef]
            fh.write(",".join(f"{v:.12g}" for v in vals) + "\n")
    rep = hypothesis_report(curve, margin)
    write_report(rep, out / "verdict.json")
    lambda_heatmap(records, out / "lambda_heatmap.svg", curve)
    ratio_surface(records, out / "ratio_surface.svg")
    if curve:
        ratio_along_curve(curve, out / "ratio_along_curve.svg")
    return curve, rep


def cmd_sweep(args) -> int:
    from .sweep import run_sweep, sweep_grid, write_csv

    grid = sweep_grid(args.n, args.lo, args.hi)
    if not grid:
        raise UsageError("empty grid")
    out = _outdir(args)
    ckpt = str(out / "sweep.partial.csv") if out else None
    t0 = time.perf_counter()
    recs = run_sweep(grid, args.n, args.workers, _options(args, timing=args.timing), ckpt)
    failed = [r for r in recs if r.flags.startswith("failed")]
    print(f"{len(recs)} points, {len(failed)} failed, {time.perf_counter() - t0:.1f} s")
    if out:
        write_csv(recs, out / "sweep.csv")
        curve, rep = _curve_outputs(recs, out, args.margin)
        print(f"curve points: {len(curve)}; verdict: {rep['verdict']}")
        if os.path.exists(ckpt):
            os.remove(ckpt)
    return 1 if len(failed) == len(recs) else 0


def cmd_curve(args) -> int:
    from .sweep import read_csv

    if not args.csv:
        raise UsageError("curve needs --csv")
    recs = read_csv(args.csv)
    out = _outdir(args) or Path(args.csv).parent
    curve, rep = _curve_outputs(recs, out, args.margin)
    print(json.dumps(rep, indent=2, sort_keys=True))
    return 0


def cmd_plot(args) -> int:
    from .plotting import lambda_heatmap, ratio_surface
    from .sweep import find_curve, read_csv

    if not args.csv:
        raise UsageError("plot needs --csv")
    recs = read_csv(args.csv)
    out = _outdir(args) or Path(args.csv).parent
    lambda_heatmap(recs, out / "lambda_heatmap.svg", find_curve(recs))
    ratio_surface(recs, out / "ratio_surface.svg")
    print(f"wrote {out / 'lambda_heatmap.svg'} and {out / 'ratio_surface.svg'}")
    return 0


def cmd_general(args) -> int:
    from .sweep import canonical_triples, equal_magnitude_hits, run_general_check

    vals = [k * math.pi / args.n for k in range(args.step, args.n, args.step)]
    triples = canonical_triples(vals)
    recs = run_general_check(triples, args.n, args.k, args.window, args.workers, _options(args))
    cands = [h for r in recs for h in r.candidates]
    hits = equal_magnitude_hits(recs, args.threshold)
    print(f"{len(triples)} triples, {len(cands)} eigenvalue(s) within {args.window} of 3/4, "
          f"{len(hits)} with equal-magnitude spread < {args.threshold}")
    out = _outdir(args)
    if out:
        with open(out / "general.csv", "w") as fh:
            fh.write("delta1,delta2,delta3,lambda,multiplicity,alpha1,alpha2,alpha3,spread\n")
            for c in cands:
                fh.write(",".join(f"{v:.12g}" for v in (*c.delta, c.eigenvalues[0], len(c.eigenvalues),
                                                        *c.alpha, c.spread)) + "\n")
    return 0


def cmd_converge(args) -> int:
    from .plotting import convergence_plot
    from .sweep import convergence_study

    delta = _snap(args.delta, args.n_ref)
    for n in args.n_list:
        _snap(delta, n)
    table = convergence_study(delta, args.n_list, args.n_ref, _options(args))
    print(table.to_csv(), end="")
    print("slopes: " + ", ".join(f"{k}={v:.3f}" for k, v in table.slopes.items()))
    out = _outdir(args)
    if out:
        (out / "convergence.csv").write_text(table.to_csv())
        convergence_plot(table, out / "convergence.svg")
    return 0


def cmd_validate(args) -> int:
    from .validation import run_anchors

    anchors = run_anchors(args.n, log=print)
    bad = sum(not a.passed for a in anchors)
    print(f"{len(anchors) - bad}/{len(anchors)} anchors passed at n={args.n}")
    return 0 if bad == 0 else 1


COMMANDS = {"mesh": cmd_mesh, "solve": cmd_solve, "sweep": cmd_sweep, "curve": cmd_curve,
            "general": cmd_general, "converge": cmd_converge, "validate": cmd_validate, "plot": cmd_plot}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # inadmissible arc lengths and similar input problems
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # computation failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
