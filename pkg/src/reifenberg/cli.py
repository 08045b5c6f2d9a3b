"""Command line entry point: ``reifenberg <subcommand> ...``.

Exit codes: 0 success, 1 bad input, 2 usage error, 3 invariant violation.
Errors are printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import svg
from .generators import (SnowflakeSpec, perturbed_graph_balls, plane_lattice_balls, polyline_to_balls,
                         read_polyline_csv, snowflake_polyline, write_polyline_csv)
from .harness import FAMILIES, RunConfig, run_ensemble, write_report_csv
from .jones import beta_q, flatness, jones_square
from .measure import measure_from_balls, read_measure_csv, read_measure_json, write_measure_json
from .reifenberg import (InvariantViolation, PreconditionError, ScaleLadder, build_covering,
                         key_estimates_report, run_construction, squash_experiment, verify_bound)
from .surface import write_off


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _load_measure(args):
    path = args.input
    if path.endswith(".csv"):
        if args.k is None:
            raise ValueError("CSV measures need --k")
        return read_measure_csv(path, args.k)
    return read_measure_json(path)


def _config(args) -> RunConfig:
    doc = RunConfig().to_dict()
    if getattr(args, "config", None):
        doc.update(RunConfig.load(args.config).to_dict())
    for key in ("q", "rho", "tau", "mode", "M0", "scale", "frequency", "mesh_edge"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    return RunConfig.from_dict(doc)


# ------------------------------------------------------------------ subcommands

def cmd_generate(args):
    if args.snowflake:
        if args.harmonic is not None:
            spec = SnowflakeSpec.harmonic(args.harmonic, args.gens, args.power)
        else:
            spec = SnowflakeSpec.constant(args.theta, args.gens)
        verts = snowflake_polyline(spec)
        if args.scale is None:
            if args.out:
                write_polyline_csv(verts, args.out)
            else:
                print("x,y")
                for x, y in verts:
                    print(f"{float(x)!r},{float(y)!r}")
            return 0
        bc = polyline_to_balls(verts, args.scale, args.rho)
        k = 1
    elif args.lattice:
        k, n = args.lattice
        bc = plane_lattice_balls(k, n, args.scale or 3, args.rho)
    elif args.graph is not None:
        bc = perturbed_graph_balls(args.graph, args.frequency, args.scale or 3, args.rho)
        k = 1
    elif args.polyline:
        bc = polyline_to_balls(read_polyline_csv(args.polyline), args.scale or 3, args.rho)
        k = 1
    else:
        raise ValueError("choose one of --snowflake, --lattice, --graph, --polyline")
    mu = measure_from_balls(bc, k)
    if args.out:
        write_measure_json(mu, args.out)
    else:
        _dump({"atoms": len(mu), "k": k, "n": mu.n, "meta": bc.meta})
    return 0


def cmd_beta(args):
    mu = _load_measure(args)
    res = beta_q(mu, np.array(_floats(args.x)), args.r, args.q)
    _dump({"beta": res.value, "residual": res.residual_q, "converged": res.converged,
           "plane": None if res.plane is None else res.plane.to_dict()}, args.out)
    return 0


def cmd_jones(args):
    mu = _load_measure(args)
    prof = jones_square(mu, np.array(_floats(args.x)), args.r, args.q, args.rho)
    _dump(prof.to_dict(), args.out)
    return 0


def cmd_flatness(args):
    mu = _load_measure(args)
    _dump(flatness(mu, args.q, args.rho).to_dict(), args.out)
    return 0


def cmd_cover(args):
    cfg = _config(args)
    mu = _load_measure(args)
    ladder = ScaleLadder.for_measure(mu, cfg.rho, cfg.tau)
    if args.no_surfaces:
        if cfg.M0 is None:
            raise ValueError("--no-surfaces needs --M0")
        h = build_covering(mu, ladder, cfg.M0, cfg.q)
        _dump({"hierarchy": h.to_dict()}, args.out)
        return 0
    run = run_construction(mu, ladder, cfg.q, M0=cfg.M0, max_edge=cfg.mesh_edge)
    rep = key_estimates_report(run.hierarchy, run.surfaces, mu, beta_sums=not args.no_beta_sums)
    if args.off_dir:
        os.makedirs(args.off_dir, exist_ok=True)
        for i, T in enumerate(run.surfaces):
            write_off(T, os.path.join(args.off_dir, f"T{i:02d}.off"))
    _dump({"config": cfg.to_dict(), "run": run.to_dict(), "report": rep}, args.out)
    return 0


def cmd_verify(args):
    cfg = _config(args)
    mu = _load_measure(args)
    ladder = ScaleLadder.for_measure(mu, cfg.rho, cfg.tau)
    M = None
    if args.construct:
        M = run_construction(mu, ladder, cfg.q, M0=cfg.M0, max_edge=cfg.mesh_edge).M
    v = verify_bound(mu, cfg.q, ladder, cfg.mode, M=M)
    _dump(v.to_dict(), args.out)
    return 0


def cmd_plot(args):
    if args.kind == "curve":
        svg.svg_curve(read_polyline_csv(args.input), args.out)
    elif args.kind == "scaling-plot":
        res = squash_experiment([0.1 / 2 ** j for j in range(args.points)])
        rows = res["rows"]
        svg.svg_scaling_plot([r["x"] for r in rows], [r["lip_minus_one"] for r in rows],
                             res["slope"], res["intercept"], args.out)
        print(json.dumps({"slope": res["slope"]}))
    else:
        cfg = _config(args)
        mu = _load_measure(args)
        ladder = ScaleLadder.for_measure(mu, cfg.rho, cfg.tau)
        if args.kind == "covering":
            M = cfg.M0 if cfg.M0 is not None else run_construction(mu, ladder, cfg.q, max_edge=cfg.mesh_edge).M
            h = build_covering(mu, ladder, M, cfg.q)
            count = svg.svg_covering(h, args.at_scale, args.out)
            print(json.dumps({"circles": count, "scale": args.at_scale}))
        else:
            run = run_construction(mu, ladder, cfg.q, M0=cfg.M0, max_edge=cfg.mesh_edge)
            svg.svg_surface(run.surfaces[-1], args.out)
    return 0


def cmd_ensemble(args):
    cfg = _config(args)
    cfg.construct = args.construct
    params = _floats(args.c) if args.c else cfg.amplitudes
    gens = _ints(args.gens) if args.gens else cfg.generations
    qs = _floats(args.qs) if args.qs else None
    rows = run_ensemble(args.family, params, gens, cfg, qs)
    if args.out:
        write_report_csv(rows, args.out)
    else:
        write_report_csv(rows, "/dev/stdout")
    failed = [r for r in rows if r.get("failure")]
    return 3 if failed else 0


# ------------------------------------------------------------------ parser

def _common(p, measure=True, config=False):
    if measure:
        p.add_argument("--input", required=True, help="measure JSON (or CSV with --k)")
        p.add_argument("--k", type=int, help="intrinsic dimension for CSV input")
    p.add_argument("--q", type=float, default=None if config else 2.0)
    p.add_argument("--rho", type=float, default=None if config else 0.25)
    p.add_argument("--out", help="output path (default: stdout)")
    if config:
        p.add_argument("--config", help="run-config JSON")
        p.add_argument("--tau", type=float)
        p.add_argument("--M0", type=float, help="starting M (default 10 max(1, J^(q/(q+2))))")
        p.add_argument("--mesh-edge", dest="mesh_edge", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reifenberg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="polylines and ball-collection measures")
    g.add_argument("--snowflake", action="store_true")
    g.add_argument("--theta", type=float, default=0.0)
    g.add_argument("--harmonic", type=float, help="angles c / i**power")
    g.add_argument("--power", type=float, default=1.0)
    g.add_argument("--gens", type=int, default=0)
    g.add_argument("--lattice", type=int, nargs=2, metavar=("K", "N"))
    g.add_argument("--graph", type=float, metavar="AMPLITUDE")
    g.add_argument("--frequency", type=int, default=3)
    g.add_argument("--polyline", help="polyline CSV to convert into balls")
    g.add_argument("--scale", type=int, help="ball scale index (snowflake: emit balls instead of CSV)")
    g.add_argument("--rho", type=float, default=0.25)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    for name, func, helptext in (("beta", cmd_beta, "beta_q at one ball"),
                                 ("jones", cmd_jones, "Jones square function profile")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--x", required=True, help="centre, comma separated")
        p.add_argument("--r", type=float, required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("flatness", help="sup and average flatness functionals")
    _common(p)
    p.set_defaults(func=cmd_flatness)

    p = sub.add_parser("cover", help="covering, surfaces and key estimates")
    _common(p, config=True)
    p.add_argument("--no-surfaces", action="store_true", help="covering only, at --M0")
    p.add_argument("--no-beta-sums", action="store_true")
    p.add_argument("--off-dir", help="write T_i meshes as OFF files here")
    p.set_defaults(func=cmd_cover)

    p = sub.add_parser("verify", help="bound verdict")
    _common(p, config=True)
    p.add_argument("--mode", choices=("sup", "avg"))
    p.add_argument("--construct", action="store_true", help="use the construction's final M for the density check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="SVG figures")
    p.add_argument("--kind", required=True, choices=("curve", "covering", "surface", "scaling-plot"))
    p.add_argument("--input", help="polyline CSV (curve) or measure JSON")
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--at-scale", dest="at_scale", type=int, default=1)
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--config")
    p.add_argument("--q", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--M0", type=float)
    p.add_argument("--mesh-edge", dest="mesh_edge", type=float)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("ensemble", help="family sweep to CSV")
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--c", help="family parameters, comma separated")
    p.add_argument("--gens", help="generation counts, comma separated")
    p.add_argument("--qs", help="exponents q, comma separated")
    p.add_argument("--scale", type=int)
    p.add_argument("--frequency", type=int)
    p.add_argument("--construct", action="store_true")
    p.add_argument("--config")
    p.add_argument("--q", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--M0", type=float)
    p.add_argument("--mesh-edge", dest="mesh_edge", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ensemble)
    return ap


def _error(kind, message, code, **extra):
    print(json.dumps(dict({"error": kind, "message": message}, **extra)), file=sys.stderr)
    return code


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    if args.command == "plot" and args.kind != "scaling-plot" and not args.input:
        parser.print_usage(sys.stderr)
        return _error("usage", "--input is required for this figure kind", 2)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        return _error("invariant", str(exc), 3, identifier=exc.identifier)
    except (PreconditionError, ValueError, OSError) as exc:
        return _error(type(exc).__name__, str(exc), 1)


def main(argv=None):
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
