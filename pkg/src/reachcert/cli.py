"""Command-line entry point tying the pipeline into reproducible workflows.

Every command writes its artifacts plus a run manifest into --out-dir.  Exit
codes are a stable contract: 0 on success (certification: all cells UNSAT),
1 when certification finds a counterexample or cannot complete, 2 for usage
or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import cegis as cegis_mod
from . import certify as certify_mod
from . import grid as grid_mod
from . import net as net_mod
from . import reach as reach_mod
from . import smt as smt_mod
from .config import ProblemSpec, SpecError, load_config, preset_path, spec_hash
from .manifest import RunManifest, verify_manifest

__all__ = ["main"]

EXIT_OK = 0
EXIT_COUNTEREXAMPLE = 1
EXIT_USAGE = 2


def _add_common(p: argparse.ArgumentParser, config: bool = True):
    if config:
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--config", help="path to a problem config JSON")
        g.add_argument("--preset", choices=["double-integrator-paper"], help="shipped preset name")
    p.add_argument("--out-dir", required=True, help="directory for artifacts and the run manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def _load_spec(args) -> tuple[ProblemSpec, str]:
    src = args.config if getattr(args, "config", None) else str(preset_path(args.preset))
    return load_config(src), src


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schedule_from(args) -> net_mod.TrainSchedule:
    if getattr(args, "paper_scale", False):
        base = net_mod.PAPER_SCHEDULE
    else:
        base = net_mod.DESK_SCHEDULE
    kwargs = {}
    if args.iterations is not None:
        kwargs["iterations"] = args.iterations
    if args.batch_size is not None:
        kwargs["batch_size"] = args.batch_size
    if args.lr is not None:
        kwargs["lr"] = args.lr
    if args.buffer_size is not None:
        kwargs["buffer_size"] = args.buffer_size
    from dataclasses import replace

    return replace(base, **kwargs)


def _add_schedule_flags(p: argparse.ArgumentParser):
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--buffer-size", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true", help="full-scale schedule from the experiment table")


def _add_certify_flags(p: argparse.ArgumentParser):
    p.add_argument("--route", choices=["a", "b"], default="b")
    p.add_argument("--rho", type=float, default=0.1, help="uniform per-cell residual bound")
    p.add_argument("--delta", type=float, default=1e-8, help="delta-weakening precision")
    p.add_argument("--cells", type=int, default=4, help="cells per axis")
    p.add_argument("--budget", type=int, default=1_000_000, help="box budget per cell")
    p.add_argument("--emit", choices=["smt2"], default=None)
    p.add_argument("--emit-dir", default=None, help="directory for emitted solver files")


def _save_trace(trace, path: Path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "loss_td", "loss_hjb"])
        for row in trace:
            w.writerow([row[0], repr(row[1]), repr(row[2])])


def _dump_witnesses(cert, stream=None):
    stream = stream if stream is not None else sys.stderr
    for cell, v in zip(cert.cells, cert.verdicts):
        if v.status == "DELTA_SAT":
            print(f"counterexample in cell {cell.index}: x = {v.witness.tolist()}", file=stream)
        elif v.status == "INDETERMINATE":
            print(f"cell {cell.index}: indeterminate (budget or precision exhausted)", file=stream)


def cmd_solve_grid(args) -> int:
    spec, src = _load_spec(args)
    out = _out_dir(args)
    man = RunManifest("solve-grid", args.seed, src, spec_hash(spec))
    shape = (args.grid_shape, args.grid_shape)
    if args.forward_steps:
        fields = grid_mod.solve_forward(spec, shape, args.forward_steps)
        field = fields[-1]
    else:
        field = grid_mod.solve_stationary(spec, shape, tol=args.tol)
    path = out / "grid.csv"
    grid_mod.export_csv(field, path, sidecar={"tol": args.tol, "config": spec.to_json()})
    man.add_artifact("grid", path, out)
    man.add_artifact("grid_meta", Path(str(path) + ".json"), out)
    man.save(out)
    print(f"grid solved: {field.iteration_count} sweeps, last change {field.sup_change:.3g}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec, src = _load_spec(args)
    out = _out_dir(args)
    man = RunManifest("train", args.seed, src, spec_hash(spec))
    schedule = _schedule_from(args)
    params = net_mod.init(seed=args.seed, sizes=(spec.state_dim, 40, 40, 1))
    params, trace = net_mod.train(params, spec, schedule, seed=args.seed)
    wpath = out / "weights.json"
    net_mod.save_params(params, wpath, meta={"schedule": schedule.__dict__, "config": spec.to_json(), "seed": args.seed})
    tpath = out / "loss_trace.csv"
    _save_trace(trace, tpath)
    man.add_artifact("weights", wpath, out)
    man.add_artifact("loss_trace", tpath, out)
    man.save(out)
    print(f"trained {schedule.iterations} iterations; final losses td={trace[-1][1]:.3e} hjb={trace[-1][2]:.3e}")
    return EXIT_OK


def cmd_export_expr(args) -> int:
    out = _out_dir(args)
    params = net_mod.load_params(args.weights)
    tree = net_mod.export_expr(params)
    path = out / "expr.json"
    from .expr import dump_tree

    dump_tree(tree, path)
    man = RunManifest("export-expr", args.seed, None, None)
    man.add_artifact("expr", path, out)
    man.save(out)
    print(f"exported expression tree with {tree.n_nodes} nodes")
    return EXIT_OK


def cmd_certify(args) -> int:
    spec, src = _load_spec(args)
    out = _out_dir(args)
    man = RunManifest("certify", args.seed, src, spec_hash(spec))
    params = net_mod.load_params(args.weights)
    options = certify_mod.CertifyOptions(budget=args.budget)
    cert = certify_mod.certify_roi(
        params, spec, args.route, args.rho, args.delta,
        cells_per_axis=args.cells, threads=args.threads, options=options,
    )
    cpath = out / "certificate.json"
    cert.save(cpath)
    man.add_artifact("certificate", cpath, out)
    if args.emit == "smt2":
        emit_dir = Path(args.emit_dir) if args.emit_dir else out / "smt2"
        rtree = certify_mod.build_residual_tree(params, spec, args.route)
        paths = smt_mod.write_cell_files(rtree, cert.cells, args.rho, args.delta, emit_dir)
        for p in paths:
            man.add_artifact(p.name, p, out)
    man.save(out)
    if cert.all_unsat:
        print(f"certified: all {len(cert.cells)} cells UNSAT, eps_val = {cert.eps_val}")
        return EXIT_OK
    _dump_witnesses(cert)
    print("certification failed: see witness dump", file=sys.stderr)
    return EXIT_COUNTEREXAMPLE


def cmd_bracket(args) -> int:
    spec, src = _load_spec(args)
    out = _out_dir(args)
    man = RunManifest("bracket", args.seed, src, spec_hash(spec))
    params = net_mod.load_params(args.weights)
    cert = certify_mod.load_certificate(args.certificate)
    if cert.eps_val is None:
        print("certificate carries no eps_val (not all cells UNSAT)", file=sys.stderr)
        return EXIT_COUNTEREXAMPLE
    if cert.spec_hash != spec_hash(spec):
        print("certificate does not match this configuration", file=sys.stderr)
        return EXIT_USAGE
    shape = (args.grid_shape, args.grid_shape)
    oracle = grid_mod.solve_stationary(spec, shape, tol=args.tol)
    pair = reach_mod.bracket(params, cert.eps_val, shape, spec.roi)
    report = reach_mod.validate_bracket(pair, oracle, rim=args.rim)
    mpath = out / "masks.csv"
    reach_mod.export_masks(pair, oracle, mpath, report)
    man.add_artifact("masks", mpath, out)
    man.add_artifact("masks_meta", Path(str(mpath) + ".json"), out)
    man.save(out)
    n_bad = report.inner_violations.shape[0] + report.outer_violations.shape[0]
    print(f"bracket with eps_val={cert.eps_val}: {n_bad} inclusion violations (rim={args.rim})")
    return EXIT_OK if report.ok else EXIT_COUNTEREXAMPLE


def cmd_cegis(args) -> int:
    spec, src = _load_spec(args)
    out = _out_dir(args)
    man = RunManifest("cegis", args.seed, src, spec_hash(spec))
    schedule = _schedule_from(args)
    options = certify_mod.CertifyOptions(budget=args.budget)
    params, cert, report = cegis_mod.run_cegis(
        spec, args.route, args.rho, args.delta, args.max_rounds, schedule,
        seed=args.seed, cells_per_axis=args.cells, threads=args.threads, options=options,
    )
    wpath = out / "weights.json"
    net_mod.save_params(params, wpath, meta={"cegis_rounds": len(report.rounds), "seed": args.seed})
    cpath = out / "certificate.json"
    cert.save(cpath)
    rpath = out / "cegis_report.json"
    report.save(rpath)
    xpath = out / "counterexamples.csv"
    report.save_counterexamples_csv(xpath)
    for name, p in [("weights", wpath), ("certificate", cpath), ("report", rpath), ("counterexamples", xpath)]:
        man.add_artifact(name, p, out)
    man.save(out)
    print(f"cegis finished: {report.final_status} after {len(report.rounds)} round(s)")
    if report.final_status == "CERTIFIED":
        return EXIT_OK
    _dump_witnesses(cert)
    return EXIT_COUNTEREXAMPLE


def cmd_compare(args) -> int:
    spec, src = _load_spec(args)
    out = _out_dir(args)
    man = RunManifest("compare", args.seed, src, spec_hash(spec))
    params = net_mod.load_params(args.weights)
    shape = (args.grid_shape, args.grid_shape)
    oracle = grid_mod.solve_stationary(spec, shape, tol=args.tol)
    pts = grid_mod.grid_points(oracle)
    W = net_mod.forward(params, pts).reshape(oracle.values.shape)
    diff = W - oracle.values
    rim = args.rim
    core = diff[rim:-rim, rim:-rim] if rim > 0 else diff
    path = out / "difference.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x1", "x2", "w_num", "w_nn", "delta"])
        for row, wn, wnn in zip(pts, oracle.values.ravel(), W.ravel()):
            w.writerow([repr(float(c)) for c in row] + [repr(float(wn)), repr(float(wnn)), repr(float(wnn - wn))])
    summary = {
        "max_abs_delta": float(np.max(np.abs(diff))),
        "max_abs_delta_rim_excluded": float(np.max(np.abs(core))),
        "rim": rim,
        "grid_shape": list(shape),
        "tol": args.tol,
    }
    spath = out / "compare.json"
    with open(spath, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    man.add_artifact("difference", path, out)
    man.add_artifact("summary", spath, out)
    man.save(out)
    print(
        f"max|delta| = {summary['max_abs_delta']:.6f} "
        f"(rim-excluded {summary['max_abs_delta_rim_excluded']:.6f})"
    )
    return EXIT_OK


def cmd_verify_manifest(args) -> int:
    problems = verify_manifest(args.run_dir)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_USAGE
    print("manifest intact")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reachcert", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("solve-grid", help="solve the grid oracle")
    _add_common(p)
    p.add_argument("--grid-shape", type=int, default=201)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--forward-steps", type=int, default=0, help="forward slices instead of the stationary solve")
    p.set_defaults(fn=cmd_solve_grid)

    p = sub.add_parser("train", help="train the value network")
    _add_common(p)
    _add_schedule_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("export-expr", help="export trained weights to an exact expression tree")
    p.add_argument("--weights", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_export_expr)

    p = sub.add_parser("certify", help="certify a uniform residual bound")
    _add_common(p)
    p.add_argument("--weights", required=True)
    _add_certify_flags(p)
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("bracket", help="reachable-set enclosures from a certificate")
    _add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--certificate", required=True)
    p.add_argument("--grid-shape", type=int, default=201)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--rim", type=int, default=1)
    p.set_defaults(fn=cmd_bracket)

    p = sub.add_parser("cegis", help="counterexample-guided training plus certification")
    _add_common(p)
    _add_schedule_flags(p)
    _add_certify_flags(p)
    p.add_argument("--max-rounds", type=int, default=10)
    p.set_defaults(fn=cmd_cegis)

    p = sub.add_parser("compare", help="difference field between the network and the grid oracle")
    _add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--grid-shape", type=int, default=201)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--rim", type=int, default=1)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("verify-manifest", help="recheck artifact hashes of a run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(fn=cmd_verify_manifest)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except SpecError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
