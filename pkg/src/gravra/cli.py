"""Command-line entry points: ``synth``, ``solve``, ``refine`` and ``eval``.

Every command writes its outputs atomically plus a ``key=value`` manifest.
Angles are radians; a ``deg`` suffix (``0.5deg``) is accepted anywhere an
angle is expected.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path
from types import SimpleNamespace

from . import circular, evaluation, mixed, refine, synth
from .circular import SolverConfig, SolverError
from .pose_graph import (
    GraphFormatError,
    _atomic_write,
    _read_text,
    read_graph,
    read_rotations,
    write_graph,
    write_rotations,
)

SEED_ENV = "GRAVRA_SEED"


class CliError(Exception):
    pass


def parse_angle(text: str) -> float:
    """Radians from ``'0.01'`` or ``'0.5deg'``."""
    s = text.strip().lower()
    try:
        if s.endswith("deg"):
            return math.radians(float(s[:-3]))
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an angle: {text!r}") from None


def parse_angle_list(text: str) -> list:
    return [parse_angle(t) for t in text.split(",") if t.strip()]


def resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (list, tuple)):
        return ",".join(_value(x) for x in v)
    return str(v)


def format_manifest(entries: dict) -> str:
    return "".join(f"{k}={_value(v)}\n" for k, v in entries.items())


def write_manifest(path, command: str, args, extra: dict) -> None:
    from . import __version__

    entries = {"command": command, "version": __version__}
    for key, val in sorted(vars(args).items()):
        if key in ("func", "command"):
            continue
        entries[f"arg.{key}"] = val
    entries.update(extra)
    _atomic_write(path, format_manifest(entries))


def cmd_synth(args) -> dict:
    seed = resolve_seed(args.seed)
    config = synth.SynthConfig(
        topology=args.topology,
        n=args.n,
        neighbors=args.neighbors,
        rot_noise=args.rot_noise,
        grav_noise=args.grav_noise,
        outliers=args.outliers,
        grav_known=args.grav_known,
        alpha=args.alpha,
        grav_outliers=args.grav_outliers,
        grav_outlier_angle=args.grav_outlier_angle,
        seed=seed,
    )
    graph, truth = synth.generate(config)
    out = Path(args.out)
    gt_path = Path(f"{out}.gt")
    synth.write_dataset(graph, truth, out, gt_path)
    manifest = Path(f"{out}.manifest")
    write_manifest(manifest, "synth", args, {
        "seed": seed,
        "outputs": [str(out), str(gt_path)],
        "vertices": len(graph),
        "edges": len(graph.edges),
        "outlier_edges": len(truth.outlier_edges),
    })
    return {"outputs": [out, gt_path, manifest]}


def _solver_config(args) -> SolverConfig:
    kw = {}
    if args.max_iters is not None:
        kw["max_iterations"] = args.max_iters
    if args.tol is not None:
        kw["convergence_tol"] = args.tol
    if args.gm_scale is not None:
        kw["gm_scale"] = args.gm_scale
    return SolverConfig(**kw)


def format_solve_report(mode: str, report) -> str:
    lines = [
        f"mode={mode}",
        f"converged={_value(bool(report.converged))}",
        f"iterations={report.iterations}",
        f"objective={format(report.final_objective, '.17g')}",
    ]
    if mode == "onedof":
        for v, t in zip(report.ids, report.theta):
            lines.append(f"THETA {int(v)} {format(float(t), '.17g')}")
        for (i, j), k in zip(report.edges, report.k):
            lines.append(f"PERIOD {i} {j} {int(k)}")
    return "\n".join(lines) + "\n"


def parse_solve_report(text: str, path=None):
    """Read back the 1-DoF state of a solve report (ids, theta, k, edges)."""
    ids, theta, edges, k = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        toks = raw.split()
        if not toks:
            continue
        try:
            if toks[0] == "THETA":
                ids.append(int(toks[1]))
                theta.append(float(toks[2]))
            elif toks[0] == "PERIOD":
                edges.append((int(toks[1]), int(toks[2])))
                k.append(int(toks[3]))
        except (IndexError, ValueError):
            raise GraphFormatError(f"malformed solve report line: {raw!r}", path, lineno) from None
    if not ids:
        raise CliError(f"{path}: solve report carries no 1-DoF state (mixed solve?)")
    return SimpleNamespace(ids=ids, theta=theta, k=k, edges=edges)


def cmd_solve(args) -> dict:
    graph = read_graph(args.graph)
    config = _solver_config(args)
    all_gravity = len(graph.gravity_ids()) == len(graph)
    mode = args.mode
    if mode == "auto":
        mode = "onedof" if all_gravity else "mixed"
    if mode == "onedof":
        if not all_gravity:
            raise CliError("--mode onedof needs gravity on every vertex; use --mode mixed")
        report = circular.solve(graph, config)
        rotations = report.rotations(graph)
    else:
        report = mixed.solve_mixed(graph, config)
        rotations = report.rotations
        if report.stage_a is not None and not report.free_ids:
            mode, report = "onedof", report.stage_a
    out = Path(args.out)
    write_rotations(rotations, out)
    report_path = Path(f"{out}.report")
    _atomic_write(report_path, format_solve_report(mode, report))
    manifest = Path(f"{out}.manifest")
    write_manifest(manifest, "solve", args, {
        "mode": mode,
        "outputs": [str(out), str(report_path)],
        "iterations": report.iterations,
        "converged": bool(report.converged),
    })
    return {"outputs": [out, report_path, manifest], "iterations": report.iterations,
            "converged": report.converged}


def format_refine_report(report: refine.RefineReport) -> str:
    lines = [
        f"flagged={len(report.flagged)}",
        f"refined={len(report.refined)}",
        f"skipped={len(report.skipped)}",
    ]
    for v in sorted(report.votes):
        lines.append(f"VOTE {v} {report.votes[v]} {report.neighbor_counts[v]}")
    for v in report.refined:
        old = " ".join(format(float(x), ".17g") for x in report.old_gravity[v])
        new = " ".join(format(float(x), ".17g") for x in report.new_gravity[v])
        lines.append(f"REFINED {v} {old} {new}")
    for v in report.skipped:
        lines.append(f"SKIPPED {v}")
    return "\n".join(lines) + "\n"


def cmd_refine(args) -> dict:
    graph = read_graph(args.graph)
    config = refine.RefineConfig(
        offaxis_threshold=args.offaxis_thresh,
        vote_fraction=args.vote_fraction,
    )
    new_graph, report = refine.refine_all(graph, config)
    out = Path(args.out)
    write_graph(new_graph, out)
    report_path = Path(f"{out}.report")
    _atomic_write(report_path, format_refine_report(report))
    manifest = Path(f"{out}.manifest")
    write_manifest(manifest, "refine", args, {
        "outputs": [str(out), str(report_path)],
        "flagged": len(report.flagged),
        "refined": len(report.refined),
    })
    return {"outputs": [out, report_path, manifest]}


def cmd_eval(args) -> dict:
    est = read_rotations(args.est)
    gt = read_rotations(args.gt)
    graph = read_graph(args.graph) if args.graph else None
    gravities = None
    if graph is not None:
        gravities = {v: graph.vertices[v].gravity for v in graph.gravity_ids()}
    report = evaluation.evaluate(est, gt, args.auc, gravities=gravities)
    if args.report:
        if graph is None:
            raise CliError("--report needs --graph to recompute periods")
        state = parse_solve_report(_read_text(args.report), args.report)
        report.period_correct_ratio = evaluation.period_correct_ratio(state, gt, graph)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.txt", out / "errors.csv", out / "cdf.csv"]
    _atomic_write(paths[0], evaluation.format_report(report))
    _atomic_write(paths[1], evaluation.format_errors_csv(report))
    _atomic_write(paths[2], evaluation.format_cdf_csv(report))
    manifest = out / "manifest.txt"
    write_manifest(manifest, "eval", args, {"outputs": [str(p) for p in paths]})
    return {"outputs": paths + [manifest]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gravra", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic pose graph and ground truth")
    p.add_argument("--topology", choices=("sequential", "grid"), default="sequential")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--neighbors", type=int, default=None)
    p.add_argument("--rot-noise", type=parse_angle, default=0.0)
    p.add_argument("--grav-noise", type=parse_angle, default=0.0)
    p.add_argument("--outliers", type=float, default=0.0)
    p.add_argument("--grav-known", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--grav-outliers", type=float, default=0.0)
    p.add_argument("--grav-outlier-angle", type=parse_angle, default=math.radians(10.0))
    p.add_argument("--seed", type=int, default=None, help=f"falls back to ${SEED_ENV}, then 0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="estimate absolute rotations")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tol", type=parse_angle, default=None)
    p.add_argument("--gm-scale", type=parse_angle, default=None)
    p.add_argument("--mode", choices=("auto", "onedof", "mixed"), default="auto")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("refine", help="detect and re-estimate unreliable gravity")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--offaxis-thresh", type=parse_angle, default=0.035)
    p.add_argument("--vote-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="compare estimates with ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--graph", default=None)
    p.add_argument("--report", default=None, help="solve report, enables the period ratio")
    p.add_argument("--auc", type=parse_angle_list,
                   default=list(evaluation.DEFAULT_AUC_THRESHOLDS))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        result = args.func(args)
    except (CliError, SolverError, GraphFormatError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"gravra {args.command}: error: {msg}", file=sys.stderr)
        return 1
    elapsed = time.perf_counter() - start
    print(f"gravra {args.command}: wrote {len(result['outputs'])} files in {elapsed:.3f}s",
          file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
