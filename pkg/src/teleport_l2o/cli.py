"""Command-line entry point: ``teleport-l2o <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be an object")
    return data


def _out_dir(args, default: str) -> Path:
    from .bench import OUTPUT_ENV

    return Path(args.out or os.environ.get(OUTPUT_ENV) or default)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------- commands


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(quick=args.quick, seed=args.seed or 0)
    for r in results:
        print(r.line(), file=sys.stderr)
    report = {"quick": args.quick, "passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        (path / "verify.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _emit(report)
    return EXIT_OK if report["passed"] else EXIT_FAILED


def cmd_alg2(args) -> int:
    from . import optim, theory
    from .bench.plots import plot_panels
    from .bench.results import ResultsTable, RunResult
    from .tasks import AffineMap2, Task

    conf = _read_json(args.config) if args.config else {}
    B = np.array(conf.get("B", [[0.5, 0.0], [0.0, 3.0]]), dtype=np.float64)
    spec = theory.QuadraticSpec(B)
    steps = int(conf.get("steps", args.steps))
    beta = float(conf.get("beta", args.beta))
    seed = args.seed if args.seed is not None else int(conf.get("seed", 0))
    x0 = np.array(conf["x0"], dtype=np.float64) if "x0" in conf else np.random.default_rng(seed).standard_normal(2)
    alpha = 1.0 / spec.smoothness
    tr = theory.run_alg2(spec, x0, float(conf.get("theta0", 0.0)), alpha, beta, steps)
    task = Task(AffineMap2(B, (0.0, 0.0)), tuple(x0))
    gd = optim.run_gd(task, x0, alpha, steps)
    out = _out_dir(args, "runs/alg2")
    out.mkdir(parents=True, exist_ok=True)
    tr.write_csv(out / "alg2.csv")
    gd.write_csv(out / "gd.csv")
    table = ResultsTable(steps, ["learned_teleport", "gd"])
    for label, t in (("learned_teleport", tr), ("gd", gd)):
        table.add(RunResult(label, seed, list(t.f), [r.grad_norm for r in t.records]))
    plot_panels({"learned rotation vs GD": table}, out / "alg2.svg")
    _emit(
        {
            "x0": x0.tolist(),
            "final_f": tr.final_f,
            "gd_final_f": gd.final_f,
            "final_theta": tr.records[-1].theta,
            "rotates_toward_major_axis": theory.rotates_toward_major_axis(spec, tr),
            "out": str(out),
        }
    )
    return EXIT_OK


def _train_inputs(args):
    from .meta import L2OConfig
    from .tasks import TaskDistribution

    conf = _read_json(args.config) if args.config else {}
    dist = TaskDistribution.from_dict(conf.get("distribution", {"family": "ellipse", "mode": "fixed"}))
    tconf = dict(conf.get("train", {k: v for k, v in conf.items() if k not in ("distribution", "eval")}))
    if args.variant:
        tconf["variant"] = args.variant
    if args.seed is not None:
        tconf["seed"] = args.seed
    return L2OConfig.from_dict(tconf), dist, conf


def cmd_train(args) -> int:
    from .bench.plots import plot_curve
    from .meta import evaluate, heldout_seeds, init_nets, save_checkpoint, train, trajectory_meta_loss
    from .tasks import tasks_from_seeds

    cfg, dist, _ = _train_inputs(args)
    res = train(cfg, dist)
    out = _out_dir(args, f"runs/train_{cfg.variant}")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.nets, cfg, out / "checkpoint.json")
    (out / "train_curve.csv").write_text(res.curve_csv())
    plot_curve(res.curve, out / "train_curve.svg", "meta-loss", f"{cfg.variant} training")
    held = tasks_from_seeds(dist, heldout_seeds(cfg.eval_tasks))
    init = init_nets(cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0])))
    before = float(np.mean([trajectory_meta_loss(t, cfg) for t in evaluate(init, cfg, held)]))
    after = float(np.mean([trajectory_meta_loss(t, cfg) for t in evaluate(res.nets, cfg, held)]))
    _emit(
        {
            "variant": cfg.variant,
            "runs": cfg.runs,
            "diverged_runs": res.diverged_runs,
            "skipped_meta_steps": res.skipped_steps,
            "heldout_meta_loss_init": before,
            "heldout_meta_loss_trained": after,
            "out": str(out),
        }
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from .bench.plots import plot_table
    from .bench.results import ResultsTable, RunResult
    from .meta import evaluate, heldout_seeds, load_checkpoint
    from .tasks import TaskDistribution, tasks_from_seeds

    nets, cfg = load_checkpoint(args.checkpoint)
    conf = _read_json(args.config) if args.config else {}
    dist = TaskDistribution.from_dict(conf.get("distribution", {"family": "ellipse", "mode": "fixed"}))
    n = int(conf.get("tasks", args.tasks))
    steps = int(conf.get("steps", args.steps or cfg.epochs))
    seeds = heldout_seeds(n, start=args.seed or 0)
    trajs = evaluate(nets, cfg, tasks_from_seeds(dist, seeds), steps)
    out = _out_dir(args, f"runs/eval_{cfg.variant}")
    label = f"l2o_{cfg.variant}"
    table = ResultsTable(steps, [label])
    for i, t in enumerate(trajs):
        table.add(RunResult(label, i, list(t.f), [r.grad_norm for r in t.records], "diverged" if t.diverged else "ok"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(table.to_csv())
    plot_table(table, out / "loss.svg", label)
    _emit({"summary": table.summary(), "out": str(out)})
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import load_suites, run_bench

    if not args.config:
        raise UsageError("bench requires --config")
    suites = load_suites(args.config)
    for s in suites:
        if args.workers:
            s.workers = args.workers
        if args.seed is not None:
            for o in s.optimizers:
                if o.train is not None:
                    o.train.seed = args.seed
    out = Path(args.out) if args.out else None
    results, written = run_bench(suites, out)
    _emit(
        {
            "suites": {r.config.name: {"optimizers": r.table.summary(), "heldout": r.heldout} for r in results},
            "out": str(Path(written["summary"]).parent),
        }
    )
    return EXIT_OK


def cmd_plot(args) -> int:
    from .bench.plots import plot_table
    from .bench.results import ResultsTable

    path = Path(args.results)
    if not path.exists():
        raise FileNotFoundError(f"results file not found: {path}")
    table = ResultsTable.from_csv(path.read_text())
    target = path.with_suffix(".svg")
    if args.out:
        out = Path(args.out)
        target = out if out.suffix == ".svg" else out / target.name
    plot_table(table, target, args.title or path.parent.name)
    print(target)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--out", help="output directory (or file for plot)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="teleport-l2o", description="Teleportation-augmented learned optimizers on 2D symmetric objectives.")
    sub = p.add_subparsers(dest="command", metavar="command")

    s = sub.add_parser("verify", parents=[common], help="run the property and theory checks")
    s.add_argument("--quick", action="store_true", help="reduced sample counts")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("alg2", parents=[common], help="learn a single rotation angle online on a quadratic")
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--beta", type=float, default=0.05)
    s.set_defaults(func=cmd_alg2)

    s = sub.add_parser("train", parents=[common], help="meta-train an L2O variant")
    s.add_argument("--variant", choices=("vanilla", "teleport", "teleport_momentum"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="roll out a checkpoint on held-out tasks")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--tasks", type=int, default=5)
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common], help="run comparison suites from a config")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("plot", parents=[common], help="render a results CSV to SVG")
    s.add_argument("--results", required=True)
    s.add_argument("--title")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    from .meta import CheckpointError, ConfigError

    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
