"""Run a suite: train or load meta-optimizers, evaluate every optimizer on held-out tasks."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import optim
from ..meta import L2OConfig, dumps_checkpoint, evaluate, load_checkpoint, train, training_seeds
from ..meta.l2o import HELDOUT_OFFSET
from ..tasks import TaskDistribution, task_from_seed
from . import plots
from .config import ExperimentConfig, OptimizerSpec
from .results import ResultsTable, RunResult, dumps_json, write_text

log = logging.getLogger(__name__)


class SuiteError(RuntimeError):
    """Every run of a suite failed."""


@dataclass
class TrainingInfo:
    label: str
    source: str  # "trained" or "checkpoint"
    config: L2OConfig
    train_seeds: list
    curve: list = field(default_factory=list)
    diverged_runs: int = 0
    skipped_steps: int = 0
    meta_steps: int = 0
    checkpoint_text: str = ""

    def to_dict(self) -> dict:
        finite = [v for v in self.curve if math.isfinite(v)]
        return {
            "source": self.source,
            "config": self.config.to_dict(),
            "train_runs": len(self.train_seeds),
            "diverged_runs": self.diverged_runs,
            "skipped_meta_steps": self.skipped_steps,
            "meta_steps": self.meta_steps,
            "first_meta_loss": finite[0] if finite else None,
            "last_meta_loss": finite[-1] if finite else None,
        }

    def curve_csv(self) -> str:
        return "run,meta_loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(self.curve))


@dataclass
class SuiteResult:
    config: ExperimentConfig
    table: ResultsTable
    training: dict
    eval_task_seeds: list

    @property
    def heldout(self) -> dict:
        evals = set(self.eval_task_seeds)
        overlap = {label: len(evals.intersection(info.train_seeds)) for label, info in self.training.items()}
        return {"eval_task_seeds": len(evals), "overlap": overlap, "disjoint": not any(overlap.values())}

    def report(self) -> dict:
        out = self.table.to_json_dict()
        out.update(
            suite=self.config.name,
            distribution=self.config.distribution.to_dict(),
            seeds=list(self.config.seeds),
            heldout=self.heldout,
            training={k: v.to_dict() for k, v in self.training.items()},
        )
        return out


def eval_task_seed(seed: int) -> int:
    return HELDOUT_OFFSET + seed


def _prepare_l2o(spec: OptimizerSpec, dist: TaskDistribution) -> tuple[list, TrainingInfo]:
    if spec.checkpoint is not None and spec.checkpoint.exists():
        nets, cfg = load_checkpoint(spec.checkpoint)
        return nets, TrainingInfo(spec.label, "checkpoint", cfg, training_seeds(cfg))
    cfg = spec.train
    log.info("training %s (%d runs)", spec.label, cfg.runs)
    res = train(cfg, dist)
    info = TrainingInfo(
        spec.label,
        "trained",
        cfg,
        res.train_seeds,
        res.curve,
        res.diverged_runs,
        res.skipped_steps,
        res.meta_steps,
        dumps_checkpoint(res.nets, cfg),
    )
    return res.nets, info


def _as_run(label: str, seed: int, traj: optim.Trajectory) -> RunResult:
    status = "diverged" if traj.diverged else "ok"
    return RunResult(label, seed, [r.f for r in traj.records], [r.grad_norm for r in traj.records], status, "; ".join(traj.warnings))


def _run_classic(spec: OptimizerSpec, task, steps: int) -> optim.Trajectory:
    p = spec.params
    alpha = p.get("alpha", "1/L")
    if spec.kind == "gd":
        return optim.run_gd(task, None, alpha, steps)
    if spec.kind == "momentum":
        return optim.run_momentum(task, None, alpha, p.get("beta", 0.9), steps)
    if spec.kind == "newton":
        return optim.run_newton(task, None, steps)
    if "teleport_steps" in p:
        schedule = optim.TeleportSchedule(p["teleport_steps"])
    else:
        schedule = optim.TeleportSchedule.every(int(p.get("teleport_every", 10)), steps)
    return optim.run_teleport_gd(task, None, alpha, steps, schedule, p.get("grid_n", 64), p.get("refine_iters", 40))


def _run_job(job: tuple) -> RunResult:
    spec, dist, seed, steps, l2o = job
    try:
        task = task_from_seed(dist, eval_task_seed(seed))
        if spec.is_l2o:
            nets, cfg = l2o
            traj = evaluate(nets, cfg, [task], steps)[0]
        else:
            traj = _run_classic(spec, task, steps)
    except Exception as exc:  # a failed run is recorded, the suite carries on
        return RunResult(spec.label, seed, [], [], "failed", f"{type(exc).__name__}: {exc}")
    return _as_run(spec.label, seed, traj)


def run_suite(config: ExperimentConfig) -> SuiteResult:
    """Evaluate every optimizer on the same held-out task seeds.

    L2O entries are trained first (or loaded from a checkpoint).  Jobs are
    merged by (optimizer, seed), so ``workers`` never changes the output.
    """
    dist = config.distribution
    prepared, training = {}, {}
    for spec in config.optimizers:
        if spec.is_l2o:
            nets, info = _prepare_l2o(spec, dist)
            prepared[spec.label] = (nets, info.config)
            training[spec.label] = info
    jobs = [(spec, dist, seed, config.steps, prepared.get(spec.label)) for spec in config.optimizers for seed in sorted(config.seeds)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    table = ResultsTable(config.steps, [s.label for s in config.optimizers])
    for run in sorted(results, key=lambda r: (config_index(config, r.optimizer), r.seed)):
        if run.status == "failed":
            log.warning("%s seed %d failed: %s", run.optimizer, run.seed, run.message)
        table.add(run)
    if all(r.status == "failed" for r in results):
        raise SuiteError(f"suite {config.name!r}: all {len(results)} runs failed")
    return SuiteResult(config, table, training, [eval_task_seed(s) for s in config.seeds])


def config_index(config: ExperimentConfig, label: str) -> int:
    return [s.label for s in config.optimizers].index(label)


def write_suite(result: SuiteResult, out_dir: Optional[Path] = None) -> dict:
    """Write CSV/JSON (and SVG when enabled) for one suite; returns the written paths."""
    cfg = result.config
    root = Path(out_dir or cfg.output_dir) / cfg.name
    paths = {"results": root / "results.csv", "aggregates": root / "aggregates.csv", "report": root / "report.json"}
    write_text(paths["results"], result.table.to_csv())
    write_text(paths["aggregates"], result.table.aggregates_csv())
    write_text(paths["report"], dumps_json(result.report()))
    for label, info in result.training.items():
        if info.source == "trained":
            paths[f"curve_{label}"] = root / f"train_{label}.csv"
            write_text(paths[f"curve_{label}"], info.curve_csv())
            paths[f"checkpoint_{label}"] = root / f"checkpoint_{label}.json"
            write_text(paths[f"checkpoint_{label}"], info.checkpoint_text)
    if cfg.plots:
        paths["plot"] = plots.plot_table(result.table, root / "loss.svg", cfg.name)
        for label, info in result.training.items():
            if info.curve and any(np.isfinite(info.curve)):
                paths[f"curve_plot_{label}"] = plots.plot_curve(info.curve, root / f"train_{label}.svg", "meta-loss", f"{cfg.name}: {label}")
    return paths


def run_bench(configs: list[ExperimentConfig], out_dir: Optional[Path] = None) -> tuple[list[SuiteResult], dict]:
    """Run all suites, write their outputs plus a cross-suite summary and panel plot."""
    results, written = [], {}
    for cfg in configs:
        log.info("suite %s", cfg.name)
        res = run_suite(cfg)
        written[cfg.name] = write_suite(res, out_dir)
        results.append(res)
    root = Path(out_dir or configs[0].output_dir)
    summary = {
        r.config.name: {"optimizers": r.table.summary(), "heldout_disjoint": r.heldout["disjoint"]} for r in results
    }
    write_text(root / "summary.json", dumps_json(summary))
    written["summary"] = root / "summary.json"
    if any(c.plots for c in configs):
        written["panels"] = plots.plot_panels({r.config.name: r.table for r in results}, root / "comparison.svg")
    return results, written
