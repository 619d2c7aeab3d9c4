import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from teleport_l2o.bench import OUTPUT_ENV, ExperimentConfig, ResultsTable, RunResult, check_svg, load_suites, plot_table, run_bench, run_suite, write_suite
from teleport_l2o.bench.suite import eval_task_seed
from teleport_l2o.meta import ConfigError, dumps_checkpoint, init_nets, L2OConfig
from teleport_l2o.optim import run_gd
from teleport_l2o.tasks import TaskDistribution, task_from_seed

BOOTH_GD = {"name": "booth", "distribution": {"family": "ellipse", "preset": "booth"}, "optimizers": [{"name": "gd", "alpha": 0.02}], "seeds": [0, 1, 2], "steps": 25}


def write_cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_gd_only_booth_gives_monotone_curves():
    res = run_suite(ExperimentConfig.from_dict(BOOTH_GD))
    table = res.table
    assert len(table) == 3
    dist = TaskDistribution("ellipse", preset="booth")
    for run in table.runs_for("gd"):
        assert run.complete
        assert np.all(np.diff(run.f) <= 0)
        # oracle: the same GD run computed directly
        ref = run_gd(task_from_seed(dist, eval_task_seed(run.seed)), alpha=0.02, steps=25)
        assert run.f == list(ref.f)


def test_config_validation_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**BOOTH_GD, "seeds": [1, 1]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**BOOTH_GD, "seeds": []})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**BOOTH_GD, "optimizers": [{"name": "adam"}]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**BOOTH_GD, "optimizers": [{"name": "gd", "lr": 1}]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**BOOTH_GD, "optimizers": [{"name": "gd"}, {"name": "gd"}]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**BOOTH_GD, "optimizers": [{"name": "l2o", "checkpoint": "nope.json"}]}, tmp_path)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**BOOTH_GD, "distribution": {"family": "booth"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({k: v for k, v in BOOTH_GD.items() if k != "steps"})
    with pytest.raises(FileNotFoundError):
        load_suites(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_suites(bad)


def test_same_config_gives_identical_results():
    a = run_suite(ExperimentConfig.from_dict(BOOTH_GD)).table
    b = run_suite(ExperimentConfig.from_dict(BOOTH_GD)).table
    assert a.to_csv() == b.to_csv()


def test_worker_pool_does_not_change_output():
    doc = {**BOOTH_GD, "optimizers": [{"name": "gd", "alpha": 0.02}, {"name": "teleport_gd", "alpha": 0.02, "teleport_every": 5}]}
    serial = run_suite(ExperimentConfig.from_dict(doc)).table.to_csv()
    pooled = run_suite(ExperimentConfig.from_dict({**doc, "workers": 2})).table.to_csv()
    assert serial == pooled


def test_divergence_is_counted_and_excluded():
    doc = {**BOOTH_GD, "optimizers": [{"name": "gd", "alpha": 0.02}, {"name": "gd", "label": "gd_big", "alpha": 1.0}]}
    table = run_suite(ExperimentConfig.from_dict(doc)).table
    summ = table.summary()
    assert summ["gd_big"]["divergence_rate"] == 1.0
    assert summ["gd_big"]["final_median"] is None
    assert summ["gd"]["divergence_rate"] == 0.0
    assert "gd_big,0,0," in table.to_csv()


def test_failed_runs_are_recorded(monkeypatch):
    import teleport_l2o.bench.suite as suite

    real = suite._run_classic

    def flaky(spec, task, steps):
        if spec.label == "newton":
            raise RuntimeError("boom")
        return real(spec, task, steps)

    monkeypatch.setattr(suite, "_run_classic", flaky)
    doc = {**BOOTH_GD, "optimizers": [{"name": "gd", "alpha": 0.02}, {"name": "newton"}]}
    table = run_suite(ExperimentConfig.from_dict(doc)).table
    assert table.summary()["newton"]["failed"] == 3
    assert "boom" in table.runs[("newton", 0)].message
    monkeypatch.setattr(suite, "_run_classic", lambda *a: (_ for _ in ()).throw(RuntimeError("all")))
    with pytest.raises(suite.SuiteError):
        run_suite(ExperimentConfig.from_dict(BOOTH_GD))


def test_checkpoint_is_loaded_instead_of_training(tmp_path):
    cfg = L2OConfig(variant="vanilla", hidden_dim=4, runs=1, epochs=10, unroll=10)
    ck = tmp_path / "van.json"
    ck.write_text(dumps_checkpoint(init_nets(cfg, np.random.default_rng(0)), cfg))
    doc = {**BOOTH_GD, "optimizers": [{"name": "l2o", "variant": "vanilla", "checkpoint": "van.json"}]}
    res = run_suite(ExperimentConfig.from_dict(doc, tmp_path))
    info = res.training["l2o_vanilla"]
    assert info.source == "checkpoint"
    assert res.heldout["disjoint"]
    assert len(res.table.runs_for("l2o_vanilla")) == 3


def test_aggregates_survive_csv_round_trip():
    table = ResultsTable(3)
    rng = np.random.default_rng(0)
    for seed in (4, 1, 9):
        f = list(np.exp(rng.standard_normal(4)) * 1e-3)
        table.add(RunResult("gd", seed, f, list(rng.random(4))))
    table.add(RunResult("gd", 7, [1.0, 2.0], [0.1, 0.1], "diverged"))
    back = ResultsTable.from_csv(table.to_csv(), steps=3)
    assert back.aggregates_csv() == table.aggregates_csv()
    assert back.divergence_rate("gd") == 0.25
    agg = table.aggregate("gd")
    F = np.array([r.f for r in table.runs_for("gd") if r.complete])
    assert np.array_equal(agg.median, np.median(F, axis=0))
    assert np.array_equal(agg.q75, np.percentile(F, 75, axis=0))


def test_single_point_table_csv():
    table = ResultsTable(0)
    table.add(RunResult("gd", 0, [1.5], [2.0]))
    assert table.to_csv() == "optimizer,seed,step,f,grad_norm\ngd,0,0,1.5,2.0\n"
    assert ResultsTable.from_csv(table.to_csv()).to_csv() == table.to_csv()


def test_incomplete_run_marked_as_diverged():
    table = ResultsTable(5)
    table.add(RunResult("gd", 0, [1.0, 0.5], [1.0, 1.0]))
    assert table.runs[("gd", 0)].status == "diverged"


def test_results_csv_rejects_bad_header():
    with pytest.raises(ValueError):
        ResultsTable.from_csv("a,b\n")


def test_outputs_written_and_svg_valid(tmp_path):
    doc = {**BOOTH_GD, "optimizers": [{"name": "gd", "alpha": 0.02}, {"name": "newton"}], "output_dir": str(tmp_path / "o")}
    cfg = ExperimentConfig.from_dict(doc)
    paths = write_suite(run_suite(cfg))
    assert paths["results"].read_text().startswith("optimizer,seed,step,f,grad_norm\n")
    report = json.loads(paths["report"].read_text())
    assert report["heldout"]["disjoint"] and report["optimizers"]["gd"]["divergence_rate"] == 0.0
    # the Newton curve hits exactly zero; it must not leak NaN into the SVG
    check_svg(paths["plot"])
    root = ET.parse(paths["plot"]).getroot()
    assert root.tag.endswith("svg")


def test_svg_check_catches_nan(tmp_path):
    bad = tmp_path / "bad.svg"
    bad.write_text('<svg xmlns="http://www.w3.org/2000/svg"><path d="M 0 0 L nan 1"/></svg>')
    with pytest.raises(ValueError):
        check_svg(bad)
    broken = tmp_path / "broken.svg"
    broken.write_text("<svg><path></svg>")
    with pytest.raises(ET.ParseError):
        check_svg(broken)


def test_plots_are_deterministic(tmp_path):
    table = run_suite(ExperimentConfig.from_dict(BOOTH_GD)).table
    a = plot_table(table, tmp_path / "a.svg").read_bytes()
    b = plot_table(table, tmp_path / "b.svg").read_bytes()
    assert a == b


def test_multi_suite_file_and_env_override(tmp_path, monkeypatch):
    doc = {"steps": 10, "seeds": [0, 1], "optimizers": [{"name": "gd", "alpha": "1/L"}],
           "suites": [{"name": "e", "distribution": {"family": "ellipse"}}, {"name": "r", "distribution": {"family": "rosenbrock"}}]}
    path = write_cfg(tmp_path, doc)
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env_out"))
    suites = load_suites(path)
    assert [s.name for s in suites] == ["e", "r"]
    results, written = run_bench(suites)
    assert (tmp_path / "env_out" / "e" / "results.csv").exists()
    assert (tmp_path / "env_out" / "comparison.svg").exists()
    check_svg(written["panels"])
    summary = json.loads((tmp_path / "env_out" / "summary.json").read_text())
    assert set(summary) == {"e", "r"}


def test_unwritable_output_raises(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = ExperimentConfig.from_dict({**BOOTH_GD, "output_dir": str(blocker), "plots": False})
    with pytest.raises(OSError):
        write_suite(run_suite(cfg))
