import math

import numpy as np
import pytest

from qsieem import __version__
from qsieem.harness import cli
from qsieem.harness.campaign import (AGGREGATE_COLUMNS, SUMMARY_COLUMNS, aggregate, collect_summaries,
                                     run_campaign, write_aggregate)
from qsieem.harness.config import ConfigError, RunConfig, dump_config, load_config
from qsieem.harness.io import read_csv, render_csv, write_csv

TINY = """[run]
problem = branin
n0 = 10
particles = 40
sobol_size = 32
criterion_subset = 20
inducing_size = 30
n_starts = 10
local_budget = 5
lhs_trials = 10
reml_starts = 1
budget = 16
"""
TRACES = ["evaluations.csv", "stages.csv", "batches.csv", "particles.csv", "model.txt"]


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


# -- configuration ----------------------------------------------------------


def test_default_run_settings():
    cfg = RunConfig()
    assert (cfg.particles, cfg.rho, cfg.kappa, cfg.move_steps, cfg.gh_nodes, cfg.sobol_size) == (250, 0.35, 1.1, 25, 10, 512)
    assert (cfg.tau_intermediate, cfg.tau_final, cfg.restart_low, cfg.restart_high) == (1 / 3, 0.2, 0.10, 0.75)
    assert (cfg.criterion_subset, cfg.inducing_size, cfg.n_starts, cfg.lhs_trials) == (100, 250, 100, 1000)


def test_unknown_keys_and_sections_are_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nproblem = piston\nparticels = 10\n")
    with pytest.raises(ConfigError, match="particels"):
        load_config(bad)
    bad.write_text("[run]\nproblem = piston\n[extra]\na = 1\n")
    with pytest.raises(ConfigError, match="extra"):
        load_config(bad)
    bad.write_text("[run]\nbatch_size = three\n")
    with pytest.raises(ConfigError, match="batch_size"):
        load_config(bad)
    with pytest.raises(ConfigError):
        RunConfig().replace(colour="red")
    with pytest.raises(ConfigError):
        RunConfig(problem="rotor")
    with pytest.raises(ConfigError):
        RunConfig(rho=0.9)


def test_config_round_trip(tmp_path, tiny_config):
    cfg = load_config(tiny_config).replace(seed=4, xi_on_population=False, tau_final=0.125)
    dump_config(cfg, tmp_path / "out.ini")
    assert load_config(tmp_path / "out.ini") == cfg


def test_header_and_digest():
    cfg = RunConfig()
    head = cfg.header()
    assert head[0] == ("version", __version__)
    assert [k for k, _ in head[1:]] == [k for k, _ in cfg.items()]
    assert cfg.digest() == RunConfig().digest()
    assert cfg.digest() != cfg.replace(seed=1).digest()


def test_csv_round_trip(tmp_path):
    write_csv(tmp_path / "a.csv", [("version", "x"), ("rho", 0.35)], ["a", "b"], [[1, 1 / 3], [True, "s"]])
    head, cols, rows = read_csv(tmp_path / "a.csv")
    assert head == {"version": "x", "rho": "0.34999999999999998"}
    assert cols == ["a", "b"] and float(rows[0]["b"]) == 1 / 3 and rows[1]["a"] == "1"
    assert render_csv([], ["a"], [[0.1]]) == "a\n0.10000000000000001\n"


# -- command line -------------------------------------------------------------


def run_cli(*args):
    return cli.main([str(a) for a in args])


def test_run_writes_traces_with_provenance(tmp_path, tiny_config, capsys):
    out = tmp_path / "res"
    code = run_cli("run", "--config", tiny_config, "--seed", 7, "--out", out, "--no-error")
    assert code == 0
    run_dir = out / "branin-r1-s7"
    for name in TRACES + ["summary.csv"]:
        assert (run_dir / name).exists()
    head, cols, rows = read_csv(run_dir / "evaluations.csv")
    assert head["version"] == __version__ and head["problem"] == "branin" and head["seed"] == "7"
    assert cols[:3] == ["eval_index", "stage", "batch_index"] and cols[3:] == ["x", "s", "y1"]
    _, _, summ = read_csv(run_dir / "summary.csv")
    assert len(rows) == int(summ[0]["points"])
    _, _, stages = read_csv(run_dir / "stages.csv")
    assert len(stages) == int(summ[0]["stages"])
    assert "batches" in capsys.readouterr().out


def test_identical_seed_gives_identical_traces(tmp_path, tiny_config):
    for sub in ("a", "b"):
        assert run_cli("run", "--config", tiny_config, "--seed", 3, "--out", tmp_path / sub, "--no-error") == 0
    for name in TRACES:
        a = (tmp_path / "a" / "branin-r1-s3" / name).read_bytes()
        b = (tmp_path / "b" / "branin-r1-s3" / name).read_bytes()
        assert a == b, name


def test_missing_cloud_is_an_error(tmp_path, tiny_config, monkeypatch, capsys):
    monkeypatch.setenv("QSI_CACHE_DIR", str(tmp_path / "empty-cache"))
    assert run_cli("run", "--config", tiny_config, "--out", tmp_path / "res") == 2
    assert "oracle" in capsys.readouterr().err


def test_report_on_empty_directory_fails_cleanly(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert run_cli("report", "--results", tmp_path / "empty", "--out", tmp_path / "fig") == 2
    assert not (tmp_path / "fig").exists()
    assert list((tmp_path / "empty").iterdir()) == []
    assert run_cli("report", "--results", tmp_path / "missing") == 2


def test_benchmark_and_report(tmp_path, tiny_config, capsys):
    out = tmp_path / "bench"
    assert run_cli("benchmark", "--config", tiny_config, "--reps", 2, "--out", out, "--no-error") == 0
    head, cols, rows = read_csv(out / "aggregate.csv")
    assert cols == AGGREGATE_COLUMNS and len(rows) == 1 and rows[0]["reps"] == "2"
    assert head["version"] == __version__
    _, _, table = read_csv(out / "table.csv")
    assert [r["quantity"] for r in table] == ["No. of batches", "No. of points", "Rel. error"]
    # aggregates are recomputable from the per-run files alone
    again = aggregate(collect_summaries(out))
    assert float(rows[0]["points_mean"]) == again[0]["points_mean"]
    assert "No. of batches" in capsys.readouterr().out

    for fig in ("fig1", "fig2"):
        assert run_cli("report", "--results", out, "--out", tmp_path / fig) == 0
    names = sorted(p.name for p in (tmp_path / "fig1").iterdir())
    assert names == ["branin-error-vs-batches.csv", "branin-error-vs-batches.svg", "branin-particle-marginals.svg"]
    for n in names:
        assert (tmp_path / "fig1" / n).read_bytes() == (tmp_path / "fig2" / n).read_bytes()
    assert (tmp_path / "fig1" / names[1]).read_text().lstrip().startswith("<?xml")


def test_campaign_reuses_matching_runs(tmp_path, tiny_config):
    cfg = load_config(tiny_config)
    first = run_campaign(cfg, 1, tmp_path, compute_error=False)
    stamp = (tmp_path / "branin-r1-s0" / "summary.csv").stat().st_mtime_ns
    again = run_campaign(cfg, 1, tmp_path, compute_error=False)
    assert (tmp_path / "branin-r1-s0" / "summary.csv").stat().st_mtime_ns == stamp
    assert first[0]["points"] == again[0]["points"]
    assert set(first[0]) == set(SUMMARY_COLUMNS)
    assert math.isnan(first[0]["relerr"])


def test_write_aggregate_groups_by_batch_size(tmp_path):
    summ = [dict(problem="p", r=r, batches=b, points=10 + b * r, relerr=e)
            for r, b, e in ((1, 5, 0.1), (1, 7, 0.3), (2, 4, 0.2))]
    rows = write_aggregate(tmp_path, summ, [("version", __version__)])
    assert [(r["r"], r["reps"], r["batches_mean"], r["relerr_max"]) for r in rows] == [(1, 2, 6.0, 0.3), (2, 1, 4.0, 0.2)]


def test_flatrun_writes_curves(tmp_path, capsys):
    out = tmp_path / "flat"
    assert run_cli("flatrun", "--steps", 2, "--reps", 1, "--methods", "random", "--eval-grid", 400, "--out", out) == 0
    head, cols, rows = read_csv(out / "branin-flat-curves.csv")
    assert cols == ["method", "seed", "step", "misclass"] and head["problem"] == "branin"
    assert (out / "branin-flat-misclass.svg").exists()
    assert run_cli("report", "--results", out, "--out", tmp_path / "fig") == 0
    assert (tmp_path / "fig" / "branin-flat-misclass.svg").exists()


def test_unknown_problem_is_rejected(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("run", "--problem", "rotor")
    assert exc.value.code != 0
