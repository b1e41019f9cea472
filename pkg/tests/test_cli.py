import json
import math
import os

import pytest

from p1lab.cli import main
from p1lab.config import (
    ExperimentConfig,
    ExperimentKind,
    cache_key,
    config_digest,
    load_config,
    save_config,
)
from p1lab.envelope import parse_weight
from p1lab.errors import ConfigurationError, NumericError
from p1lab.experiments import RunReport, Verdict, load_report, run
from p1lab.geometry import build_grid


def small_config(tmp_path, **overrides):
    base = dict(kind=ExperimentKind.KERNEL_CONVERGENCE, weight="fs",
                n_r=64, n_theta=64, degrees=(5, 10),
                out_dir=str(tmp_path / "runs"))
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------- config


def test_config_round_trip_is_lossless(tmp_path):
    cfg = ExperimentConfig(kind=ExperimentKind.MOMENTS,
                           weight="bump{-1.5,2,0.25}", n_r=96, n_theta=104,
                           degrees=(3, 7, 31), measure="iid_real{pareto_log,3,1}",
                           trials=5000, nu=math.pi, k_values=(4, 64, 4096),
                           seed=17, threads=3, out_dir="somewhere/else")
    path = str(tmp_path / "cfg.ini")
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(kind="envelope")  # must be the enum, not a string
    with pytest.raises(ConfigurationError):
        ExperimentConfig(kind=ExperimentKind.ENVELOPE, weight="cap{-2}")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(kind=ExperimentKind.ENVELOPE, n_r=4)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(kind=ExperimentKind.MOMENTS, nu=0.0)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(kind=ExperimentKind.MOMENTS, k_values=(10, 0))


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / "nope.ini"))


def test_config_digest_tracks_content():
    a = ExperimentConfig(kind=ExperimentKind.ENVELOPE, weight="cap{1}")
    b = ExperimentConfig(kind=ExperimentKind.ENVELOPE, weight="cap{1}")
    c = ExperimentConfig(kind=ExperimentKind.ENVELOPE, weight="cap{1}", seed=1)
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(c)
    assert len(config_digest(a)) == 8


def test_cache_key_sensitivity():
    g = build_grid(16, 24)
    w = parse_weight("cap{1}")
    assert cache_key(w, 8, g) == cache_key(parse_weight("cap{1}"), 8, g)
    assert cache_key(w, 8, g) != cache_key(w, 9, g)
    assert cache_key(w, 8, g) != cache_key(w, 8, build_grid(16, 32))
    assert cache_key(w, 8, g) != cache_key(parse_weight("cap{1.01}"), 8, g)


# ---------------------------------------------------------------- runner


def test_runner_produces_report_and_artifacts(tmp_path):
    cfg = small_config(tmp_path)
    report = run(cfg)
    assert report.complete and report.all_passed
    names = [v.criterion for v in report.verdicts]
    assert "fs-kernel-l1-oracle" in names
    assert os.path.isdir(report.out_dir)
    assert os.path.exists(os.path.join(report.out_dir, "kernel_l1.csv"))
    loaded = load_report(report.out_dir)
    assert loaded["complete"] is True
    assert loaded["config"]["weight"] == "fs"
    # basis cache populated under the output root
    cache = os.listdir(os.path.join(cfg.out_dir, "cache"))
    assert sum(f.startswith("basis-") for f in cache) == 2


def test_rerun_is_byte_identical(tmp_path):
    cfg = small_config(tmp_path)
    first = run(cfg)   # cold: builds the basis cache
    second = run(cfg)  # warm: reads it back
    with open(os.path.join(first.out_dir, "kernel_l1.csv"), "rb") as fh:
        a = fh.read()
    with open(os.path.join(second.out_dir, "kernel_l1.csv"), "rb") as fh:
        b = fh.read()
    assert a == b
    ra, rb = load_report(first.out_dir), load_report(second.out_dir)
    for volatile in ("wall_clock", "out_dir"):
        ra.pop(volatile), rb.pop(volatile)
    assert ra == rb


def test_failed_run_leaves_partial_report(tmp_path):
    # degree too high for the angular resolution: fails in the basis stage
    cfg = small_config(tmp_path, degrees=(5, 200))
    with pytest.raises(ConfigurationError):
        run(cfg)
    runs = os.listdir(cfg.out_dir)
    sub = [d for d in runs if d != "cache"]
    assert len(sub) == 1
    rep = load_report(os.path.join(cfg.out_dir, sub[0]))
    assert rep["complete"] is False and rep["failed_stage"]


# ------------------------------------------------------------------- cli


def test_cli_pass_and_report_round_trip(tmp_path, capsys):
    out = str(tmp_path / "runs")
    code = main(["bergman", "fs", "--degrees", "5,10",
                 "--grid", "64x64", "--out", out])
    printed = capsys.readouterr().out
    assert code == 0
    assert "[PASS] fs-kernel-l1-oracle" in printed
    run_dir = next(line.split(": ", 1)[1] for line in printed.splitlines()
                   if line.startswith("artifacts: "))
    assert main(["report", run_dir]) == 0


def test_cli_run_subcommand_with_config_file(tmp_path, capsys):
    cfg = small_config(tmp_path, degrees=(5,))
    path = str(tmp_path / "exp.ini")
    save_config(cfg, path)
    override = str(tmp_path / "elsewhere")
    assert main(["run", path, "--out", override]) == 0
    assert "artifacts: " + override in capsys.readouterr().out


def test_cli_exit_2_on_bad_input(tmp_path, capsys):
    assert main(["envelope", "wedge{1}"]) == 2        # unknown weight family
    assert main(["bergman", "fs", "--degrees", "5;10"]) == 2
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_exit_3_on_numeric_error(monkeypatch, capsys):
    def boom(cfg):
        raise NumericError("sor diverged")
    monkeypatch.setattr("p1lab.cli.run", boom)
    assert main(["envelope", "fs", "--grid", "32x32"]) == 3
    assert "numeric error" in capsys.readouterr().err


def test_cli_exit_1_on_failed_verdict(monkeypatch, capsys):
    fake = RunReport(config={}, kind="envelope", weight_hash="h", version="0",
                     metrics={}, wall_clock=0.0, out_dir="x",
                     verdicts=(Verdict("too-big", False, 1.0, 0.5),))
    monkeypatch.setattr("p1lab.cli.run", lambda cfg: fake)
    assert main(["envelope", "fs", "--grid", "32x32"]) == 1
    assert "[FAIL] too-big" in capsys.readouterr().out


def test_cli_exit_1_on_incomplete_report(tmp_path, capsys):
    rep = RunReport(config={}, kind="moments", weight_hash="", version="0",
                    metrics={}, verdicts=(), wall_clock=0.0,
                    out_dir=str(tmp_path), complete=False,
                    failed_stage="sampling", error="short draw")
    with open(tmp_path / "report.json", "w") as fh:
        fh.write(rep.to_json())
    assert main(["report", str(tmp_path)]) == 1
    assert "run incomplete" in capsys.readouterr().out
    assert json.loads(rep.to_json())["failed_stage"] == "sampling"
