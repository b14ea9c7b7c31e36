import json

import pytest
from click.testing import CliRunner

from app import cli
from system import REPORT_FILE

SMALL_CAMPAIGN = """
extensions: [SSE2, AVX]
reps: 4
hp:
  N: 8
  n: 5
  cognitive_iters: 3
  mixed_iters: 5
calibration:
  baseline_samples: 2
"""


@pytest.fixture
def runner(monkeypatch):
    for name in ("SEED", "BACKEND", "PROFILE", "OUT", "CORE"):
        monkeypatch.delenv(f"SPECSWARM_{name}", raising=False)
    return CliRunner()


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "campaign.yaml"
    path.write_text(SMALL_CAMPAIGN, encoding="utf-8")
    return path


def test_run_writes_report(runner, config_file, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli, ["run", "--config", str(config_file), "--seed", "5", "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    assert report["config"]["seed"] == 5
    assert report["total_evaluations"] == 8 * 8


def test_minimize_from_report(runner, config_file, tmp_path):
    out = tmp_path / "out"
    assert runner.invoke(cli, ["run", "--config", str(config_file), "--out", str(out)]).exit_code == 0
    report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    label = next(iter(report["classes"]))
    result = runner.invoke(cli, ["minimize", str(out / REPORT_FILE), "--class", label])
    assert result.exit_code == 0, result.output
    assert label in result.output


def test_invalid_profile_exits_with_error(runner, config_file, tmp_path):
    result = runner.invoke(cli, ["run", "--config", str(config_file), "--profile", "skylake",
                                 "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "profile" in result.output


def test_minimize_unknown_class(runner, config_file, tmp_path):
    out = tmp_path / "out"
    runner.invoke(cli, ["run", "--config", str(config_file), "--out", str(out)])
    result = runner.invoke(cli, ["minimize", str(out / REPORT_FILE), "--class", "MACHINE_CLEARS.COUNT"])
    assert result.exit_code == 1


def test_detect_reads_cpuinfo(runner, tmp_path):
    cpuinfo = tmp_path / "cpuinfo"
    cpuinfo.write_text("vendor_id\t: GenuineIntel\ncpu family\t: 6\nmodel\t\t: 165\n"
                       "model name\t: Intel(R) Core(TM) i7-10700 CPU @ 2.90GHz\n", encoding="utf-8")
    result = runner.invoke(cli, ["detect", "--cpuinfo", str(cpuinfo)])
    assert result.exit_code == 0, result.output
    assert "comet_lake" in result.output


def test_benchmark_writes_summary(runner, config_file, tmp_path):
    out = tmp_path / "bench"
    result = runner.invoke(cli, ["benchmark", "--config", str(config_file), "--presets", "b1g0,b04g0",
                                 "--seeds", "2", "--budget", "60", "--out", str(out)])
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "benchmark.json").read_text(encoding="utf-8"))
    assert summary["targets"] == ["MACHINE_CLEARS.SMC"]
    assert set(summary["presets"]) == {"b1g0", "b04g0"}


def test_benchmark_rejects_unknown_preset(runner, config_file):
    result = runner.invoke(cli, ["benchmark", "--config", str(config_file), "--presets", "b9g9"])
    assert result.exit_code == 2


def test_hardware_run_with_too_few_calibration_samples(runner, config_file, tmp_path, monkeypatch):
    async def ready(self):
        return True, ""

    monkeypatch.setattr("system.PlatformChecker.ready", ready)
    monkeypatch.setattr("fitness.hw_backend.detect_platform", lambda *args: "alder_lake")
    result = runner.invoke(cli, ["run", "--config", str(config_file), "--backend", "hw",
                                 "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "calibration samples" in result.output
    assert result.exception is None or isinstance(result.exception, SystemExit)
