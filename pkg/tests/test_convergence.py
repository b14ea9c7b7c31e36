import asyncio
import json

import pytest

from config import DATA_DIR, CampaignConfig, Hyperparameters, load_config
from utils.convergence import BenchmarkResult, PresetRuns, benchmark, evaluations_to_first_hit, win_probability

SMC = "MACHINE_CLEARS.SMC"
PRECISION = "ASSISTS.HARDWARE"


def test_misses_are_censored_above_budget():
    runs = PresetRuns("b1g0", (0, 1, 2), (10, None, 30), budget=100)
    assert runs.censored.tolist() == [10.0, 101.0, 30.0]
    assert runs.hits == 2
    assert runs.median == 30.0


def test_median_interval_contains_median():
    runs = PresetRuns("b04g0", tuple(range(10)), (5, 8, 9, 12, 13, 15, 20, 22, 40, None), budget=100)
    low, high = runs.median_interval(resamples=500)
    assert low <= runs.median <= high


def test_constant_runs_have_degenerate_interval():
    runs = PresetRuns("b0g1", (0, 1, 2), (None, None, None), budget=50)
    assert runs.median_interval() == (51.0, 51.0)


def test_win_probability_separates_presets():
    fast = PresetRuns("b04g0", tuple(range(8)), (3, 4, 5, 5, 6, 7, 8, 9), budget=100)
    slow = PresetRuns("b1g0", tuple(range(8)), (40, 45, 50, 55, None, None, 60, 70), budget=100)
    assert win_probability(fast, slow, resamples=400) == pytest.approx(1.0)
    assert win_probability(slow, fast, resamples=400) == pytest.approx(0.0)
    result = BenchmarkResult([SMC], {"b04g0": fast, "b1g0": slow})
    assert result.compare("b04g0", "b1g0", resamples=200) == pytest.approx(1.0)
    assert result.medians() == {"b04g0": 5.5, "b1g0": 57.5}


def base_config(tmp_path, **updates):
    data = dict(
        extensions=["SSE2", "AVX"],
        hp=Hyperparameters(N=8, n=5, cognitive_iters=5, mixed_iters=20),
        max_evaluations=400,
        calibration={"baseline_samples": 2},
        output_dir=tmp_path / "bench",
    )
    data.update(updates)
    return CampaignConfig.model_validate(data)


def test_first_hit_counts_evaluations(tmp_path):
    hit = asyncio.run(evaluations_to_first_hit(base_config(tmp_path, seed=3), [SMC]))
    assert hit is not None and 1 <= hit <= 400
    assert not (tmp_path / "bench").exists()


def test_unreachable_target_is_a_miss(tmp_path):
    cfg = base_config(tmp_path, profile="comet_lake", max_evaluations=40)
    assert asyncio.run(evaluations_to_first_hit(cfg, ["ASSISTS.SSE_AVX_MIX"])) is None


def test_benchmark_grid(tmp_path):
    cfg = base_config(tmp_path)
    result = asyncio.run(benchmark(cfg, ["b1g0", "b04g0"], [0, 1, 2], [SMC]))
    assert list(result.runs) == ["b1g0", "b04g0"]
    for runs in result.runs.values():
        assert runs.seeds == (0, 1, 2)
        assert len(runs.evaluations) == 3
    again = asyncio.run(benchmark(cfg, ["b04g0"], [0, 1, 2], [SMC]))
    assert again.runs["b04g0"].evaluations == result.runs["b04g0"].evaluations
    data = json.loads(json.dumps(result.to_dict()))
    assert data["presets"]["b1g0"]["seeds"] == [0, 1, 2]


@pytest.mark.parametrize("updates, message", [
    ({"max_evaluations": 0}, "evaluation budget"),
    ({"backend": "hw"}, "simulated backend"),
])
def test_benchmark_preconditions(tmp_path, updates, message):
    with pytest.raises(ValueError, match=message):
        asyncio.run(benchmark(base_config(tmp_path, **updates), ["b1g0"], [0], [SMC]))


def test_gentle_mixed_phase_finds_precision_intermix_sooner():
    cfg = load_config(DATA_DIR / "benchmark.precision.yaml", use_environment=False)
    result = asyncio.run(benchmark(cfg, ["b01g04", "b1g0"], list(range(25)), [PRECISION]))
    fast, slow = result.runs["b01g04"], result.runs["b1g0"]
    assert fast.hits >= slow.hits
    assert fast.median < slow.median
    assert result.compare("b01g04", "b1g0", resamples=1000) >= 0.7
