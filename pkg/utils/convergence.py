# convergence.py
"""
收斂速度基準：在模擬預言機上以多個種子跑各 (β, γ) 組合，
比較第一次觸發目標等價類所需的評估次數
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PresetRuns:
    """單一組合在各種子上的結果；未命中以預算 + 1 計 (設限資料)"""
    preset: str
    seeds: Sequence[int]
    evaluations: Sequence[Optional[int]]
    budget: int

    @property
    def censored(self) -> np.ndarray:
        return np.array([self.budget + 1 if e is None else e for e in self.evaluations], dtype=float)

    @property
    def hits(self) -> int:
        return sum(e is not None for e in self.evaluations)

    @property
    def median(self) -> float:
        return float(np.median(self.censored))

    def median_interval(self, confidence: float = 0.95, resamples: int = 1000, seed: int = 0):
        """中位數的 bootstrap 信賴區間"""
        data = self.censored
        if len(data) < 2 or np.all(data == data[0]):
            return (float(data[0]), float(data[0]))
        result = stats.bootstrap((data,), np.median, confidence_level=confidence, n_resamples=resamples,
                                 rng=np.random.default_rng(seed), method="percentile")
        return (float(result.confidence_interval.low), float(result.confidence_interval.high))


def win_probability(faster: PresetRuns, slower: PresetRuns, resamples: int = 1000, seed: int = 0) -> float:
    """
    以 bootstrap 重抽樣估計 median(faster) < median(slower) 的機率

    Args:
        faster: 預期較快的組合
        slower: 比較對象
        resamples: 重抽樣次數
        seed: 重抽樣的亂數種子

    Returns:
        0 到 1 之間的比例
    """
    rng = np.random.default_rng(seed)
    a, b = faster.censored, slower.censored
    wins = 0
    for _ in range(resamples):
        sample_a = a[rng.integers(len(a), size=len(a))]
        sample_b = b[rng.integers(len(b), size=len(b))]
        if np.median(sample_a) < np.median(sample_b):
            wins += 1
    return wins / resamples


@dataclass
class BenchmarkResult:
    targets: List[str]
    runs: Dict[str, PresetRuns] = field(default_factory=dict)

    def medians(self) -> Dict[str, float]:
        return {name: runs.median for name, runs in self.runs.items()}

    def compare(self, faster: str, slower: str, resamples: int = 1000, seed: int = 0) -> float:
        return win_probability(self.runs[faster], self.runs[slower], resamples, seed)

    def to_dict(self) -> Dict[str, object]:
        return {
            "targets": self.targets,
            "presets": {
                name: {
                    "seeds": list(runs.seeds),
                    "evaluations": list(runs.evaluations),
                    "median": runs.median,
                    "hits": runs.hits,
                }
                for name, runs in self.runs.items()
            },
        }


async def evaluations_to_first_hit(cfg, targets: Iterable[str]) -> Optional[int]:
    """
    執行一次模擬活動，回傳第一筆目標類別觸發的評估編號 (從 1 起算)

    Args:
        cfg: CampaignConfig (backend 必須為 sim)
        targets: 目標事件名稱

    Returns:
        評估次數；預算內沒有命中時為 None
    """
    from system import CampaignSystem

    targets = list(targets)
    system = CampaignSystem(cfg, stream_log=False)

    def stop_on_hit(phase, iteration, swarm, subswarms):
        if system.log.first_fired(targets) is not None:
            system.evaluator.stop()

    system.on_iteration = stop_on_hit
    await system.search()
    hit = system.log.first_fired(targets)
    return None if hit is None else hit + 1


async def benchmark(base_cfg, presets: Sequence[str], seeds: Sequence[int], targets: Sequence[str]) -> BenchmarkResult:
    """
    依序執行組合 × 種子網格

    Args:
        base_cfg: 基礎 CampaignConfig，需設定 max_evaluations 作為每次的預算
        presets: 組合名稱
        seeds: 種子
        targets: 目標事件名稱

    Returns:
        BenchmarkResult
    """
    if base_cfg.backend != "sim":
        raise ValueError("benchmarks run on the simulated backend only")
    if not base_cfg.max_evaluations:
        raise ValueError("benchmarks need an evaluation budget (max_evaluations > 0)")
    result = BenchmarkResult(targets=list(targets))
    for preset in presets:
        evaluations = []
        for seed in seeds:
            cfg = base_cfg.model_copy(update={"seed": seed, "variant_preset": preset,
                                              "hp": base_cfg.hp.with_preset(preset)})
            evaluations.append(await evaluations_to_first_hit(cfg, targets))
        result.runs[preset] = PresetRuns(preset, tuple(seeds), tuple(evaluations), base_cfg.max_evaluations)
        logger.info("Preset %s: median %.1f evaluations (%d/%d hits)", preset,
                    result.runs[preset].median, result.runs[preset].hits, len(seeds))
    return result
