import numpy as np
import pytest

from config import DEFAULT_CATALOG, CampaignConfig, Hyperparameters
from fitness.oracle_rules import DataEnvironment
from utils.catalog import InstructionInstance, build_pool, load_catalog

INERT = ("ADD", "MOV", "XOR")


@pytest.fixture(scope="session")
def catalog():
    return load_catalog(DEFAULT_CATALOG)


@pytest.fixture(scope="session")
def pool(catalog):
    return build_pool(catalog, ["SSE", "SSE2", "AVX"])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make(catalog):
    """依助記符與運算元建立指令實例"""
    def _make(mnemonic, *operands, extension=None):
        return InstructionInstance(catalog.find(mnemonic, extension), tuple(operands))
    return _make


@pytest.fixture
def inert(make):
    """不觸發任何規則的一般暫存器指令 (不寫入 rsp/r15)"""
    def _inert(rng):
        mnemonic = INERT[int(rng.integers(len(INERT)))]
        dst = int(rng.choice([0, 1, 2, 3, 6, 7, 8, 9]))
        src = 0x01 if mnemonic == "MOV" else int(rng.integers(16))
        return make(mnemonic, dst, src)
    return _inert


@pytest.fixture
def denormal_env():
    return DataEnvironment(frozenset(range(8)))


@pytest.fixture
def small_cfg(tmp_path):
    """小型模擬活動，數秒內完成"""
    def _cfg(**updates):
        data = dict(
            extensions=["SSE2", "AVX"],
            hp=Hyperparameters(N=8, n=5, cognitive_iters=4, mixed_iters=6),
            seed=7,
            reps=4,
            output_dir=tmp_path / "out",
            calibration={"baseline_samples": 3},
        )
        data.update(updates)
        return CampaignConfig.model_validate(data)
    return _cfg
