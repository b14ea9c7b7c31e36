# config.py
"""
活動設定

優先順序：預設值 < 設定檔 (YAML/JSON) < 環境變數 (SPECSWARM_*) < 命令列參數
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from fitness.oracle_rules import PROFILE_IDS, DataEnvironment
from utils.catalog import REGISTER_BANK_SIZE
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

ROOT_DIR = Path(__file__).resolve().parent
DATA_DIR = ROOT_DIR / "data"
DEFAULT_CATALOG = DATA_DIR / "mini_catalog.xml"
DEFAULT_COUNTER_MAP = DATA_DIR / "counter_map.yaml"

# 混合階段的 (β, γ)
PRESETS: Dict[str, Tuple[float, float]] = {
    "b1g0": (1.0, 0.0),
    "b04g0": (0.4, 0.0),
    "b01g0": (0.1, 0.0),
    "b01g01": (0.1, 0.1),
    "b01g04": (0.1, 0.4),
    "b0g1": (0.0, 1.0),
}
PresetName = Literal["b1g0", "b04g0", "b01g0", "b01g01", "b01g04", "b0g1"]


class Hyperparameters(BaseModel):
    """粒子群超參數 (alpha 固定為 1，不作用於任何速度)"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(default=1.0, ge=0.0, le=1.0)
    beta: float = Field(default=0.1, ge=0.0, le=1.0)
    cognitive_beta: float = Field(default=0.4, ge=0.0, le=1.0)
    gamma: float = Field(default=0.4, ge=0.0, le=1.0)
    N: int = Field(default=50, ge=1)
    n: int = Field(default=10, ge=1)
    cognitive_iters: int = Field(default=200, ge=0)
    mixed_iters: int = Field(default=800, ge=0)
    n_min: int = Field(default=2, ge=1)

    @model_validator(mode="after")
    def _check_lengths(self) -> "Hyperparameters":
        if self.n < self.n_min:
            raise ValueError(f"n ({self.n}) must be >= n_min ({self.n_min})")
        return self

    def with_preset(self, name: str) -> "Hyperparameters":
        if name not in PRESETS:
            raise ConfigError(f"unknown variant preset: {name}", field="variant_preset")
        beta, gamma = PRESETS[name]
        # 認知階段的 β 維持 cognitive_beta，組合只作用於混合階段
        return self.model_copy(update={"beta": beta, "gamma": gamma})


class DataEnvironmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    denormal_registers: List[int] = Field(default_factory=lambda: list(range(8)))
    scratch_init: int = Field(default=0, ge=0, le=0xFF)

    @field_validator("denormal_registers")
    @classmethod
    def _check_registers(cls, value: List[int]) -> List[int]:
        for index in value:
            if not 0 <= index < REGISTER_BANK_SIZE:
                raise ValueError(f"register index {index} outside 0-{REGISTER_BANK_SIZE - 1}")
        return sorted(set(value))

    def build(self) -> DataEnvironment:
        return DataEnvironment(frozenset(self.denormal_registers), self.scratch_init)


class SimSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    noise_lambda: float = Field(default=0.0, ge=0.0)
    noise_seed: int = Field(default=0, ge=0)
    rule_overrides: Optional[Path] = None


class CalibrationSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    baseline_samples: int = Field(default=30, ge=0)
    threshold_sigma: float = Field(default=3.0, ge=0.0)


class HardwareSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    core: Optional[int] = Field(default=None, ge=0)
    counter_map: Path = DEFAULT_COUNTER_MAP
    timeout_seconds: float = Field(default=2.0, gt=0.0)
    assembler: str = "as"
    linker: str = "ld"
    perf: str = "perf"


class CampaignConfig(BaseModel):
    """一次搜尋活動的完整設定"""
    model_config = ConfigDict(extra="forbid")

    extensions: List[str] = Field(default_factory=lambda: ["SSE2", "AVX"], validate_default=True)
    catalog: Path = DEFAULT_CATALOG
    hp: Hyperparameters = Field(default_factory=Hyperparameters)
    backend: Literal["sim", "hw"] = "sim"
    profile: str = "alder_lake"
    data_env: DataEnvironmentConfig = Field(default_factory=DataEnvironmentConfig)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    reps: int = Field(default=100, ge=1)
    variant_preset: Optional[PresetName] = None
    output_dir: Path = Path("specswarm-out")
    max_evaluations: int = Field(default=0, ge=0)
    max_wall_seconds: Optional[float] = Field(default=None, gt=0.0)
    sim: SimSettings = Field(default_factory=SimSettings)
    calibration: CalibrationSettings = Field(default_factory=CalibrationSettings)
    hardware: HardwareSettings = Field(default_factory=HardwareSettings)

    @field_validator("extensions")
    @classmethod
    def _check_extensions(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("no extensions selected")
        return sorted(set(value))

    @field_validator("profile")
    @classmethod
    def _check_profile(cls, value: str) -> str:
        if value not in PROFILE_IDS:
            raise ValueError(f"unknown microarchitecture profile {value!r}, expected one of {', '.join(PROFILE_IDS)}")
        return value

    @model_validator(mode="after")
    def _apply_preset(self) -> "CampaignConfig":
        if self.variant_preset is not None:
            self.hp = self.hp.with_preset(self.variant_preset)
        return self

    @property
    def environment(self) -> DataEnvironment:
        return self.data_env.build()

    def echo(self) -> Dict[str, Any]:
        """寫入報告的設定回顯"""
        return self.model_dump(mode="json")


class EnvironmentSettings(BaseSettings):
    """從 SPECSWARM_* 環境變數讀取的覆寫值"""
    model_config = SettingsConfigDict(env_prefix="SPECSWARM_", extra="ignore")

    seed: Optional[int] = None
    backend: Optional[Literal["sim", "hw"]] = None
    profile: Optional[str] = None
    out: Optional[Path] = None
    core: Optional[int] = None

    def as_overrides(self) -> Dict[str, Any]:
        overrides: Dict[str, Any] = {}
        for key, target in (("seed", "seed"), ("backend", "backend"), ("profile", "profile"), ("out", "output_dir")):
            value = getattr(self, key)
            if value is not None:
                overrides[target] = value
        if self.core is not None:
            overrides["hardware"] = {"core": self.core}
        return overrides


def _field_name(error: Mapping[str, Any]) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "config"


def _raise_config_error(e: ValidationError, prefix: str = "") -> None:
    first = e.errors()[0]
    field = prefix + _field_name(first)
    raise ConfigError(f"invalid value for {field}: {first.get('msg')}", field=field) from e


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """讀取 YAML (或 .json) 設定檔"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}", field="config") from e
    try:
        document = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"malformed config file {path}: {e}", field="config") from e
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigError(f"config file {path} must contain a mapping", field="config")
    return document


def merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """巢狀字典合併，update 優先"""
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None,
                use_environment: bool = True) -> CampaignConfig:
    """
    依優先順序組合活動設定

    Args:
        path: 設定檔路徑 (可選)
        overrides: 命令列覆寫值 (巢狀字典)
        use_environment: 是否讀取 .env 與 SPECSWARM_* 環境變數

    Returns:
        驗證後的 CampaignConfig
    """
    data: Dict[str, Any] = read_config_file(path) if path else {}
    if use_environment:
        load_dotenv()
        try:
            environment = EnvironmentSettings()
        except ValidationError as e:
            _raise_config_error(e, prefix="SPECSWARM_")
        data = merge(data, environment.as_overrides())
    if overrides:
        data = merge(data, overrides)
    try:
        return CampaignConfig.model_validate(data)
    except ValidationError as e:
        _raise_config_error(e)
