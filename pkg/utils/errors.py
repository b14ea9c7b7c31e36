# errors.py
from typing import Optional


class SpecSwarmError(Exception):
    """所有 specswarm 錯誤的基礎類別"""


class CatalogError(SpecSwarmError):
    """指令目錄讀取失敗 (檔案不存在、格式錯誤、過濾後為空)"""


class PoolError(SpecSwarmError):
    """指令池建構失敗"""

    def __init__(self, message: str, tag: Optional[str] = None):
        super().__init__(message)
        self.tag = tag


class DecodeError(SpecSwarmError):
    """位置編碼無法解碼"""


class BackendUnavailableError(SpecSwarmError):
    """適應度後端無法使用"""


class KernelEmissionError(SpecSwarmError):
    """無法為序列產生組合語言核心"""


class ConfigError(SpecSwarmError):
    """設定檔或命令列參數無效"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class MinimizationError(SpecSwarmError):
    """最小化的輸入序列沒有觸發目標等價類"""


class ReportError(SpecSwarmError):
    """報告無法寫入或讀回"""


class CalibrationError(SpecSwarmError):
    """中性核心基線校正的樣本數不足"""
