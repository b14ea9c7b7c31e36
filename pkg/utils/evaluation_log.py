#evaluation_log.py
import json
import logging
from pathlib import Path
from typing import IO, Any, Dict, Iterable, List, Optional, Union

logger = logging.getLogger(__name__)


def format_record(record) -> Dict[str, Any]:
    """
    將評估紀錄轉成記錄檔的一行 (不含時間戳，相同種子產生相同內容)

    Args:
        record: swarm.phases.EvaluationRecord

    Returns:
        可 JSON 序列化的字典
    """
    return {
        "eval": record.eval,
        "phase": record.phase,
        "iteration": record.iteration,
        "particle": record.particle,
        "codes": [[code.value, code.width] for code in record.codes],
        "fired": [c.label for c in record.observation.fired_classes],
        "class": record.cls.label if record.cls else None,
        "fitness": record.fitness,
        "invalid": record.observation.invalid,
    }


def dumps(line: Dict[str, Any]) -> str:
    return json.dumps(line, sort_keys=True, separators=(",", ":"))


class EvaluationLog:
    """活動的逐次評估記錄，保留在記憶體並可同步串流到 JSONL 檔"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        """
        初始化記錄

        Args:
            path: 串流寫入的 JSONL 路徑，None 表示只保留在記憶體
        """
        self.records: List[Dict[str, Any]] = []
        self.path = Path(path) if path else None
        self._stream: Optional[IO[str]] = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._stream = self.path.open("w", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record) -> Dict[str, Any]:
        line = format_record(record)
        self.records.append(line)
        if self._stream is not None:
            self._stream.write(dumps(line) + "\n")
            self._stream.flush()
        return line

    def first_hits(self) -> Dict[str, int]:
        """每個等價類第一筆分類為該類的評估編號"""
        hits: Dict[str, int] = {}
        for line in self.records:
            if line["class"] is not None and line["class"] not in hits:
                hits[line["class"]] = line["eval"]
        return hits

    def first_fired(self, labels: Iterable[str]) -> Optional[int]:
        """第一筆任一目標類別觸發的評估編號"""
        targets = set(labels)
        for line in self.records:
            if targets.intersection(line["fired"]):
                return line["eval"]
        return None

    def search(self, label: str) -> List[Dict[str, Any]]:
        return [line for line in self.records if line["class"] == label]

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8") as f:
            for line in self.records:
                f.write(dumps(line) + "\n")
        return path

    def close(self):
        if self._stream is not None:
            self._stream.close()
            self._stream = None

    @staticmethod
    def read(path: Union[str, Path]) -> List[Dict[str, Any]]:
        with Path(path).open(encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
