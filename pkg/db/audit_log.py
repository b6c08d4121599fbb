import threading
from pathlib import Path
from typing import Iterable, List, Union

from toolkit.toolkit_models import ExtractionRecord
from utils.logger import get_logger
from utils.serialization import dumps

logger = get_logger(__name__)


class AuditLog:
    """Append-only log of extraction records, safe to share between threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: List[ExtractionRecord] = []

    def append(self, record: ExtractionRecord):
        with self._lock:
            self._records.append(record)

    def extend(self, records: Iterable[ExtractionRecord]):
        with self._lock:
            self._records.extend(records)

    def records(self) -> List[ExtractionRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def total_elapsed(self) -> float:
        return float(sum(r.elapsed_s for r in self.records()))

    def to_lines(self, include_wall: bool = False) -> bytes:
        return b"".join(dumps(r.to_dict(include_wall)) + b"\n" for r in self.records())

    def write_jsonl(self, path: Union[str, Path], include_wall: bool = False) -> int:
        """Append the records as JSON lines; returns the number written."""
        records = self.records()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "ab") as f:
            for r in records:
                f.write(dumps(r.to_dict(include_wall)) + b"\n")
        logger.info(f"Wrote {len(records)} extraction records to {path}")
        return len(records)
