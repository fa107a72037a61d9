# core/telemetry.py
from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s [%(threadName)s] %(message)s"


def configure_logging(level: Union[int, str] = logging.INFO) -> None:
    """Root logging setup shared by the CLI and the Streamlit app."""
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger("pi_a3c").setLevel(level)


class MetricsWriter:
    """Append-only JSON Lines sink; safe to share between worker threads."""

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = self.path.open("a", encoding="utf-8")

    def write(self, record: Dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def read_records(path: Union[str, Path], kind: Optional[str] = None) -> List[Dict[str, Any]]:
    return list(iter_records(path, kind))


def iter_records(path: Union[str, Path], kind: Optional[str] = None) -> Iterator[Dict[str, Any]]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if kind is None or rec.get("record") == kind:
                yield rec
