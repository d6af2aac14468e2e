"""
Trace storage backends.
"""

import json
import os
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional

from .span import Span

TRACE_DIR_ENV = "EMBEDSCALE_TRACE_DIR"


def _summarize(trace_id: str, spans: list[dict]) -> dict:
    root_span = next((s for s in spans if s["parent_span_id"] is None), spans[0])
    ended = [s["end_time"] for s in spans if s["end_time"]]
    return {
        "trace_id": trace_id,
        "name": root_span["name"],
        "start_time": min(s["start_time"] for s in spans),
        "end_time": max(ended) if ended else None,
        "total_duration_ms": root_span["duration_ms"] or 0,
        "span_count": len(spans),
        "status": "error" if any(s["status"] == "error" for s in spans) else "success",
    }


class TraceStorage(ABC):
    """Abstract interface for trace storage."""

    @abstractmethod
    def save_span(self, span: Span):
        """Save a finished span."""

    @abstractmethod
    def finalize_trace(self, trace_id: str):
        """Finalize a trace (all spans complete)."""

    @abstractmethod
    def get_trace(self, trace_id: str) -> dict:
        """Retrieve a complete trace."""

    @abstractmethod
    def list_traces(self, limit: int = 100) -> list[dict]:
        """List recent traces, newest first."""


class InMemoryStorage(TraceStorage):
    """Keeps spans in process memory; the default for library use."""

    def __init__(self):
        self._spans: dict[str, list[dict]] = {}
        self._index: list[dict] = []
        self._lock = threading.Lock()

    def save_span(self, span: Span):
        with self._lock:
            self._spans.setdefault(span.trace_id, []).append(span.to_dict())

    def finalize_trace(self, trace_id: str):
        with self._lock:
            spans = self._spans.get(trace_id, [])
            if not spans:
                return
            self._index = [t for t in self._index if t["trace_id"] != trace_id]
            self._index.insert(0, _summarize(trace_id, spans))

    def get_trace(self, trace_id: str) -> dict:
        with self._lock:
            spans = list(self._spans.get(trace_id, []))
        if not spans:
            return {"trace_id": trace_id, "spans": [], "error": "Trace not found"}
        return {"trace_id": trace_id, "spans": spans, "summary": _summarize(trace_id, spans)}

    def list_traces(self, limit: int = 100) -> list[dict]:
        with self._lock:
            return self._index[:limit]


class FileStorage(TraceStorage):
    """JSON file storage: one file per span plus an index of traces."""

    def __init__(self, base_dir: Optional[str] = None):
        default_dir = os.environ.get(TRACE_DIR_ENV) or os.path.expanduser("~/.embedscale/traces")
        self.base_dir = Path(base_dir or default_dir)
        self.base_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

        self.index_file = self.base_dir / "index.json"
        if not self.index_file.exists():
            self.index_file.write_text(json.dumps({"traces": []}))

    def _get_trace_dir(self, trace_id: str) -> Path:
        trace_dir = self.base_dir / trace_id
        trace_dir.mkdir(exist_ok=True)
        return trace_dir

    def _load_spans(self, trace_id: str) -> list[dict]:
        spans = []
        for span_file in sorted(self._get_trace_dir(trace_id).glob("*.json")):
            with open(span_file) as f:
                spans.append(json.load(f))
        spans.sort(key=lambda s: s["start_time"])
        return spans

    def save_span(self, span: Span):
        span_file = self._get_trace_dir(span.trace_id) / f"{span.span_id}.json"
        with open(span_file, "w") as f:
            json.dump(span.to_dict(), f, indent=2)

    def finalize_trace(self, trace_id: str):
        spans = self._load_spans(trace_id)
        if not spans:
            return
        summary = _summarize(trace_id, spans)

        with self._lock, open(self.index_file, "r+") as f:
            index = json.load(f)
            index["traces"] = [t for t in index["traces"] if t["trace_id"] != trace_id]
            index["traces"].insert(0, summary)
            index["traces"] = index["traces"][:1000]
            f.seek(0)
            f.truncate()
            json.dump(index, f, indent=2)

    def get_trace(self, trace_id: str) -> dict:
        spans = self._load_spans(trace_id)
        if not spans:
            return {"trace_id": trace_id, "spans": [], "error": "Trace not found"}
        return {"trace_id": trace_id, "spans": spans, "summary": _summarize(trace_id, spans)}

    def list_traces(self, limit: int = 100) -> list[dict]:
        with open(self.index_file) as f:
            return json.load(f)["traces"][:limit]
