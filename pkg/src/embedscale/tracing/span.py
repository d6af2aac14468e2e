"""
Span data structures for run tracing.
"""

from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Optional
import uuid


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class SpanType(str, Enum):
    """Kinds of traced experiment steps."""
    SWEEP = "sweep"
    SWEEP_POINT = "sweep_point"
    TRAINING = "training"
    EVALUATION = "evaluation"
    THEORY_CHECK = "theory_check"
    DATA = "data"


class SpanStatus(str, Enum):
    """Execution status of a span."""
    SUCCESS = "success"
    ERROR = "error"
    RUNNING = "running"


@dataclass
class MetricRecord:
    """A scalar measurement taken inside a span."""
    name: str
    value: float
    step: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Span:
    """A single traced step of an experiment."""
    span_id: str = field(default_factory=lambda: f"span_{uuid.uuid4().hex[:12]}")
    trace_id: Optional[str] = None
    parent_span_id: Optional[str] = None
    name: str = ""
    span_type: SpanType = SpanType.TRAINING
    status: SpanStatus = SpanStatus.RUNNING

    # Timing
    start_time: datetime = field(default_factory=_utcnow)
    end_time: Optional[datetime] = None
    duration_ms: Optional[float] = None

    # Data
    inputs: dict[str, Any] = field(default_factory=dict)
    outputs: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)
    metrics: list[MetricRecord] = field(default_factory=list)

    # Error tracking
    error: Optional[str] = None
    error_type: Optional[str] = None

    def complete(self, outputs: Optional[dict] = None, error: Optional[BaseException] = None):
        """Mark span as complete."""
        self.end_time = _utcnow()
        self.duration_ms = (self.end_time - self.start_time).total_seconds() * 1000

        if error:
            self.status = SpanStatus.ERROR
            self.error = str(error)
            self.error_type = type(error).__name__
        else:
            self.status = SpanStatus.SUCCESS

        if outputs:
            self.outputs = outputs

    def add_metric(self, name: str, value: float, step: Optional[int] = None):
        """Attach a scalar measurement to this span."""
        self.metrics.append(MetricRecord(name=name, value=float(value), step=step))

    def metric_values(self, name: str) -> list[float]:
        return [m.value for m in self.metrics if m.name == name]

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            "span_id": self.span_id,
            "trace_id": self.trace_id,
            "parent_span_id": self.parent_span_id,
            "name": self.name,
            "span_type": self.span_type.value,
            "status": self.status.value,
            "start_time": self.start_time.isoformat(),
            "end_time": self.end_time.isoformat() if self.end_time else None,
            "duration_ms": self.duration_ms,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "metadata": self.metadata,
            "metrics": [m.to_dict() for m in self.metrics],
            "error": self.error,
            "error_type": self.error_type,
        }
