"""Run tracing: spans for training, evaluation, sweep points and theory checks."""

from .tracer import (
    Tracer,
    observe,
    trace,
    init_tracer,
    get_tracer,
    get_current_trace,
    get_current_span,
)
from .storage import TraceStorage, FileStorage, InMemoryStorage
from .span import Span, SpanType, SpanStatus, MetricRecord

__all__ = [
    "Tracer",
    "observe",
    "trace",
    "init_tracer",
    "get_tracer",
    "get_current_trace",
    "get_current_span",
    "TraceStorage",
    "FileStorage",
    "InMemoryStorage",
    "Span",
    "SpanType",
    "SpanStatus",
    "MetricRecord",
]
