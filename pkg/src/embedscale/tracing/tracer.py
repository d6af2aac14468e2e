"""
Core tracing functionality.
"""

import contextvars
import functools
import inspect
import threading
from typing import Any, Callable, Optional
import uuid

import numpy as np

from .span import Span, SpanType
from .storage import TraceStorage, InMemoryStorage


_current_trace_id: contextvars.ContextVar[Optional[str]] = contextvars.ContextVar(
    "current_trace_id", default=None
)
_current_span: contextvars.ContextVar[Optional[Span]] = contextvars.ContextVar(
    "current_span", default=None
)
_root_span: contextvars.ContextVar[Optional[Span]] = contextvars.ContextVar(
    "root_span", default=None
)
_auto_trace: contextvars.ContextVar[bool] = contextvars.ContextVar("auto_trace", default=False)


class Tracer:
    """Main tracing interface."""

    def __init__(self, storage: Optional[TraceStorage] = None, run_id: Optional[str] = None):
        self.storage = storage or InMemoryStorage()
        self.run_id = run_id
        self._parents: dict[str, Optional[Span]] = {}
        self._lock = threading.Lock()

    def start_trace(self, name: str = "root", metadata: Optional[dict] = None) -> str:
        """Start a new trace with a root span."""
        trace_id = f"tr_{uuid.uuid4().hex[:12]}"
        _current_trace_id.set(trace_id)

        root_span = Span(
            trace_id=trace_id,
            name=name,
            span_type=SpanType.SWEEP,
            metadata={"run_id": self.run_id, **(metadata or {})},
        )
        _root_span.set(root_span)
        _current_span.set(root_span)
        _auto_trace.set(False)
        return trace_id

    def start_span(
        self,
        name: str,
        span_type: SpanType = SpanType.TRAINING,
        inputs: Optional[dict] = None,
        metadata: Optional[dict] = None,
    ) -> Span:
        """Start a new span nested under the current one."""
        trace_id = _current_trace_id.get()
        if not trace_id:
            trace_id = self.start_trace(name="auto_trace")
            _auto_trace.set(True)

        parent_span = _current_span.get()
        span = Span(
            trace_id=trace_id,
            parent_span_id=parent_span.span_id if parent_span else None,
            name=name,
            span_type=span_type,
            inputs=inputs or {},
            metadata=metadata or {},
        )
        with self._lock:
            self._parents[span.span_id] = parent_span
        _current_span.set(span)
        return span

    def end_span(self, span: Span, outputs: Optional[dict] = None, error: Optional[BaseException] = None):
        """End a span and make its parent current again."""
        span.complete(outputs=outputs, error=error)
        self.storage.save_span(span)

        with self._lock:
            parent = self._parents.pop(span.span_id, None)
        _current_span.set(parent)

        if _auto_trace.get() and parent is not None and parent is _root_span.get():
            self.end_trace(error=error)

    def end_trace(self, error: Optional[BaseException] = None):
        """End the current trace, saving its root span."""
        trace_id = _current_trace_id.get()
        if not trace_id:
            return
        root = _root_span.get()
        if root is not None and root.end_time is None:
            root.complete(error=error)
            self.storage.save_span(root)
        self.storage.finalize_trace(trace_id)
        _current_trace_id.set(None)
        _current_span.set(None)
        _root_span.set(None)
        _auto_trace.set(False)

    def add_metric(self, name: str, value: float, step: Optional[int] = None):
        """Record a scalar measurement on the current span."""
        span = _current_span.get()
        if span:
            span.add_metric(name, value, step)


_global_tracer: Optional[Tracer] = None


def init_tracer(storage: Optional[TraceStorage] = None, run_id: Optional[str] = None) -> Tracer:
    """Initialize the global tracer."""
    global _global_tracer
    _global_tracer = Tracer(storage=storage, run_id=run_id)
    return _global_tracer


def get_tracer() -> Tracer:
    """Get the global tracer, initializing if needed."""
    global _global_tracer
    if _global_tracer is None:
        _global_tracer = Tracer()
    return _global_tracer


def get_current_trace() -> Optional[str]:
    return _current_trace_id.get()


def get_current_span() -> Optional[Span]:
    return _current_span.get()


def observe(
    name: Optional[str] = None,
    span_type: SpanType = SpanType.TRAINING,
    capture_args: bool = True,
    capture_result: bool = True,
):
    """
    Decorator to automatically trace a function.

    Usage:
        @observe(span_type=SpanType.EVALUATION, capture_result=False)
        def evaluate(kind, params, adj, masks, test, k):
            ...
    """
    def decorator(func: Callable) -> Callable:
        func_name = name or func.__name__
        sig = inspect.signature(func)

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            tracer = get_tracer()

            inputs = {}
            if capture_args:
                bound = sig.bind(*args, **kwargs)
                bound.apply_defaults()
                inputs = {k: _serialize_value(v) for k, v in bound.arguments.items()}

            span = tracer.start_span(name=func_name, span_type=span_type, inputs=inputs)
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                tracer.end_span(span, error=e)
                raise

            outputs = {"result": _serialize_value(result)} if capture_result else {}
            tracer.end_span(span, outputs=outputs)
            return result

        return wrapper
    return decorator


def trace(name: str = "trace", metadata: Optional[dict] = None):
    """
    Context manager for manual tracing.

    Usage:
        with trace("ml100k_bpr_sweep"):
            run_sweep(cfg)
    """
    class TraceContext:
        def __enter__(self):
            self.tracer = get_tracer()
            self.trace_id = self.tracer.start_trace(name, metadata=metadata)
            return self.trace_id

        def __exit__(self, exc_type, exc_val, exc_tb):
            self.tracer.end_trace(error=exc_val)

    return TraceContext()


def _serialize_value(value: Any) -> Any:
    """Serialize a value for storage."""
    if value is None or isinstance(value, (int, float, str, bool)):
        return value

    if isinstance(value, np.generic):
        return value.item()

    if isinstance(value, np.ndarray):
        return {"_type": "ndarray", "shape": list(value.shape), "dtype": str(value.dtype)}

    if isinstance(value, (list, tuple)):
        return [_serialize_value(v) for v in value]

    if isinstance(value, dict):
        return {str(k): _serialize_value(v) for k, v in value.items()}

    if hasattr(value, "to_dict"):
        return _serialize_value(value.to_dict())

    return {
        "_type": type(value).__name__,
        "_repr": repr(value)[:200],
    }
