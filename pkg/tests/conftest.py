"""
Shared fixtures.
"""

from pathlib import Path
import sys

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from embedscale.tracing import InMemoryStorage, init_tracer


@pytest.fixture(autouse=True)
def fresh_tracer():
    """Every test starts and ends with an in-memory global tracer."""
    init_tracer(storage=InMemoryStorage())
    yield
    init_tracer(storage=InMemoryStorage())
