"""
Full-sort top-k ranking evaluation (NDCG@k with binary relevance).
"""

from dataclasses import dataclass, asdict
import logging
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError, UndefinedMetricError
from .graph import NormAdj
from .models import ModelKind, Params, Ranker
from .tracing import SpanType, get_tracer, observe

_logger = logging.getLogger(__name__)

_USER_CHUNK = 256


@dataclass(frozen=True)
class MetricReport:
    ndcg_at_k: float
    k: int
    users_evaluated: int

    def to_csv_row(self) -> str:
        return f"{self.k},{self.ndcg_at_k!r},{self.users_evaluated}"

    def to_dict(self) -> dict:
        return asdict(self)


def _discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def ndcg_at_k(ranking: Sequence[int], relevant: Iterable[int], k: int) -> float:
    """DCG of the top-k over the ideal DCG, binary relevance."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    relevant = set(int(r) for r in relevant)
    if not relevant:
        raise UndefinedMetricError("NDCG is undefined for an empty relevant set")
    top = list(ranking)[:k]
    gains = np.array([1.0 if int(item) in relevant else 0.0 for item in top])
    discounts = _discounts(k)
    dcg = float(gains @ discounts[:gains.size])
    idcg = float(discounts[:min(k, len(relevant))].sum())
    return dcg / idcg


def rank_items(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k item indices per row, descending score, ties by ascending item index."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :k]


@observe(span_type=SpanType.EVALUATION, capture_result=False)
def evaluate(
    kind: ModelKind,
    params: Params,
    adj: Optional[NormAdj],
    masks: Sequence[Dataset],
    test: Dataset,
    k: int = 20,
    ranker: Optional[Ranker] = None,
) -> MetricReport:
    """
    Mean NDCG@k over users with at least one test positive. Items the user
    has in any of ``masks`` (train, valid) are ranked last.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    ranker = ranker or Ranker(kind, params, adj)
    users = np.flatnonzero([pos.size > 0 for pos in test.user_pos])
    if users.size == 0:
        _logger.warning("no users with test positives; NDCG reported as 0")
        return MetricReport(ndcg_at_k=0.0, k=k, users_evaluated=0)

    discounts = _discounts(k)
    values = np.empty(users.size)
    for start in range(0, users.size, _USER_CHUNK):
        chunk = users[start:start + _USER_CHUNK]
        scores = np.array(ranker.score_matrix(chunk), dtype=np.float64, copy=True)
        for row, u in enumerate(chunk):
            for mask in masks:
                scores[row, mask.user_pos[u]] = -np.inf
        top = rank_items(scores, k)
        for row, u in enumerate(chunk):
            relevant = test.user_pos[u]
            hits = np.isin(top[row], relevant)
            dcg = float(hits @ discounts[:top.shape[1]])
            idcg = float(discounts[:min(k, relevant.size)].sum())
            values[start + row] = dcg / idcg

    # accumulate in user-index order
    report = MetricReport(ndcg_at_k=float(np.sum(values) / users.size), k=k, users_evaluated=int(users.size))
    get_tracer().add_metric(f"ndcg@{k}", report.ndcg_at_k)
    _logger.debug("evaluated %d users: ndcg@%d=%.6f", report.users_evaluated, k, report.ndcg_at_k)
    return report
