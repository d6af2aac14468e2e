"""
Losses (BPR, small-loss BPR drop, InfoNCE, SGL composite) and their exact
analytic gradients with respect to every model parameter.
"""

from dataclasses import dataclass
from enum import Enum
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ConfigError, DegenerateEmbeddingError, NumericError, ShapeError
from .graph import GraphView, NormAdj, propagate
from .models import ModelKind, ModelType, Params, neumf_backward, neumf_forward

_logger = logging.getLogger(__name__)

GAMMA_EPS = 1e-10


@dataclass(frozen=True)
class DropConfig:
    """
    Small-loss sample selection.

    ``save_ratio`` keeps max(floor(N * save_ratio), 1) samples per batch,
    the lowest losses when ``get_low``. Setting ``threshold`` switches to the
    fixed-threshold mode: samples whose loss is <= threshold (or >= when not
    ``get_low``) are kept, falling back to the single extreme sample.
    """
    save_ratio: float = 0.9
    get_low: bool = True
    gamma_eps: float = GAMMA_EPS
    threshold: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.save_ratio <= 1.0:
            raise ConfigError(f"save_ratio must lie in (0, 1], got {self.save_ratio}")


class ObjectiveType(str, Enum):
    BPR = "bpr"
    BPR_DROP = "bpr_drop"
    SGL = "sgl"


@dataclass(frozen=True)
class ObjectiveConfig:
    """
    Training objective. ``sgl`` is the composite BPR + gamma * InfoNCE and
    needs an SGL model; its ranking term uses the drop loss when ``drop`` is set.
    """
    objective: ObjectiveType = ObjectiveType.BPR
    drop: Optional[DropConfig] = None

    def __post_init__(self):
        object.__setattr__(self, "objective", ObjectiveType(self.objective))
        if self.objective is ObjectiveType.BPR_DROP and self.drop is None:
            raise ConfigError("bpr_drop objective needs a DropConfig")

    @property
    def ranking_drop(self) -> Optional[DropConfig]:
        return None if self.objective is ObjectiveType.BPR else self.drop

    def to_dict(self) -> dict:
        drop = self.drop
        return {
            "objective": self.objective.value,
            "save_ratio": drop.save_ratio if drop else None,
            "get_low": drop.get_low if drop else None,
        }


@dataclass(frozen=True, eq=False)
class Batch:
    """Training triples (u, i+, j-)."""
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    @classmethod
    def from_triples(cls, triples: Sequence[tuple[int, int, int]]) -> "Batch":
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def triples(self) -> list[tuple[int, int, int]]:
        return list(zip(self.users.tolist(), self.pos_items.tolist(), self.neg_items.tolist()))


def _check_pair(pos_scores: np.ndarray, neg_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if pos.shape != neg.shape:
        raise ShapeError(f"score vectors differ in length: {pos.size} vs {neg.size}")
    if pos.size == 0:
        raise ShapeError("score vectors must be non-empty")
    return pos, neg


def per_sample_bpr(pos_scores, neg_scores, gamma_eps: float = GAMMA_EPS) -> np.ndarray:
    """-ln(gamma_eps + sigmoid(pos - neg)) per sample."""
    pos, neg = _check_pair(pos_scores, neg_scores)
    return -np.log(gamma_eps + expit(pos - neg))


def _per_sample_slope(diff: np.ndarray, gamma_eps: float) -> np.ndarray:
    # d/dx of -ln(eps + sigmoid(x))
    sig = expit(diff)
    return -sig * (1.0 - sig) / (gamma_eps + sig)


def drop_selection(losses: np.ndarray, cfg: DropConfig) -> np.ndarray:
    """Indices of the kept samples, ties broken by ascending original index."""
    index = np.arange(losses.size)
    order = np.lexsort((index, losses if cfg.get_low else -losses))
    if cfg.threshold is not None:
        kept = losses <= cfg.threshold if cfg.get_low else losses >= cfg.threshold
        selected = np.flatnonzero(kept)
        return selected if selected.size else order[:1]
    k = max(int(losses.size * cfg.save_ratio), 1)
    return np.sort(order[:k])


def bpr_loss(pos_scores, neg_scores) -> float:
    return float(per_sample_bpr(pos_scores, neg_scores).mean())


def bpr_drop_loss(pos_scores, neg_scores, cfg: DropConfig) -> float:
    losses = per_sample_bpr(pos_scores, neg_scores, cfg.gamma_eps)
    return float(losses[drop_selection(losses, cfg)].mean())


def _ranking_weights(pos, neg, drop: Optional[DropConfig]) -> tuple[float, np.ndarray]:
    """Loss value and dLoss/dpos per sample (dLoss/dneg is its negation)."""
    gamma_eps = drop.gamma_eps if drop else GAMMA_EPS
    diff = pos - neg
    losses = -np.log(gamma_eps + expit(diff))
    slope = _per_sample_slope(diff, gamma_eps)
    if drop is None:
        return float(losses.mean()), slope * (1.0 / losses.size)
    kept = drop_selection(losses, drop)
    weights = np.zeros_like(losses)
    weights[kept] = 1.0 / kept.size
    return float(losses[kept].mean()), slope * weights


def _normalize_rows(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError(f"{int(np.sum(norms == 0.0))} zero-norm rows in contrastive input")
    return Z / norms[:, None], norms


def _contrastive_with_grad(Zp: np.ndarray, Zpp: np.ndarray, tau: float):
    if Zp.shape != Zpp.shape or Zp.ndim != 2:
        raise ShapeError(f"view shapes differ: {Zp.shape} vs {Zpp.shape}")
    if Zp.shape[0] == 0:
        raise ShapeError("contrastive batch must be non-empty")
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    A, a_norm = _normalize_rows(Zp)
    B, b_norm = _normalize_rows(Zpp)
    logits = (A @ B.T) / tau
    lse = logsumexp(logits, axis=1)
    size = logits.shape[0]
    loss = float(np.mean(lse - np.diag(logits)))

    soft = np.exp(logits - lse[:, None])
    d_logits = (soft - np.eye(size)) / size
    d_A = d_logits @ B / tau
    d_B = d_logits.T @ A / tau
    # through z / |z|
    d_Zp = (d_A - A * np.sum(A * d_A, axis=1, keepdims=True)) / a_norm[:, None]
    d_Zpp = (d_B - B * np.sum(B * d_B, axis=1, keepdims=True)) / b_norm[:, None]
    return loss, d_Zp, d_Zpp


def contrastive_loss(Zp: np.ndarray, Zpp: np.ndarray, tau: float) -> float:
    """In-batch InfoNCE over cosine similarity, positives on the diagonal."""
    loss, _, _ = _contrastive_with_grad(np.asarray(Zp, dtype=np.float64),
                                        np.asarray(Zpp, dtype=np.float64), tau)
    return loss


def _contrastive_nodes(kind: ModelKind, batch: Batch, m: int) -> list[np.ndarray]:
    groups = [np.unique(batch.users)]
    if kind.item_term:
        groups.append(np.unique(batch.pos_items) + m)
    return groups


def _check_views(kind: ModelKind, views: Optional[Sequence[GraphView]]):
    if kind.model_type is not ModelType.SGL:
        raise ConfigError("the sgl objective needs an SGL model kind")
    if views is None or len(views) != 2:
        raise ConfigError("the sgl objective needs exactly two augmented views")


def compute_gradients(
    kind: ModelKind,
    params: Params,
    adj: Optional[NormAdj],
    batch: Batch,
    objective: ObjectiveConfig = ObjectiveConfig(),
    views: Optional[Sequence[GraphView]] = None,
) -> tuple[float, Params]:
    """
    Loss and exact gradient for one batch.

    Graph variants differentiate through the linear propagation, whose
    operator is symmetric and therefore its own adjoint.
    """
    if len(batch) == 0:
        raise ConfigError("cannot compute gradients for an empty batch")
    composite = objective.objective is ObjectiveType.SGL
    if composite:
        _check_views(kind, views)

    grads = params.zeros_like()
    m = params.m
    u, i, j = batch.users, batch.pos_items, batch.neg_items

    if kind.model_type is ModelType.NEUMF:
        pu = params.P[u]
        pos, pos_cache = neumf_forward(params, pu, params.Q[i])
        neg, neg_cache = neumf_forward(params, pu, params.Q[j])
        loss, coef = _ranking_weights(pos, neg, objective.ranking_drop)
        for cache, upstream, items in ((pos_cache, coef, i), (neg_cache, -coef, j)):
            d_pu, d_qi, d_w, d_b, d_f = neumf_backward(params, cache, upstream)
            np.add.at(grads.P, u, d_pu)
            np.add.at(grads.Q, items, d_qi)
            for l in range(len(d_w)):
                grads.weights[l] += d_w[l]
                grads.biases[l] += d_b[l]
            grads.fusion += d_f
        _check_finite(loss, grads)
        return loss, grads

    if kind.is_graph:
        if adj is None:
            raise ConfigError(f"{kind.model_type.value} training needs a normalized adjacency")
        E0 = params.embeddings()
        E = propagate(adj, E0, kind.n_layers)
        U, I = E[:m], E[m:]
    else:
        U, I = params.P, params.Q

    pos = np.sum(U[u] * I[i], axis=1)
    neg = np.sum(U[u] * I[j], axis=1)
    loss, coef = _ranking_weights(pos, neg, objective.ranking_drop)

    d_U = np.zeros_like(U)
    d_I = np.zeros_like(I)
    np.add.at(d_U, u, coef[:, None] * (I[i] - I[j]))
    np.add.at(d_I, i, coef[:, None] * U[u])
    np.add.at(d_I, j, -coef[:, None] * U[u])

    if not kind.is_graph:
        grads.P, grads.Q = d_U, d_I
        _check_finite(loss, grads)
        return loss, grads

    d_E0 = propagate(adj, np.vstack([d_U, d_I]), kind.n_layers)

    if composite and kind.gamma > 0.0:
        view_a, view_b = views
        Za = view_a.embed(E0, kind.n_layers)
        Zb = view_b.embed(E0, kind.n_layers)
        d_Za = np.zeros_like(Za)
        d_Zb = np.zeros_like(Zb)
        cont = 0.0
        for nodes in _contrastive_nodes(kind, batch, m):
            term, g_a, g_b = _contrastive_with_grad(Za[nodes], Zb[nodes], kind.tau)
            cont += term
            d_Za[nodes] += kind.gamma * g_a
            d_Zb[nodes] += kind.gamma * g_b
        loss += kind.gamma * cont
        d_E0 += view_a.backprop(d_Za, kind.n_layers) + view_b.backprop(d_Zb, kind.n_layers)

    grads.P, grads.Q = d_E0[:m], d_E0[m:]
    _check_finite(loss, grads)
    return loss, grads


def _check_finite(loss: float, grads: Params):
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    for name, array in grads.named_arrays():
        if not np.all(np.isfinite(array)):
            bad = int(np.sum(~np.isfinite(array)))
            raise NumericError(f"gradient {name} has {bad} non-finite entries")


def batch_loss(
    kind: ModelKind,
    params: Params,
    adj: Optional[NormAdj],
    batch: Batch,
    objective: ObjectiveConfig = ObjectiveConfig(),
    views: Optional[Sequence[GraphView]] = None,
) -> float:
    """Forward-only loss, evaluated independently of the gradient path."""
    u, i, j = batch.users, batch.pos_items, batch.neg_items
    if kind.model_type is ModelType.NEUMF:
        pos, _ = neumf_forward(params, params.P[u], params.Q[i])
        neg, _ = neumf_forward(params, params.P[u], params.Q[j])
    else:
        if kind.is_graph:
            E = propagate(adj, params.embeddings(), kind.n_layers)
            U, I = E[:params.m], E[params.m:]
        else:
            U, I = params.P, params.Q
        pos = np.sum(U[u] * I[i], axis=1)
        neg = np.sum(U[u] * I[j], axis=1)

    drop = objective.ranking_drop
    ranking = bpr_drop_loss(pos, neg, drop) if drop else bpr_loss(pos, neg)
    if objective.objective is not ObjectiveType.SGL:
        return ranking
    _check_views(kind, views)
    return ranking + kind.gamma * _view_contrast(kind, params, batch, views)


def _view_contrast(kind: ModelKind, params: Params, batch: Batch, views: Sequence[GraphView]) -> float:
    E0 = params.embeddings()
    Za = views[0].embed(E0, kind.n_layers)
    Zb = views[1].embed(E0, kind.n_layers)
    return sum(contrastive_loss(Za[nodes], Zb[nodes], kind.tau)
               for nodes in _contrastive_nodes(kind, batch, params.m))


def sgl_total_loss(
    batch: Batch,
    params: Params,
    adj: NormAdj,
    views: Sequence[GraphView],
    kind: ModelKind,
    drop: Optional[DropConfig] = None,
) -> float:
    """L_BPR on the main graph + gamma * (user InfoNCE + item InfoNCE) across the two views."""
    objective = ObjectiveConfig(ObjectiveType.SGL, drop=drop)
    if adj.size != params.m + params.n:
        raise ShapeError(f"adjacency has {adj.size} nodes, params have {params.m + params.n}")
    return batch_loss(kind, params, adj, batch, objective, views)
