"""
Mini-batch Adam training with early stopping on validation NDCG@k.
"""

from dataclasses import asdict, dataclass, field
import logging
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from .data import Dataset, sample_negatives
from .errors import ConfigError, EmptyDatasetError, NumericError
from .evaluator import evaluate
from .graph import AugmentSpec, GraphView, NormAdj, build_normalized_adjacency, make_view
from .models import ModelKind, Params, Ranker, init_params
from .objectives import Batch, ObjectiveConfig, ObjectiveType, compute_gradients
from .tracing import SpanType, get_tracer, observe

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """
    Training protocol. ``lr=0`` is accepted as a frozen run (parameters never
    move), which is useful for exercising early stopping.
    """
    dim: int = 64
    lr: float = 0.001
    batch_size: int = 2048
    max_epochs: int = 300
    patience: int = 10
    seed: int = 0
    k_eval: int = 20
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    views_per_batch: bool = False

    def __post_init__(self):
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ConfigError(f"learning rate must be finite and >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.dim < 1:
            raise ConfigError(f"embedding dimension must be >= 1, got {self.dim}")
        if self.k_eval < 1:
            raise ConfigError(f"k_eval must be >= 1, got {self.k_eval}")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "k_eval": self.k_eval,
            **self.objective.to_dict(),
        }


@dataclass
class AdamState:
    m: Params
    v: Params
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: Params) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like())


def adam_step(params: Params, grads: Params, state: AdamState, lr: float,
              inplace: bool = False) -> tuple[Params, AdamState]:
    """Bias-corrected Adam update; returns new (params, state) unless ``inplace``."""
    for name, g in grads.named_arrays():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name} at step {state.t + 1}")

    if not inplace:
        params, state = params.copy(), AdamState(
            m=state.m.copy(), v=state.v.copy(), t=state.t,
            beta1=state.beta1, beta2=state.beta2, eps=state.eps,
        )

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for theta, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    valid_ndcg: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    @property
    def epochs_trained(self) -> int:
        return len(self.epochs)

    @property
    def best_ndcg(self) -> Optional[float]:
        if self.best_epoch is None:
            return None
        return self.epochs[self.best_epoch - 1].valid_ndcg

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(rec) for rec in self.epochs], columns=["epoch", "train_loss", "valid_ndcg"])

    def to_csv(self, path: Union[str, Path]):
        self.frame().to_csv(path, index=False)

    def to_dict(self) -> dict:
        return {
            "epochs_trained": self.epochs_trained,
            "best_epoch": self.best_epoch,
            "best_ndcg": self.best_ndcg,
            "stopped_early": self.stopped_early,
        }


def _sample_views(kind: ModelKind, adj: NormAdj, dim: int, rng: np.random.Generator) -> tuple[GraphView, GraphView]:
    seeds = rng.integers(2**62, size=2)
    return tuple(
        make_view(adj, AugmentSpec(kind=kind.augment_kind, rho=kind.rho, seed=int(seed)), dim)
        for seed in seeds
    )


@observe(span_type=SpanType.TRAINING, capture_result=False)
def train(
    kind: ModelKind,
    train: Dataset,
    valid: Dataset,
    cfg: TrainConfig = TrainConfig(),
    adj: Optional[NormAdj] = None,
) -> tuple[Params, TrainHistory]:
    """
    Fit ``kind`` on ``train`` and return the best-validation snapshot.

    Each epoch shuffles the positives, draws one negative per positive,
    applies one Adam step per batch and evaluates NDCG@k_eval on ``valid``
    (train positives masked). Training stops after ``cfg.patience`` epochs
    without improvement.
    """
    if len(train) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    if cfg.objective.objective is ObjectiveType.SGL and not kind.is_graph:
        raise ConfigError("the sgl objective needs an SGL model kind")

    tracer = get_tracer()
    rng = np.random.default_rng(cfg.seed)
    view_rng = np.random.default_rng([cfg.seed, 1])
    params = init_params(kind, train.m, train.n, cfg.dim, seed=cfg.seed)
    if kind.is_graph and adj is None:
        adj = build_normalized_adjacency(train)
    state = AdamState.init(params)
    history = TrainHistory()

    best_params = params.copy()
    best_ndcg = -np.inf
    stale = 0
    has_valid = len(valid) > 0
    if not has_valid:
        _logger.warning("empty validation set: early stopping disabled, last epoch is returned")
    composite = cfg.objective.objective is ObjectiveType.SGL

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        users = train.users[order]
        positives = train.items[order]
        negatives = sample_negatives(train, users, rng)
        views = _sample_views(kind, adj, cfg.dim, view_rng) if composite else None

        total_loss = 0.0
        for start in range(0, len(train), cfg.batch_size):
            stop = start + cfg.batch_size
            batch = Batch(users[start:stop], positives[start:stop], negatives[start:stop])
            if composite and cfg.views_per_batch and start > 0:
                views = _sample_views(kind, adj, cfg.dim, view_rng)
            loss, grads = compute_gradients(kind, params, adj, batch, cfg.objective, views)
            adam_step(params, grads, state, cfg.lr, inplace=True)
            total_loss += loss * len(batch)
        epoch_loss = total_loss / len(train)

        if has_valid:
            valid_ndcg = evaluate(kind, params, adj, [train], valid, cfg.k_eval,
                                  ranker=Ranker(kind, params, adj)).ndcg_at_k
        else:
            valid_ndcg = float("nan")
        history.epochs.append(EpochRecord(epoch, epoch_loss, valid_ndcg))
        tracer.add_metric("train_loss", epoch_loss, step=epoch)
        tracer.add_metric("valid_ndcg", valid_ndcg, step=epoch)
        _logger.info("epoch %d loss %.6f valid ndcg@%d %.6f", epoch, epoch_loss, cfg.k_eval, valid_ndcg)

        if not has_valid or valid_ndcg > best_ndcg:
            best_ndcg = valid_ndcg
            history.best_epoch = epoch
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                history.stopped_early = True
                _logger.info("early stop at epoch %d (best epoch %d)", epoch, history.best_epoch)
                break

    return best_params, history
