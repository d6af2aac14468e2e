"""
Model kinds, parameters and scoring for BPR, NeuMF, LightGCN and SGL.
"""

from dataclasses import dataclass, field
from enum import Enum
import logging
from pathlib import Path
import struct
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import AugmentKind, NormAdj, propagate

_logger = logging.getLogger(__name__)

PARAMS_MAGIC = b"EMBSCAL1"


class ModelType(str, Enum):
    BPR = "bpr"
    NEUMF = "neumf"
    LIGHTGCN = "lightgcn"
    SGL = "sgl"

    @property
    def tag(self) -> int:
        return list(ModelType).index(self)


@dataclass(frozen=True)
class ModelKind:
    """
    Model variant and its structural hyperparameters.

    ``n_layers`` is the propagation depth L of the graph variants; L=0 is
    accepted as the degenerate propagation that reduces to BPR scoring.
    ``rho``/``gamma``/``tau`` only matter for SGL.
    """
    model_type: ModelType
    layer_dims: Optional[tuple[int, ...]] = None
    n_layers: int = 3
    rho: float = 0.1
    gamma: float = 0.1
    tau: float = 0.2
    augment_kind: AugmentKind = AugmentKind.EDGE_DROPOUT
    item_term: bool = True

    def __post_init__(self):
        object.__setattr__(self, "model_type", ModelType(self.model_type))
        object.__setattr__(self, "augment_kind", AugmentKind(self.augment_kind))
        if self.layer_dims is not None:
            object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
            if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
                raise ConfigError(f"NeuMF layer_dims need >= 2 positive widths, got {self.layer_dims}")
        if self.n_layers < 0:
            raise ConfigError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")

    @classmethod
    def bpr(cls) -> "ModelKind":
        return cls(ModelType.BPR)

    @classmethod
    def neumf(cls, layer_dims: Optional[tuple[int, ...]] = None) -> "ModelKind":
        return cls(ModelType.NEUMF, layer_dims=layer_dims)

    @classmethod
    def lightgcn(cls, n_layers: int = 3) -> "ModelKind":
        return cls(ModelType.LIGHTGCN, n_layers=n_layers)

    @classmethod
    def sgl(cls, n_layers: int = 3, rho: float = 0.1, gamma: float = 0.1, tau: float = 0.2, **kwargs) -> "ModelKind":
        return cls(ModelType.SGL, n_layers=n_layers, rho=rho, gamma=gamma, tau=tau, **kwargs)

    @property
    def is_graph(self) -> bool:
        return self.model_type in (ModelType.LIGHTGCN, ModelType.SGL)

    def mlp_dims(self, k: int) -> tuple[int, ...]:
        dims = self.layer_dims or (2 * k, k, max(k // 2, 1))
        if dims[0] != 2 * k:
            raise ConfigError(f"NeuMF layer_dims must start at 2k={2 * k}, got {dims[0]}")
        return dims

    def to_dict(self) -> dict:
        return {
            "model": self.model_type.value,
            "layer_dims": list(self.layer_dims) if self.layer_dims else None,
            "n_layers": self.n_layers,
            "rho": self.rho,
            "gamma": self.gamma,
            "tau": self.tau,
        }


@dataclass(eq=False)
class Params:
    """Trainable parameters; also used for gradients and optimizer moments."""
    P: np.ndarray
    Q: np.ndarray
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)
    fusion: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.P.shape[0]

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def k(self) -> int:
        return self.P.shape[1]

    def arrays(self) -> list[np.ndarray]:
        arrays = [self.P, self.Q, *self.weights, *self.biases]
        if self.fusion is not None:
            arrays.append(self.fusion)
        return arrays

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        named = [("P", self.P), ("Q", self.Q)]
        named += [(f"W{l + 1}", w) for l, w in enumerate(self.weights)]
        named += [(f"b{l + 1}", b) for l, b in enumerate(self.biases)]
        if self.fusion is not None:
            named.append(("fusion", self.fusion))
        return named

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Params":
        return Params(
            P=fn(self.P),
            Q=fn(self.Q),
            weights=[fn(w) for w in self.weights],
            biases=[fn(b) for b in self.biases],
            fusion=None if self.fusion is None else fn(self.fusion),
        )

    def copy(self) -> "Params":
        return self.map(np.copy)

    def zeros_like(self) -> "Params":
        return self.map(np.zeros_like)

    def embeddings(self) -> np.ndarray:
        """Stacked (m+n)xk node embeddings, users first."""
        return np.vstack([self.P, self.Q])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_dict(self) -> dict:
        return {name: list(array.shape) for name, array in self.named_arrays()}


Gradients = Params


def init_params(kind: ModelKind, m: int, n: int, k: int, seed: int = 0) -> Params:
    """Embeddings ~ N(0, 0.1^2) / sqrt(k); NeuMF weights Xavier-uniform, zero biases."""
    if k < 1:
        raise ConfigError(f"embedding dimension must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    scale = 0.1 / np.sqrt(k)
    P = rng.normal(0.0, 1.0, size=(m, k)) * scale
    Q = rng.normal(0.0, 1.0, size=(n, k)) * scale
    if kind.model_type is not ModelType.NEUMF:
        return Params(P=P, Q=Q)

    dims = kind.mlp_dims(k)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    fusion_in = k + dims[-1]
    bound = np.sqrt(6.0 / (fusion_in + 1))
    fusion = rng.uniform(-bound, bound, size=fusion_in)
    return Params(P=P, Q=Q, weights=weights, biases=biases, fusion=fusion)


@dataclass
class NeuMFCache:
    pu: np.ndarray
    qi: np.ndarray
    gmf: np.ndarray
    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    top: np.ndarray


def neumf_forward(params: Params, pu: np.ndarray, qi: np.ndarray) -> tuple[np.ndarray, NeuMFCache]:
    """
    Score rows of (pu, qi): fusion . [pu * qi || relu-MLP([pu || qi])].
    """
    gmf = pu * qi
    x = np.hstack([pu, qi])
    inputs, pre_activations = [], []
    for W, b in zip(params.weights, params.biases):
        inputs.append(x)
        z = x @ W + b
        pre_activations.append(z)
        x = np.maximum(z, 0.0)
    scores = np.hstack([gmf, x]) @ params.fusion
    return scores, NeuMFCache(pu, qi, gmf, inputs, pre_activations, x)


def neumf_backward(params: Params, cache: NeuMFCache, upstream: np.ndarray):
    """
    Backpropagate dLoss/dscore through the NeuMF tower.

    Returns (d_pu, d_qi, d_weights, d_biases, d_fusion).
    """
    k = cache.pu.shape[1]
    d_fusion = np.hstack([cache.gmf, cache.top]).T @ upstream
    d_concat = np.outer(upstream, params.fusion)
    d_gmf, d_x = d_concat[:, :k], d_concat[:, k:]

    d_pu = d_gmf * cache.qi
    d_qi = d_gmf * cache.pu
    d_weights = [None] * len(params.weights)
    d_biases = [None] * len(params.biases)
    for l in reversed(range(len(params.weights))):
        d_z = d_x * (cache.pre_activations[l] > 0.0)
        d_weights[l] = cache.inputs[l].T @ d_z
        d_biases[l] = d_z.sum(axis=0)
        d_x = d_z @ params.weights[l].T
    d_pu = d_pu + d_x[:, :k]
    d_qi = d_qi + d_x[:, k:]
    return d_pu, d_qi, d_weights, d_biases, d_fusion


def final_embeddings(kind: ModelKind, params: Params, adj: Optional[NormAdj] = None) -> tuple[np.ndarray, np.ndarray]:
    """User and item representations used for scoring."""
    if not kind.is_graph:
        return params.P, params.Q
    if adj is None:
        raise ConfigError(f"{kind.model_type.value} scoring needs a normalized adjacency")
    if adj.size != params.m + params.n:
        raise ShapeError(f"adjacency has {adj.size} nodes, params have {params.m + params.n}")
    E = propagate(adj, params.embeddings(), kind.n_layers)
    return E[:params.m], E[params.m:]


class Ranker:
    """Scores users against the full catalog, propagating once."""

    def __init__(self, kind: ModelKind, params: Params, adj: Optional[NormAdj] = None):
        self.kind = kind
        self.params = params
        self.users, self.items = final_embeddings(kind, params, adj)
        self._item_first_layer = None
        if kind.model_type is ModelType.NEUMF:
            k = params.k
            self._item_first_layer = self.items @ params.weights[0][k:]

    def score(self, u: int, i: int) -> float:
        if self.kind.model_type is ModelType.NEUMF:
            scores, _ = neumf_forward(self.params, self.users[u:u + 1], self.items[i:i + 1])
            return float(scores[0])
        return float(self.users[u] @ self.items[i])

    def scores(self, u: int) -> np.ndarray:
        if self.kind.model_type is not ModelType.NEUMF:
            return self.items @ self.users[u]
        return self._neumf_all_items(u)

    def score_matrix(self, users: np.ndarray) -> np.ndarray:
        if self.kind.model_type is not ModelType.NEUMF:
            return self.users[users] @ self.items.T
        return np.vstack([self._neumf_all_items(int(u)) for u in users])

    def _neumf_all_items(self, u: int) -> np.ndarray:
        params = self.params
        k = params.k
        pu = self.users[u]
        # first layer splits into a per-item part (cached) and a per-user part
        x = np.maximum(self._item_first_layer + pu @ params.weights[0][:k] + params.biases[0], 0.0)
        for W, b in zip(params.weights[1:], params.biases[1:]):
            x = np.maximum(x @ W + b, 0.0)
        return (self.items * pu) @ params.fusion[:k] + x @ params.fusion[k:]


def score(kind: ModelKind, params: Params, adj: Optional[NormAdj], u: int, i: int) -> float:
    return Ranker(kind, params, adj).score(u, i)


def score_all_items(kind: ModelKind, params: Params, adj: Optional[NormAdj], u: int) -> np.ndarray:
    return Ranker(kind, params, adj).scores(u)


def save_params(path: Union[str, Path], kind: ModelKind, params: Params):
    """
    Binary layout: magic, then little-endian int64 m, n, k, variant tag,
    n_layers, len(layer_dims), layer_dims..., then float64 arrays in
    row-major order (P, Q, weights, biases, fusion).
    """
    dims = kind.mlp_dims(params.k) if kind.model_type is ModelType.NEUMF else ()
    header = [params.m, params.n, params.k, kind.model_type.tag, kind.n_layers, len(dims), *dims]
    with open(path, "wb") as f:
        f.write(PARAMS_MAGIC)
        f.write(struct.pack(f"<{len(header)}q", *header))
        for array in params.arrays():
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def load_params(path: Union[str, Path]) -> tuple[ModelKind, Params]:
    raw = Path(path).read_bytes()
    if raw[:len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise ConfigError(f"{path} is not an embedscale parameter file")
    offset = len(PARAMS_MAGIC)
    m, n, k, tag, n_layers, n_dims = struct.unpack_from("<6q", raw, offset)
    offset += 6 * 8
    dims = struct.unpack_from(f"<{n_dims}q", raw, offset)
    offset += n_dims * 8

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        array = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += count * 8
        return array

    model_type = list(ModelType)[tag]
    P, Q = take((m, k)), take((n, k))
    weights = [take((a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [take((b,)) for b in dims[1:]]
    fusion = take((k + dims[-1],)) if dims else None
    kind = ModelKind(model_type, layer_dims=tuple(dims) or None, n_layers=n_layers)
    return kind, Params(P=P, Q=Q, weights=weights, biases=biases, fusion=fusion)
