"""
Bipartite user-item graph: normalized adjacency, layer-averaged propagation,
stochastic augmentation and spectral diagnostics.
"""

from dataclasses import dataclass, field
from enum import Enum
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .data import Dataset
from .errors import ConfigError, GraphTooLargeError, ShapeError

_logger = logging.getLogger(__name__)

DENSE_EIGEN_LIMIT = 2000


class Aggregator(str, Enum):
    SYMMETRIC = "symmetric"
    MEAN = "mean"


@dataclass(frozen=True, eq=False)
class NormAdj:
    """
    Normalized (m+n)x(m+n) adjacency of the user-item graph.

    Node ``u < m`` is a user, node ``m + i`` is item ``i``. The symmetric
    aggregator weighs edge (u, i) by 1/sqrt(deg_u * deg_i); the mean
    aggregator by 1/deg of the receiving node. Isolated nodes keep zero rows.
    """
    m: int
    n: int
    matrix: sp.csr_matrix = field(repr=False)
    degrees: np.ndarray = field(repr=False)
    edge_users: np.ndarray = field(repr=False)
    edge_items: np.ndarray = field(repr=False)
    aggregator: Aggregator = Aggregator.SYMMETRIC

    @property
    def size(self) -> int:
        return self.m + self.n

    @property
    def num_edges(self) -> int:
        return int(self.edge_users.size)

    def entries(self) -> list[tuple[int, int, float]]:
        coo = self.matrix.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_matrix_market(self, path: Union[str, Path]):
        """Write the weighted adjacency as Matrix Market coordinate text."""
        scipy.io.mmwrite(str(path), self.matrix.tocoo(), comment=f"users={self.m} items={self.n}")


def _bipartite(m: int, n: int, users: np.ndarray, items: np.ndarray) -> sp.csr_matrix:
    rows = np.concatenate([users, items + m])
    cols = np.concatenate([items + m, users])
    data = np.ones(rows.size, dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(m + n, m + n))


def _normalize(m: int, n: int, users: np.ndarray, items: np.ndarray, aggregator: Aggregator) -> NormAdj:
    adj = _bipartite(m, n, users, items)
    degrees = np.asarray(adj.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        if aggregator is Aggregator.SYMMETRIC:
            d_inv = np.power(degrees, -0.5)
        else:
            d_inv = np.power(degrees, -1.0)
    d_inv[np.isinf(d_inv)] = 0.0
    if aggregator is Aggregator.SYMMETRIC:
        norm = sp.diags(d_inv) @ adj @ sp.diags(d_inv)
    else:
        norm = sp.diags(d_inv) @ adj
    return NormAdj(
        m=m,
        n=n,
        matrix=sp.csr_matrix(norm),
        degrees=degrees.astype(np.int64),
        edge_users=np.asarray(users, dtype=np.int64),
        edge_items=np.asarray(items, dtype=np.int64),
        aggregator=aggregator,
    )


def build_normalized_adjacency(train: Dataset) -> NormAdj:
    """Symmetric D^-1/2 A D^-1/2 over the bipartite interaction graph."""
    return _normalize(train.m, train.n, train.users, train.items, Aggregator.SYMMETRIC)


def build_mean_adjacency(train: Dataset) -> NormAdj:
    """Row-mean aggregator D^-1 A: each node averages its neighbours."""
    return _normalize(train.m, train.n, train.users, train.items, Aggregator.MEAN)


def propagate(adj: NormAdj, P0: np.ndarray, L: int) -> np.ndarray:
    """Layer average (1/(L+1)) * sum_{l=0..L} adj^l @ P0."""
    if L < 0:
        raise ConfigError(f"layer count must be >= 0, got {L}")
    if P0.ndim != 2 or P0.shape[0] != adj.size:
        raise ShapeError(f"expected {adj.size} rows, got shape {P0.shape}")

    out = np.array(P0, dtype=np.float64, copy=True)
    current = out
    for _ in range(L):
        current = adj.matrix @ current
        out = out + current
    return out / (L + 1)


class AugmentKind(str, Enum):
    EDGE_DROPOUT = "edge-dropout"
    FEATURE_MASK = "feature-mask"


@dataclass(frozen=True)
class AugmentSpec:
    kind: AugmentKind = AugmentKind.EDGE_DROPOUT
    rho: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AugmentKind(self.kind))
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"drop probability rho must lie in [0, 1), got {self.rho}")


def augment(target: Union[NormAdj, np.ndarray], spec: AugmentSpec) -> Union[NormAdj, np.ndarray]:
    """
    Produce one stochastic view.

    Edge dropout keeps each undirected edge with probability 1 - rho and
    renormalizes from the surviving degrees. Feature masking zeroes each
    coordinate with probability rho.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.kind is AugmentKind.EDGE_DROPOUT:
        if not isinstance(target, NormAdj):
            raise ConfigError("edge dropout needs a NormAdj")
        if spec.rho == 0.0:
            return target
        keep = rng.random(target.num_edges) >= spec.rho
        return _normalize(target.m, target.n, target.edge_users[keep], target.edge_items[keep],
                          target.aggregator)

    if isinstance(target, NormAdj):
        raise ConfigError("feature masking needs an embedding matrix")
    if spec.rho == 0.0:
        return np.array(target, copy=True)
    return feature_mask(target.shape, spec.rho, rng) * target


def feature_mask(shape: tuple, rho: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(shape) >= rho).astype(np.float64)


@dataclass(frozen=True, eq=False)
class GraphView:
    """An augmented graph view: an adjacency plus an optional coordinate mask."""
    adj: NormAdj
    mask: Optional[np.ndarray] = None

    def embed(self, E0: np.ndarray, L: int) -> np.ndarray:
        base = E0 if self.mask is None else self.mask * E0
        return propagate(self.adj, base, L)

    def backprop(self, grad: np.ndarray, L: int) -> np.ndarray:
        # propagation is symmetric, so its adjoint is itself
        back = propagate(self.adj, grad, L)
        return back if self.mask is None else self.mask * back


def make_view(adj: NormAdj, spec: AugmentSpec, k: int) -> GraphView:
    if spec.kind is AugmentKind.EDGE_DROPOUT:
        return GraphView(adj=augment(adj, spec))
    rng = np.random.default_rng(spec.seed)
    return GraphView(adj=adj, mask=feature_mask((adj.size, k), spec.rho, rng))


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)

    def to_csv(self, path: Union[str, Path]):
        pd.DataFrame({"eigenvalue": self.eigenvalues}).to_csv(path, index_label="index")


def eigen_spectrum(adj: NormAdj, dense_limit: int = DENSE_EIGEN_LIMIT) -> Spectrum:
    """Full dense eigendecomposition, eigenvalues ordered by descending magnitude."""
    if adj.aggregator is not Aggregator.SYMMETRIC:
        raise ConfigError("eigen_spectrum needs the symmetric aggregator")
    if adj.size > dense_limit:
        raise GraphTooLargeError(
            f"{adj.size} nodes exceed the dense limit {dense_limit}; use extreme_eigenvalues"
        )
    values, vectors = scipy.linalg.eigh(adj.dense())
    order = np.argsort(-np.abs(values), kind="stable")
    return Spectrum(eigenvalues=values[order], eigenvectors=vectors[:, order])


def power_iteration(matrix: sp.spmatrix, iters: int = 1000, tol: float = 1e-10, seed: int = 0) -> float:
    """Dominant eigenvalue of a symmetric PSD operator."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(matrix.shape[0])
    x /= np.linalg.norm(x)
    estimate = 0.0
    for step in range(iters):
        y = matrix @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        new_estimate = float(x @ y)
        x = y / norm
        if abs(new_estimate - estimate) <= tol * max(1.0, abs(new_estimate)):
            _logger.debug("power iteration converged after %d steps", step + 1)
            return new_estimate
        estimate = new_estimate
    _logger.warning("power iteration stopped after %d steps without converging", iters)
    return estimate


def extreme_eigenvalues(adj: NormAdj, iters: int = 1000, seed: int = 0) -> tuple[float, float]:
    """
    (lambda_min, lambda_max) by power iteration on the shifted operators
    I + A and I - A, which are PSD because the spectrum lies in [-1, 1].
    """
    eye = sp.identity(adj.size, format="csr")
    lam_max = power_iteration(eye + adj.matrix, iters=iters, seed=seed) - 1.0
    lam_min = 1.0 - power_iteration(eye - adj.matrix, iters=iters, seed=seed + 1)
    return lam_min, lam_max


def filter_response(L: int, lam):
    """Layer-averaged filter h(lambda) = (1/(L+1)) * sum_{l=0..L} lambda^l, with lambda^0 = 1."""
    if L < 0:
        raise ConfigError(f"layer count must be >= 0, got {L}")
    lam = np.asarray(lam, dtype=np.float64)
    total = np.ones_like(lam)
    power = np.ones_like(lam)
    for _ in range(L):
        power = power * lam
        total = total + power
    result = total / (L + 1)
    return float(result) if result.ndim == 0 else result
