"""
Numerical checks of the noise-robustness results on constructed instances:
perturbation under noisy data, Jacobian growth of ReLU towers, mean
aggregation as mixup, low-pass propagation and subspace concentration.
"""

from dataclasses import dataclass, asdict
import json
import logging
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError, RankError, ShapeError
from .graph import Aggregator, NormAdj, build_mean_adjacency, eigen_spectrum, filter_response, propagate
from .models import ModelKind, init_params, neumf_backward, neumf_forward
from .tracing import SpanType, get_tracer, observe

_logger = logging.getLogger(__name__)

BOUND_TOLERANCE = 1e-9


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    ratio: float
    verdict: bool
    name: str = ""

    @classmethod
    def measure(cls, lhs: float, rhs: float, name: str = "") -> "BoundReport":
        if rhs == 0.0:
            ratio = 0.0 if lhs == 0.0 else float("inf")
        else:
            ratio = lhs / rhs
        return cls(lhs=float(lhs), rhs=float(rhs), ratio=float(ratio),
                   verdict=bool(lhs <= rhs * (1.0 + BOUND_TOLERANCE)), name=name)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv_row(self) -> str:
        return f"{self.name},{self.lhs!r},{self.rhs!r},{self.ratio!r},{str(self.verdict).lower()}"


@dataclass(frozen=True, eq=False)
class QuadraticInstance:
    """Per-sample loss 0.5 * |theta - x|^2 (Hessian = identity) with clean and noise anchors."""
    x0: np.ndarray
    xn: np.ndarray

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.float64)
        xn = np.asarray(self.xn, dtype=np.float64)
        if x0.shape != xn.shape:
            raise ShapeError(f"anchors differ in shape: {x0.shape} vs {xn.shape}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "xn", xn)

    @property
    def dimension(self) -> int:
        return int(self.x0.size)

    def minimizer(self, delta: float) -> np.ndarray:
        """argmin of (1 - delta) * l(theta; x0) + delta * l(theta; xn)."""
        return (1.0 - delta) * self.x0 + delta * self.xn

    @classmethod
    def random(cls, dimension: int, seed: int = 0) -> "QuadraticInstance":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal(dimension), rng.standard_normal(dimension))


@observe(span_type=SpanType.THEORY_CHECK)
def verify_perturbation_bound(inst: QuadraticInstance, delta: float) -> BoundReport:
    """|theta_delta - theta_0|_F^2 against delta^2 |H^-1 Delta_noise|_F^2."""
    if not 0.0 <= delta < 1.0:
        raise ConfigError(f"delta must lie in [0, 1), got {delta}")
    theta0 = inst.minimizer(0.0)
    theta_delta = inst.minimizer(delta)
    lhs = float(np.sum((theta_delta - theta0) ** 2))
    # H = I, so H^-1 Delta_noise = Delta_noise
    delta_noise = inst.x0 - inst.xn
    rhs = float(delta ** 2 * np.sum(delta_noise ** 2))
    return BoundReport.measure(lhs, rhs, name="perturbation")


def relu_tower(weights: Sequence[np.ndarray], x: np.ndarray,
               biases: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """ReLU after every layer except the last, which is linear."""
    biases = biases or [np.zeros(W.shape[1]) for W in weights]
    out = np.asarray(x, dtype=np.float64)
    for depth, (W, b) in enumerate(zip(weights, biases)):
        out = out @ W + b
        if depth < len(weights) - 1:
            out = np.maximum(out, 0.0)
    return out


def finite_difference_jacobian(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    columns = []
    for idx in range(x.size):
        h = step * max(1.0, abs(x[idx]))
        e = np.zeros_like(x)
        e[idx] = h
        columns.append((fn(x + e) - fn(x - e)) / (2.0 * h))
    return np.column_stack(columns)


@observe(span_type=SpanType.THEORY_CHECK)
def jacobian_bound_check(mlp_weights: Sequence[np.ndarray], input: np.ndarray,
                         biases: Optional[Sequence[np.ndarray]] = None) -> BoundReport:
    """Finite-difference |d out / d in|_2 against the product of layer spectral norms."""
    weights = [np.atleast_2d(np.asarray(W, dtype=np.float64)) for W in mlp_weights]
    if not weights:
        raise ShapeError("need at least one layer")
    x = np.asarray(input, dtype=np.float64).reshape(-1)
    if weights[0].shape[0] != x.size:
        raise ShapeError(f"input has {x.size} entries, first layer expects {weights[0].shape[0]}")
    for left, right in zip(weights[:-1], weights[1:]):
        if left.shape[1] != right.shape[0]:
            raise ShapeError(f"layer shapes {left.shape} and {right.shape} do not conform")

    jac = finite_difference_jacobian(lambda z: relu_tower(weights, z, biases), x)
    lhs = float(np.linalg.norm(jac, 2))
    rhs = float(np.prod([np.linalg.norm(W, 2) for W in weights]))
    return BoundReport.measure(lhs, rhs, name="jacobian")


@dataclass(frozen=True)
class SensitivityReport:
    """Distribution of |d score / d (p_u, q_i)|_2 over sampled pairs."""
    model: str
    mean: float
    median: float
    max: float
    pairs: int

    def to_dict(self) -> dict:
        return asdict(self)


def jacobian_sensitivity(m: int = 20, n: int = 20, k: int = 8, pairs: int = 200,
                         seed: int = 0) -> dict[str, SensitivityReport]:
    """
    Input sensitivity of BPR and NeuMF scoring on matched embeddings.
    A measurement only: which model is more sensitive is reported, not asserted.
    """
    rng = np.random.default_rng(seed)
    neumf = init_params(ModelKind.neumf(), m, n, k, seed=seed)
    users = rng.integers(m, size=pairs)
    items = rng.integers(n, size=pairs)
    pu, qi = neumf.P[users], neumf.Q[items]

    # BPR: d(p.q)/dp = q, d(p.q)/dq = p
    bpr_norms = np.sqrt(np.sum(pu ** 2, axis=1) + np.sum(qi ** 2, axis=1))

    neumf_norms = np.empty(pairs)
    for idx in range(pairs):
        _, cache = neumf_forward(neumf, pu[idx:idx + 1], qi[idx:idx + 1])
        d_pu, d_qi, _, _, _ = neumf_backward(neumf, cache, np.ones(1))
        neumf_norms[idx] = np.sqrt(np.sum(d_pu ** 2) + np.sum(d_qi ** 2))

    reports = {}
    for name, norms in (("bpr", bpr_norms), ("neumf", neumf_norms)):
        reports[name] = SensitivityReport(name, float(norms.mean()), float(np.median(norms)),
                                          float(norms.max()), pairs)
        _logger.info("%s score sensitivity: mean %.4g max %.4g", name, norms.mean(), norms.max())
    return reports


@dataclass(frozen=True)
class MixupReport:
    max_deviation: float
    max_weight_sum_error: float
    nodes_checked: int
    nodes_skipped: int

    def to_dict(self) -> dict:
        return asdict(self)


@observe(span_type=SpanType.THEORY_CHECK, capture_args=False)
def mixup_equivalence_check(train: Dataset, P: np.ndarray) -> MixupReport:
    """
    Compare mean aggregation (sparse D^-1 A @ P) with the explicit convex
    combination sum_k lambda_k * p_k, lambda_k = 1/deg, node by node.
    """
    adj = build_mean_adjacency(train)
    if P.shape[0] != adj.size:
        raise ShapeError(f"expected {adj.size} embedding rows, got {P.shape[0]}")
    aggregated = adj.matrix @ P

    neighbours = _neighbour_lists(train)
    deviation = 0.0
    weight_error = 0.0
    skipped = 0
    for node, nbrs in enumerate(neighbours):
        if nbrs.size == 0:
            skipped += 1
            continue
        weights = np.full(nbrs.size, 1.0 / nbrs.size)
        weight_error = max(weight_error, abs(float(weights.sum()) - 1.0))
        mixed = weights @ P[nbrs]
        deviation = max(deviation, float(np.max(np.abs(mixed - aggregated[node]))))
    if skipped:
        _logger.warning("mixup check skipped %d isolated nodes", skipped)

    report = MixupReport(deviation, weight_error, len(neighbours) - skipped, skipped)
    get_tracer().add_metric("mixup_max_deviation", deviation)
    return report


def _neighbour_lists(train: Dataset) -> list[np.ndarray]:
    m = train.m
    item_order = np.argsort(train.items, kind="stable")
    item_bounds = np.searchsorted(train.items[item_order], np.arange(train.n + 1))
    users_of_item = [train.users[item_order[item_bounds[i]:item_bounds[i + 1]]] for i in range(train.n)]
    return [pos + m for pos in train.user_pos] + users_of_item


@dataclass(frozen=True, eq=False)
class SubspaceReport:
    r: int
    residual_norms: np.ndarray
    epsilon_hat: float

    @property
    def mean_residual(self) -> float:
        return float(self.residual_norms.mean())

    def to_dict(self) -> dict:
        return {"r": self.r, "epsilon_hat": self.epsilon_hat, "mean_residual": self.mean_residual,
                "nodes": int(self.residual_norms.size)}


@observe(span_type=SpanType.THEORY_CHECK, capture_args=False)
def subspace_projection_report(Z: np.ndarray, Z_clean: np.ndarray, r: int,
                               rank_tol: float = 1e-10) -> SubspaceReport:
    """
    Residual of each embedding outside the top-r singular subspace of the
    clean embeddings. The subspace lives in embedding space, so it is spanned
    by the leading right singular vectors of the node-by-dimension matrix.
    """
    Z = np.asarray(Z, dtype=np.float64)
    Z_clean = np.asarray(Z_clean, dtype=np.float64)
    if Z.shape != Z_clean.shape:
        raise ShapeError(f"embedding shapes differ: {Z.shape} vs {Z_clean.shape}")
    k = Z.shape[1]
    if not 1 <= r < k:
        raise ConfigError(f"rank r must satisfy 1 <= r < {k}, got {r}")

    _, singular, vt = np.linalg.svd(Z_clean, full_matrices=False)
    numerical_rank = int(np.sum(singular > rank_tol * max(singular[0], 1e-300)))
    if numerical_rank < r:
        raise RankError(f"clean embeddings have numerical rank {numerical_rank} < r={r}")
    basis = vt[:r]
    residual = Z - (Z @ basis.T) @ basis
    norms = np.linalg.norm(residual, axis=1)
    return SubspaceReport(r=r, residual_norms=norms, epsilon_hat=float(norms.max()))


def spectral_identity_check(adj: NormAdj, P0: np.ndarray, L: int) -> float:
    """Max |propagate(adj, P0, L) - U diag(h(lambda)) U^T P0| on a small graph."""
    if adj.aggregator is not Aggregator.SYMMETRIC:
        raise ConfigError("spectral identity needs the symmetric aggregator")
    spectrum = eigen_spectrum(adj)
    U = spectrum.eigenvectors
    spectral = U @ (filter_response(L, spectrum.eigenvalues)[:, None] * (U.T @ P0))
    return float(np.max(np.abs(propagate(adj, P0, L) - spectral)))


def lowpass_check(layers: Sequence[int] = (1, 2, 3), points: int = 101) -> dict[int, bool]:
    """h(1) = 1 exactly and h nondecreasing on an evenly spaced grid of [0, 1]."""
    grid = np.linspace(0.0, 1.0, points)
    results = {}
    for L in layers:
        response = filter_response(L, grid)
        results[L] = bool(filter_response(L, 1.0) == 1.0 and np.all(np.diff(response) >= 0.0))
    return results


def effective_rank(E: np.ndarray, rel_tol: float = 1e-3) -> int:
    """Number of singular values above ``rel_tol`` times the largest."""
    singular = np.linalg.svd(np.asarray(E, dtype=np.float64), compute_uv=False)
    if singular.size == 0 or singular[0] == 0.0:
        return 0
    return int(np.sum(singular > rel_tol * singular[0]))
