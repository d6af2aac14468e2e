"""
Implicit-feedback datasets: loading, splitting, negative sampling and noise injection.
"""

from dataclasses import dataclass, field
from enum import Enum
import logging
import math
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .errors import CapacityError, ConfigError, EmptyDatasetError, NoNegativeError, ParseError

_logger = logging.getLogger(__name__)

# enumerate the complement explicitly below this many user-item cells
_DENSE_PAIR_LIMIT = 20_000_000
_MAX_REJECTION_ATTEMPTS = 100
_FLOOR_EPS = 1e-9


def _floor(x: float) -> int:
    return int(math.floor(x + _FLOOR_EPS))


class InteractionFormat(str, Enum):
    """Supported whitespace-separated interaction file layouts."""
    TSV_UI = "tsv-ui"
    TSV_UIRT = "tsv-uirt"


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Immutable implicit-feedback interaction set over a fixed user/item universe.

    Interactions are stored as parallel ``users``/``items`` arrays sorted by
    (user, item) without duplicates. ``user_pos[u]`` is the sorted positive
    item array of user ``u``.
    """
    m: int
    n: int
    users: np.ndarray
    items: np.ndarray
    user_pos: tuple = field(repr=False)

    @classmethod
    def from_pairs(cls, m: int, n: int, users: Sequence[int], items: Sequence[int]) -> "Dataset":
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        if users.shape != items.shape:
            raise ConfigError("users and items must have equal length")
        if users.size and (users.min() < 0 or users.max() >= m or items.min() < 0 or items.max() >= n):
            raise ConfigError(f"interaction index outside universe m={m}, n={n}")

        keys = np.unique(users * n + items)
        users = keys // n if n else keys
        items = keys % n if n else keys
        users.setflags(write=False)
        items.setflags(write=False)

        bounds = np.searchsorted(users, np.arange(m + 1))
        user_pos = tuple(items[bounds[u]:bounds[u + 1]] for u in range(m))
        return cls(m=int(m), n=int(n), users=users, items=items, user_pos=user_pos)

    @classmethod
    def empty_like(cls, other: "Dataset") -> "Dataset":
        return cls.from_pairs(other.m, other.n, [], [])

    def __len__(self) -> int:
        return int(self.users.size)

    def __iter__(self) -> Iterator[Interaction]:
        for u, i in zip(self.users.tolist(), self.items.tolist()):
            yield Interaction(u, i)

    def __repr__(self) -> str:
        return f"Dataset(m={self.m}, n={self.n}, interactions={len(self)})"

    @property
    def keys(self) -> np.ndarray:
        """Sorted flat pair keys ``user * n + item``."""
        return self.users * self.n + self.items

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.users.tolist(), self.items.tolist()))

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Vectorized membership test for (user, item) pairs."""
        keys = self.keys
        query = np.asarray(users, dtype=np.int64) * self.n + np.asarray(items, dtype=np.int64)
        if keys.size == 0:
            return np.zeros(query.shape, dtype=bool)
        pos = np.searchsorted(keys, query)
        pos = np.minimum(pos, keys.size - 1)
        return keys[pos] == query

    def degrees(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-user and per-item interaction counts."""
        return (np.bincount(self.users, minlength=self.m),
                np.bincount(self.items, minlength=self.n))

    def union(self, *others: "Dataset") -> "Dataset":
        users = np.concatenate([self.users] + [o.users for o in others])
        items = np.concatenate([self.items] + [o.items for o in others])
        return Dataset.from_pairs(self.m, self.n, users, items)


@dataclass(frozen=True)
class NoiseSpec:
    delta: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"noise ratio delta must lie in [0, 1], got {self.delta}")


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 42

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise ConfigError("split needs exactly three ratios (train, valid, test)")
        if any(r < 0 for r in self.ratios):
            raise ConfigError(f"split ratios must be non-negative, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-12:
            raise ConfigError(f"split ratios must sum to 1, got {sum(self.ratios)!r}")


@dataclass(frozen=True)
class DatasetStats:
    m: int
    n: int
    count: int
    sparsity: float

    @property
    def scale(self) -> str:
        if self.count < 1_000_000:
            return "Small"
        if self.count <= 5_000_000:
            return "Medium"
        if self.count <= 10_000_000:
            return "Large"
        return "X-Large"

    @property
    def sparsity_level(self) -> str:
        if self.sparsity < 0.6:
            return "Dense"
        if self.sparsity < 0.95:
            return "Semi-sparse"
        if self.sparsity < 0.99:
            return "Sparse"
        return "Ultra-sparse"

    def to_csv_row(self) -> str:
        return f"{self.m},{self.n},{self.count},{self.sparsity:.5f}"

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "count": self.count,
            "sparsity": self.sparsity,
            "scale": self.scale,
            "sparsity_level": self.sparsity_level,
        }


def load_interactions(path: Union[str, Path], format: Union[str, InteractionFormat] = InteractionFormat.TSV_UIRT) -> Dataset:
    """
    Read an interaction file and remap raw ids to dense 0-based indices.

    Ids are assigned in order of first appearance. Ratings and timestamps of
    ``tsv-uirt`` rows are validated as numbers and otherwise ignored: every
    row is a positive.
    """
    fmt = InteractionFormat(format)
    expected = 2 if fmt is InteractionFormat.TSV_UI else 4
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    users: list[int] = []
    items: list[int] = []

    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != expected:
                raise ParseError(
                    f"expected {expected} fields for {fmt.value}, got {len(fields)}",
                    line_no=line_no, path=str(path),
                )
            if fmt is InteractionFormat.TSV_UIRT:
                try:
                    float(fields[2])
                    float(fields[3])
                except ValueError:
                    raise ParseError("rating and timestamp must be numeric", line_no=line_no, path=str(path))
            users.append(user_ids.setdefault(fields[0], len(user_ids)))
            items.append(item_ids.setdefault(fields[1], len(item_ids)))

    if not users:
        raise EmptyDatasetError(f"no interactions in {path}")

    dataset = Dataset.from_pairs(len(user_ids), len(item_ids), users, items)
    _logger.info("loaded %s: m=%d n=%d interactions=%d (%d rows)",
                 path, dataset.m, dataset.n, len(dataset), len(users))
    return dataset


def stats(d: Dataset) -> DatasetStats:
    count = len(d)
    return DatasetStats(m=d.m, n=d.n, count=count, sparsity=1.0 - count / (d.m * d.n))


def split(d: Dataset, s: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    """
    Partition interactions into train/valid/test by a seeded global shuffle.

    Valid and test sizes are floored; the remainder goes to train. Users left
    without a training interaction are repaired by swapping one of their
    held-out interactions with a training interaction of a user who can spare
    one, so split sizes stay exact.
    """
    total = len(d)
    if total == 0:
        raise EmptyDatasetError("cannot split an empty dataset")

    n_valid = _floor(total * s.ratios[1])
    n_test = _floor(total * s.ratios[2])
    n_train = total - n_valid - n_test

    rng = np.random.default_rng(s.seed)
    order = rng.permutation(total)
    assignment = np.empty(total, dtype=np.int8)
    assignment[order[:n_train]] = 0
    assignment[order[n_train:n_train + n_valid]] = 1
    assignment[order[n_train + n_valid:]] = 2

    if 0 < n_train < total:
        _repair_train_coverage(d, assignment, order)

    parts = tuple(
        Dataset.from_pairs(d.m, d.n, d.users[assignment == part], d.items[assignment == part])
        for part in (0, 1, 2)
    )
    _logger.info("split %d interactions into train=%d valid=%d test=%d",
                 total, len(parts[0]), len(parts[1]), len(parts[2]))
    return parts


def _repair_train_coverage(d: Dataset, assignment: np.ndarray, order: np.ndarray):
    train_counts = np.bincount(d.users[assignment == 0], minlength=d.m)
    total_counts = np.bincount(d.users, minlength=d.m)
    missing = np.flatnonzero((train_counts == 0) & (total_counts > 0))
    if missing.size == 0:
        return

    # donors are visited latest-shuffled first so the repair is deterministic
    donor_iter = (idx for idx in order[::-1] if assignment[idx] == 0)
    repaired = 0
    for user in missing:
        held = next(idx for idx in order if d.users[idx] == user and assignment[idx] != 0)
        donor = None
        for idx in donor_iter:
            if assignment[idx] == 0 and train_counts[d.users[idx]] >= 2:
                donor = idx
                break
        if donor is None:
            _logger.warning("split: no train interaction left to swap for user %d", user)
            break
        assignment[donor], assignment[held] = assignment[held], 0
        train_counts[d.users[donor]] -= 1
        train_counts[user] += 1
        repaired += 1
    if repaired:
        _logger.warning("split: moved %d held-out interactions into train to cover every user", repaired)


def sample_negative(train: Dataset, user: int, rng: np.random.Generator) -> int:
    """Draw one item uniformly from the items ``user`` has not interacted with."""
    positives = train.user_pos[user]
    if positives.size >= train.n:
        raise NoNegativeError(f"user {user} interacted with all {train.n} items")

    for _ in range(_MAX_REJECTION_ATTEMPTS):
        item = int(rng.integers(train.n))
        idx = np.searchsorted(positives, item)
        if idx == positives.size or positives[idx] != item:
            return item

    complement = np.setdiff1d(np.arange(train.n), positives, assume_unique=True)
    return int(rng.choice(complement))


def sample_negatives(train: Dataset, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized ``sample_negative``: one negative per entry of ``users``."""
    users = np.asarray(users, dtype=np.int64)
    negatives = rng.integers(train.n, size=users.size)
    pending = np.flatnonzero(train.contains(users, negatives))
    attempts = 1
    while pending.size and attempts < _MAX_REJECTION_ATTEMPTS:
        negatives[pending] = rng.integers(train.n, size=pending.size)
        pending = pending[train.contains(users[pending], negatives[pending])]
        attempts += 1
    for idx in pending:
        negatives[idx] = sample_negative(train, int(users[idx]), rng)
    return negatives


def noise_count(size: int, delta: float) -> int:
    """Number of injected pairs so the injected fraction of the result is ``delta``."""
    if delta >= 1.0:
        raise ConfigError("noise ratio delta=1 leaves no clean interactions")
    return _floor(delta * size / (1.0 - delta))


def inject_noise(train: Dataset, spec: NoiseSpec, return_injected: bool = False):
    """
    Add uniformly drawn unobserved pairs so that a ``delta`` fraction of the
    result is noise. Original interactions are untouched.
    """
    count = noise_count(len(train), spec.delta)
    empty = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    if count == 0:
        return (train, Dataset.from_pairs(train.m, train.n, *empty)) if return_injected else train

    cells = train.m * train.n
    available = cells - len(train)
    if count > available:
        raise CapacityError(f"need {count} unobserved pairs, only {available} exist")

    rng = np.random.default_rng(spec.seed)
    observed = train.keys
    if cells <= _DENSE_PAIR_LIMIT:
        complement = np.setdiff1d(np.arange(cells, dtype=np.int64), observed, assume_unique=True)
        chosen = rng.choice(complement, size=count, replace=False)
    else:
        chosen = _rejection_pairs(rng, observed, cells, count)

    injected = Dataset.from_pairs(train.m, train.n, chosen // train.n, chosen % train.n)
    noisy = train.union(injected)
    _logger.info("injected %d noisy interactions (delta=%.3f) into %d", count, spec.delta, len(train))
    return (noisy, injected) if return_injected else noisy


def _rejection_pairs(rng: np.random.Generator, observed: np.ndarray, cells: int, count: int) -> np.ndarray:
    chosen = np.empty(0, dtype=np.int64)
    while chosen.size < count:
        draw = rng.integers(cells, size=2 * (count - chosen.size) + 16)
        draw = draw[~np.isin(draw, observed)]
        # keep first occurrences in draw order
        merged = np.concatenate([chosen, draw])
        _, first = np.unique(merged, return_index=True)
        chosen = merged[np.sort(first)]
    return chosen[:count]
