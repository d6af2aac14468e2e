"""
Embedding-dimension sweeps: resumable CSV results, curve-shape
classification and the drop-loss comparison.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
import contextvars
import csv
from dataclasses import dataclass, field, replace
from enum import Enum
import logging
import math
import os
from pathlib import Path
import threading
import time
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.signal import find_peaks
from scipy.stats import linregress
from tqdm import tqdm

from .data import Dataset, InteractionFormat, NoiseSpec, SplitSpec, inject_noise, load_interactions, split
from .errors import ConfigError, EmbedScaleError, InsufficientDataError
from .evaluator import evaluate
from .graph import NormAdj, build_normalized_adjacency
from .models import ModelKind, ModelType
from .objectives import DropConfig, ObjectiveConfig, ObjectiveType
from .trainer import TrainConfig, train
from .tracing import SpanType, get_tracer

_logger = logging.getLogger(__name__)

CSV_HEADER = ["model", "dataset", "dim", "seed", "variant", "ndcg20", "epochs_trained", "wall_seconds"]
DEFAULT_DIM_CAP = 2 ** 12


def powers_of_two(low: int = 2, high: int = DEFAULT_DIM_CAP) -> tuple[int, ...]:
    dims = []
    dim = 1
    while dim <= high:
        if dim >= low:
            dims.append(dim)
        dim *= 2
    return tuple(dims)


@dataclass(frozen=True)
class Variant:
    """A labelled training objective within a sweep."""
    label: str
    objective: ObjectiveConfig

    @classmethod
    def for_model(cls, model: ModelKind, drop: Optional[DropConfig] = None) -> "Variant":
        if model.model_type is ModelType.SGL:
            objective = ObjectiveConfig(ObjectiveType.SGL, drop=drop)
        elif drop is not None:
            objective = ObjectiveConfig(ObjectiveType.BPR_DROP, drop=drop)
        else:
            objective = ObjectiveConfig(ObjectiveType.BPR)
        if drop is None:
            return cls("baseline", objective)
        side = "low" if drop.get_low else "high"
        return cls(f"drop-{side}-{drop.save_ratio:g}", objective)


@dataclass(frozen=True)
class SweepConfig:
    model: ModelKind
    data_path: str
    data_format: InteractionFormat = InteractionFormat.TSV_UIRT
    dims: tuple[int, ...] = field(default_factory=powers_of_two)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_epochs=100))
    noise: Optional[NoiseSpec] = None
    drop: Optional[DropConfig] = None
    out: str = "sweep.csv"
    seeds: tuple[int, ...] = (1,)
    split: SplitSpec = field(default_factory=SplitSpec)
    jobs: int = 1
    dim_cap: int = DEFAULT_DIM_CAP
    dataset_name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "data_format", InteractionFormat(self.data_format))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.dims:
            raise ConfigError("a sweep needs at least one dimension")
        if any(b <= a for a, b in zip(self.dims, self.dims[1:])):
            raise ConfigError(f"dims must be strictly increasing, got {self.dims}")
        if self.dims[0] < 1:
            raise ConfigError("dims must be positive")
        if self.dims[-1] > self.dim_cap:
            raise ConfigError(f"dim {self.dims[-1]} exceeds the cap {self.dim_cap}")
        if not self.seeds:
            raise ConfigError("a sweep needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")

    @property
    def dataset(self) -> str:
        return self.dataset_name or Path(self.data_path).stem


@dataclass(frozen=True)
class SweepPoint:
    dim: int
    seed: int
    variant: str
    ndcg: float
    epochs_trained: int
    wall_seconds: float

    @property
    def failed(self) -> bool:
        return math.isnan(self.ndcg)


@dataclass
class SweepResult:
    model: str
    dataset: str
    points: list[SweepPoint] = field(default_factory=list)
    trained: int = 0

    @property
    def failed(self) -> list[SweepPoint]:
        return [p for p in self.points if p.failed]

    @property
    def completed(self) -> bool:
        return not self.failed

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([p.__dict__ for p in self.points],
                            columns=["dim", "seed", "variant", "ndcg", "epochs_trained", "wall_seconds"])

    def mean_by_dim(self, variant: str = "baseline") -> pd.Series:
        """Mean NDCG per dimension over seeds, failed points excluded."""
        df = self.frame()
        df = df[(df["variant"] == variant) & df["ndcg"].notna()]
        return df.groupby("dim")["ndcg"].mean().sort_index()


class ResultWriter:
    """Single serialized writer for the sweep CSV."""

    def __init__(self, path: str):
        self.path = Path(path)
        self._lock = threading.Lock()
        if not self.path.exists() or self.path.stat().st_size == 0:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(CSV_HEADER)

    def write(self, model: str, dataset: str, point: SweepPoint):
        row = [model, dataset, point.dim, point.seed, point.variant,
               "nan" if point.failed else repr(point.ndcg), point.epochs_trained,
               f"{point.wall_seconds:.3f}"]
        with self._lock, open(self.path, "a", newline="") as f:
            csv.writer(f).writerow(row)
            f.flush()
            os.fsync(f.fileno())


def _load_existing(path: str, model: str, dataset: str) -> list[SweepPoint]:
    """
    Completed points for (model, dataset) already in the CSV. Failed rows of
    that pair are dropped so they rerun; rows of other pairs are left alone.
    """
    if not Path(path).exists() or Path(path).stat().st_size == 0:
        return []
    frame = pd.read_csv(path, keep_default_na=False, na_values={"ndcg20": ["nan", "NaN", ""]})
    ours = (frame["model"].astype(str) == model) & (frame["dataset"].astype(str) == dataset)
    failed = ours & frame["ndcg20"].isna()
    mine = frame[ours & ~failed]
    if failed.any():
        _logger.info("dropping %d failed %s/%s rows from %s for retry", int(failed.sum()), model, dataset, path)
        frame[~failed].to_csv(path, index=False, na_rep="nan")
    return [
        SweepPoint(int(r.dim), int(r.seed), str(r.variant), float(r.ndcg20),
                   int(r.epochs_trained), float(r.wall_seconds))
        for r in mine.itertuples(index=False)
    ]


@dataclass(frozen=True, eq=False)
class _SweepData:
    train: Dataset
    valid: Dataset
    test: Dataset
    adj: Optional[NormAdj]


def _prepare(cfg: SweepConfig) -> _SweepData:
    dataset = load_interactions(cfg.data_path, cfg.data_format)
    train_set, valid_set, test_set = split(dataset, cfg.split)
    if cfg.noise is not None:
        train_set = inject_noise(train_set, cfg.noise)
    adj = build_normalized_adjacency(train_set) if cfg.model.is_graph else None
    return _SweepData(train_set, valid_set, test_set, adj)


def _run_point(cfg: SweepConfig, data: _SweepData, dim: int, seed: int, variant: Variant) -> SweepPoint:
    tracer = get_tracer()
    span = tracer.start_span(
        "sweep_point", span_type=SpanType.SWEEP_POINT,
        inputs={"dim": dim, "seed": seed, "variant": variant.label},
    )
    started = time.perf_counter()
    try:
        tcfg = replace(cfg.train, dim=dim, seed=seed, objective=variant.objective)
        params, history = train(cfg.model, data.train, data.valid, tcfg, adj=data.adj)
        report = evaluate(cfg.model, params, data.adj, [data.train, data.valid], data.test, tcfg.k_eval)
    except Exception as e:
        if isinstance(e, EmbedScaleError):
            _logger.error("sweep point dim=%d seed=%d variant=%s failed: %s", dim, seed, variant.label, e)
        else:
            _logger.exception("sweep point dim=%d seed=%d variant=%s crashed", dim, seed, variant.label)
        tracer.end_span(span, error=e)
        return SweepPoint(dim, seed, variant.label, float("nan"), 0, time.perf_counter() - started)

    point = SweepPoint(dim, seed, variant.label, report.ndcg_at_k, history.epochs_trained,
                       time.perf_counter() - started)
    tracer.end_span(span, outputs={"ndcg": point.ndcg, "epochs_trained": point.epochs_trained})
    return point


def run_sweep(cfg: SweepConfig, variants: Optional[Sequence[Variant]] = None) -> SweepResult:
    """
    Train and test every (dim, seed, variant) point not already in ``cfg.out``.
    Rows are appended as points finish; a failed point is recorded with a NaN
    score and the sweep continues.
    """
    variants = list(variants or [Variant.for_model(cfg.model, cfg.drop)])
    model, dataset = cfg.model.model_type.value, cfg.dataset
    result = SweepResult(model=model, dataset=dataset)

    existing = _load_existing(cfg.out, model, dataset)
    done = {(p.dim, p.seed, p.variant) for p in existing}
    wanted = [(dim, seed, v) for v in variants for dim in cfg.dims for seed in cfg.seeds]
    wanted_keys = {(dim, seed, v.label) for dim, seed, v in wanted}
    result.points.extend(p for p in existing if (p.dim, p.seed, p.variant) in wanted_keys)
    todo = [(dim, seed, v) for dim, seed, v in wanted if (dim, seed, v.label) not in done]
    _logger.info("sweep %s/%s: %d points, %d already done", model, dataset, len(wanted), len(wanted) - len(todo))
    if not todo:
        return result

    data = _prepare(cfg)
    writer = ResultWriter(cfg.out)
    tracer = get_tracer()
    span = tracer.start_span("sweep", span_type=SpanType.SWEEP,
                             inputs={"model": cfg.model.to_dict(), "dataset": dataset,
                                     "dims": list(cfg.dims), "seeds": list(cfg.seeds)})
    progress = tqdm(total=len(todo), desc=f"{model}/{dataset}", disable=None)
    try:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [
                pool.submit(contextvars.copy_context().run, _run_point, cfg, data, dim, seed, variant)
                for dim, seed, variant in todo
            ]
            for future in as_completed(futures):
                point = future.result()
                writer.write(model, dataset, point)
                result.points.append(point)
                result.trained += 1
                progress.update(1)
    finally:
        progress.close()
        tracer.end_span(span, outputs={"trained": result.trained, "failed": len(result.failed)})

    result.points.sort(key=lambda p: (p.variant, p.dim, p.seed))
    return result


@dataclass
class DropComparison:
    """Mean-over-seeds table plus the sweep it was computed from."""
    table: pd.DataFrame
    sweep: SweepResult

    @property
    def failed(self) -> list[SweepPoint]:
        return self.sweep.failed


def compare_drop(cfg: SweepConfig, save_ratios: Sequence[float], get_low: bool = True,
                 out: Optional[str] = None) -> DropComparison:
    """
    Baseline plus one drop variant per save ratio across all dims. Writes the
    ``dim,variant,ndcg`` table (mean over seeds, failed points excluded).
    Failed points stay visible on ``DropComparison.failed``.
    """
    if not save_ratios:
        raise ConfigError("compare_drop needs a non-empty save_ratio grid")
    variants = [Variant.for_model(cfg.model)]
    variants += [Variant.for_model(cfg.model, DropConfig(save_ratio=r, get_low=get_low)) for r in save_ratios]
    result = run_sweep(replace(cfg, drop=None), variants)

    table = (
        result.frame()
        .groupby(["dim", "variant"], sort=False)["ndcg"].mean()
        .reset_index()
    )
    order = {v.label: idx for idx, v in enumerate(variants)}
    table["_order"] = table["variant"].map(order)
    table = table.sort_values(["dim", "_order"]).drop(columns="_order").reset_index(drop=True)

    out = out or str(Path(cfg.out).with_name(Path(cfg.out).stem + "_compare.csv"))
    table.to_csv(out, index=False, columns=["dim", "variant", "ndcg"])
    _logger.info("wrote drop comparison (%d rows) to %s", len(table), out)
    return DropComparison(table=table, sweep=result)


class CurveShape(str, Enum):
    LOGARITHMIC = "Logarithmic"
    SINGLE_PEAK = "SinglePeak"
    DOUBLE_PEAK = "DoublePeak"
    OTHER = "Other"


@dataclass(frozen=True)
class CurveClass:
    variant: CurveShape
    evidence: dict

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, **self.evidence}


def smooth(values: np.ndarray) -> np.ndarray:
    """3-point moving average of interior points; endpoints unchanged."""
    out = values.copy()
    out[1:-1] = (values[:-2] + values[1:-1] + values[2:]) / 3.0
    return out


def classify_curve(
    points: Sequence[float],
    dims: Optional[Sequence[int]] = None,
    prominence: float = 0.02,
    min_r2: float = 0.9,
    smooth_min_points: int = 7,
) -> CurveClass:
    """
    Classify an NDCG-vs-dimension curve.

    Interior maxima count when their prominence is at least ``prominence``
    times the curve's range. Curves with ``smooth_min_points`` or more points
    are smoothed first; shorter curves are too coarse to smooth without
    erasing their peaks. No maxima plus a log fit a + b ln(dim) with
    R^2 >= ``min_r2`` and b > 0 is Logarithmic.

    Because of the smoothing gate the same shape can classify differently at
    different lengths: a shallow second peak that counts on a 5-point curve
    may be averaged away once the curve reaches 7 points. ``evidence["smoothed"]``
    records which path was taken and is part of the CLI output.
    """
    values = np.asarray(points, dtype=np.float64)
    if values.size < 3:
        raise InsufficientDataError(f"need at least 3 points to classify a curve, got {values.size}")
    dims = np.asarray(dims if dims is not None else [2 ** (i + 1) for i in range(values.size)], dtype=np.float64)
    if dims.shape != values.shape:
        raise ConfigError("dims and points differ in length")

    curve = smooth(values) if values.size >= smooth_min_points else values
    span = float(curve.max() - curve.min())
    if span > 0.0:
        peaks, props = find_peaks(curve, prominence=prominence * span)
        prominences = props["prominences"]
    else:
        peaks, prominences = np.empty(0, dtype=int), np.empty(0)

    evidence = {
        "peak_dims": dims[peaks].astype(int).tolist(),
        "relative_prominences": (prominences / span).tolist() if span > 0 else [],
        "smoothed": bool(curve is not values),
    }

    if peaks.size == 0:
        fit = linregress(np.log(dims), values) if span > 0 else None
        r2 = float(fit.rvalue ** 2) if fit is not None else 0.0
        slope = float(fit.slope) if fit is not None else 0.0
        evidence.update({"r2": r2, "log_slope": slope})
        shape = CurveShape.LOGARITHMIC if r2 >= min_r2 and slope > 0 else CurveShape.OTHER
    elif peaks.size == 1:
        shape = CurveShape.SINGLE_PEAK
    elif peaks.size == 2:
        shape = CurveShape.DOUBLE_PEAK
    else:
        shape = CurveShape.OTHER
    return CurveClass(variant=shape, evidence=evidence)
