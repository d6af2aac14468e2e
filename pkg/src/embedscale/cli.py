"""
Command-line entry point: ``embedscale {sweep,compare-drop,classify,stats,theory}``.
"""

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .data import InteractionFormat, NoiseSpec, SplitSpec, load_interactions, split, stats
from .errors import EmbedScaleError
from .graph import AugmentKind
from .models import ModelKind, ModelType
from .objectives import DropConfig
from .sweep import DEFAULT_DIM_CAP, SweepConfig, classify_curve, compare_drop, powers_of_two, run_sweep
from .theory import (
    QuadraticInstance,
    jacobian_bound_check,
    jacobian_sensitivity,
    lowpass_check,
    mixup_equivalence_check,
    verify_perturbation_bound,
)
from .tracing import FileStorage, init_tracer, trace
from .trainer import TrainConfig

_logger = logging.getLogger(__name__)


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def parse_dims(text: str) -> tuple[int, ...]:
    """``2..4096`` expands to powers of two; otherwise a comma-separated list."""
    if ".." in text:
        low, high = (int(part) for part in text.split("..", 1))
        dims = powers_of_two(low, high)
        if not dims:
            raise argparse.ArgumentTypeError(f"no power of two in {text}")
        return dims
    return tuple(int(part) for part in text.split(",") if part)


def parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part)


def parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part)


def _add_data_args(parser: argparse.ArgumentParser):
    parser.add_argument("--data", required=True, help="interaction file")
    parser.add_argument("--format", default=InteractionFormat.TSV_UIRT.value,
                        choices=[f.value for f in InteractionFormat])


def _add_sweep_args(parser: argparse.ArgumentParser):
    _add_data_args(parser)
    parser.add_argument("--model", required=True, choices=[t.value for t in ModelType])
    parser.add_argument("--dims", type=parse_dims, default=powers_of_two())
    parser.add_argument("--dim-cap", type=int, default=DEFAULT_DIM_CAP)
    parser.add_argument("--seeds", type=parse_int_list, default=(1,))
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--lr", type=float, default=0.001)
    parser.add_argument("--batch-size", type=int, default=2048)
    parser.add_argument("--patience", type=int, default=10)
    parser.add_argument("--noise-delta", type=float, default=None)
    parser.add_argument("--noise-seed", type=int, default=0)
    parser.add_argument("--drop-save-ratio", type=float, default=None)
    parser.add_argument("--drop-get-low", type=parse_bool, default=True)
    parser.add_argument("--sgl-gamma", type=float, default=0.1)
    parser.add_argument("--sgl-tau", type=float, default=0.2)
    parser.add_argument("--sgl-rho", type=float, default=0.1)
    parser.add_argument("--sgl-augment", default=AugmentKind.EDGE_DROPOUT.value,
                        choices=[k.value for k in AugmentKind])
    parser.add_argument("--layers", type=int, default=3)
    parser.add_argument("--valid-ratio", type=float, default=0.1)
    parser.add_argument("--test-ratio", type=float, default=0.1)
    parser.add_argument("--split-seed", type=int, default=42)
    parser.add_argument("--out", default="sweep.csv")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--classify", action="store_true", help="print the curve class per variant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embedscale", description="Embedding-dimension scaling laboratory")
    parser.add_argument("--log-level", default="INFO")
    parser.add_argument("--trace-dir", default=None, help="write run traces as JSON under this directory")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_sweep_args(sub.add_parser("sweep", help="run a dimension sweep"))

    compare = sub.add_parser("compare-drop", help="baseline vs drop-loss variants")
    _add_sweep_args(compare)
    compare.add_argument("--save-ratios", type=parse_float_list, default=(0.8, 0.85, 0.9, 0.95))
    compare.add_argument("--compare-out", default=None)

    classify = sub.add_parser("classify", help="classify curves in a sweep CSV")
    classify.add_argument("csv")
    classify.add_argument("--prominence", type=float, default=0.02)
    classify.add_argument("--min-r2", type=float, default=0.9)

    stats_parser = sub.add_parser("stats", help="print m,n,count,sparsity")
    _add_data_args(stats_parser)

    theory = sub.add_parser("theory", help="run the numerical theory checks")
    theory.add_argument("--data", default=None, help="optional interaction file for the mixup audit")
    theory.add_argument("--format", default=InteractionFormat.TSV_UIRT.value,
                        choices=[f.value for f in InteractionFormat])
    theory.add_argument("--trials", type=int, default=100)
    theory.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args: argparse.Namespace) -> SweepConfig:
    model_type = ModelType(args.model)
    if model_type is ModelType.SGL:
        model = ModelKind.sgl(n_layers=args.layers, rho=args.sgl_rho, gamma=args.sgl_gamma,
                              tau=args.sgl_tau, augment_kind=args.sgl_augment)
    elif model_type is ModelType.LIGHTGCN:
        model = ModelKind.lightgcn(n_layers=args.layers)
    else:
        model = ModelKind(model_type)

    drop = None
    if args.drop_save_ratio is not None:
        drop = DropConfig(save_ratio=args.drop_save_ratio, get_low=args.drop_get_low)
    noise = NoiseSpec(args.noise_delta, args.noise_seed) if args.noise_delta is not None else None
    train_ratio = 1.0 - args.valid_ratio - args.test_ratio
    return SweepConfig(
        model=model,
        data_path=args.data,
        data_format=args.format,
        dims=args.dims,
        train=TrainConfig(lr=args.lr, batch_size=args.batch_size, max_epochs=args.epochs, patience=args.patience),
        noise=noise,
        drop=drop,
        out=args.out,
        seeds=args.seeds,
        split=SplitSpec((train_ratio, args.valid_ratio, args.test_ratio), seed=args.split_seed),
        jobs=args.jobs,
        dim_cap=args.dim_cap,
    )


def _print_classes(frame: pd.DataFrame, prominence: float = 0.02, min_r2: float = 0.9):
    for (model, dataset, variant), group in frame.groupby(["model", "dataset", "variant"]):
        means = group.dropna(subset=["ndcg"]).groupby("dim")["ndcg"].mean().sort_index()
        if len(means) < 3:
            _logger.warning("%s/%s/%s: fewer than 3 dims, not classified", model, dataset, variant)
            continue
        curve = classify_curve(means.values, dims=means.index.values, prominence=prominence, min_r2=min_r2)
        best_dim = int(means.idxmax())
        print(json.dumps({"model": model, "dataset": dataset, "variant": variant,
                          "best_dim": best_dim, "shape": curve.variant.value, **curve.evidence}))


def _cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    with trace(f"sweep:{cfg.model.model_type.value}:{cfg.dataset}"):
        result = run_sweep(cfg)
    if args.classify:
        frame = result.frame().assign(model=result.model, dataset=result.dataset)
        _print_classes(frame)
    if result.failed:
        _logger.error("%d sweep points failed", len(result.failed))
        return 1
    return 0


def _cmd_compare(args) -> int:
    cfg = config_from_args(args)
    with trace(f"compare-drop:{cfg.model.model_type.value}:{cfg.dataset}"):
        comparison = compare_drop(cfg, args.save_ratios, get_low=args.drop_get_low, out=args.compare_out)
    print(comparison.table.to_csv(index=False), end="")
    if comparison.failed:
        _logger.error("%d sweep points failed", len(comparison.failed))
        return 1
    return 0


def _cmd_classify(args) -> int:
    frame = pd.read_csv(args.csv).rename(columns={"ndcg20": "ndcg"})
    _print_classes(frame, args.prominence, args.min_r2)
    return 0


def _cmd_stats(args) -> int:
    print("m,n,count,sparsity")
    print(stats(load_interactions(args.data, args.format)).to_csv_row())
    return 0


def _cmd_theory(args) -> int:
    records = []
    inst = QuadraticInstance.random(16, seed=args.seed)
    for delta in (0.01, 0.05, 0.1, 0.25, 0.5):
        records.append({"check": "perturbation", "delta": delta, **verify_perturbation_bound(inst, delta).to_dict()})

    rng = np.random.default_rng(args.seed)
    holds = 0
    for _ in range(args.trials):
        depth = int(rng.integers(1, 6))
        widths = rng.integers(2, 17, size=depth + 1)
        weights = [rng.standard_normal((widths[l], widths[l + 1])) for l in range(depth)]
        holds += jacobian_bound_check(weights, rng.standard_normal(widths[0])).verdict
    records.append({"check": "jacobian", "trials": args.trials, "holds": int(holds)})

    lowpass = lowpass_check()
    records.append({"check": "lowpass", "verdict": all(lowpass.values()), **{f"L{L}": ok for L, ok in lowpass.items()}})
    for report in jacobian_sensitivity(seed=args.seed).values():
        records.append({"check": "sensitivity", **report.to_dict()})

    if args.data:
        train_set, _, _ = split(load_interactions(args.data, args.format), SplitSpec())
        embeddings = rng.standard_normal((train_set.m + train_set.n, 64))
        records.append({"check": "mixup", **mixup_equivalence_check(train_set, embeddings).to_dict()})

    for record in records:
        print(json.dumps(record))
    failed = holds < args.trials or not all(r.get("verdict", True) for r in records)
    return 1 if failed else 0


_COMMANDS = {
    "sweep": _cmd_sweep,
    "compare-drop": _cmd_compare,
    "classify": _cmd_classify,
    "stats": _cmd_stats,
    "theory": _cmd_theory,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.trace_dir:
        init_tracer(storage=FileStorage(base_dir=args.trace_dir), run_id=args.command)

    try:
        return _COMMANDS[args.command](args)
    except EmbedScaleError as e:
        _logger.error("%s: %s", type(e).__name__, e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
