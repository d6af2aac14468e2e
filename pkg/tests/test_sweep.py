"""
Tests for dimension sweeps, the drop comparison and curve classification.
"""

import math
import pytest
from pathlib import Path
import sys
import tempfile

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import embedscale.sweep as sweep_module
from embedscale.errors import ConfigError, InsufficientDataError, NumericError
from embedscale.models import ModelKind
from embedscale.objectives import DropConfig
from embedscale.sweep import (
    CSV_HEADER, CurveShape, SweepConfig, Variant, classify_curve, compare_drop,
    powers_of_two, run_sweep, smooth,
)
from embedscale.trainer import TrainConfig
from embedscale.tracing import get_tracer

FAST = TrainConfig(lr=0.01, batch_size=64, max_epochs=2, patience=2)


@pytest.fixture
def workdir():
    with tempfile.TemporaryDirectory() as tmpdir:
        rng = np.random.default_rng(0)
        lines = []
        for u in range(12):
            for i in rng.choice(15, size=6, replace=False):
                lines.append(f"user{u}\titem{i}\n")
        (Path(tmpdir) / "tiny.txt").write_text("".join(lines))
        yield Path(tmpdir)


def make_config(workdir: Path, **overrides) -> SweepConfig:
    kwargs = dict(
        model=ModelKind.bpr(),
        data_path=str(workdir / "tiny.txt"),
        data_format="tsv-ui",
        dims=(2,),
        train=FAST,
        out=str(workdir / "sweep.csv"),
        seeds=(1,),
    )
    kwargs.update(overrides)
    return SweepConfig(**kwargs)


def test_powers_of_two():
    assert powers_of_two(2, 16) == (2, 4, 8, 16)
    assert powers_of_two(3, 20) == (4, 8, 16)
    assert powers_of_two()[-1] == 4096


def test_single_point_writes_one_row(workdir):
    cfg = make_config(workdir)
    result = run_sweep(cfg)
    frame = pd.read_csv(cfg.out)
    assert list(frame.columns) == CSV_HEADER
    assert len(frame) == 1
    row = frame.iloc[0]
    assert (row["model"], row["dataset"], row["dim"], row["seed"], row["variant"]) == \
        ("bpr", "tiny", 2, 1, "baseline")
    assert 0.0 <= row["ndcg20"] <= 1.0
    assert result.completed and result.trained == 1


def test_cartesian_product(workdir):
    cfg = make_config(workdir, dims=(2, 4), seeds=(1, 2))
    result = run_sweep(cfg)
    assert len(pd.read_csv(cfg.out)) == 4
    assert {(p.dim, p.seed) for p in result.points} == {(2, 1), (2, 2), (4, 1), (4, 2)}
    assert list(result.mean_by_dim().index) == [2, 4]


def test_parallel_jobs_write_every_row(workdir):
    cfg = make_config(workdir, model=ModelKind.lightgcn(n_layers=1), dims=(2, 4, 8), seeds=(1, 2), jobs=3)
    result = run_sweep(cfg)
    frame = pd.read_csv(cfg.out)
    assert len(frame) == 6
    assert len(frame.drop_duplicates(["dim", "seed", "variant"])) == 6
    assert result.completed


def test_parallel_matches_serial(workdir):
    serial = run_sweep(make_config(workdir, dims=(2, 4), out=str(workdir / "serial.csv")))
    parallel = run_sweep(make_config(workdir, dims=(2, 4), jobs=2, out=str(workdir / "parallel.csv")))
    assert [p.ndcg for p in serial.points] == [p.ndcg for p in parallel.points]


def test_rerun_trains_nothing(workdir):
    cfg = make_config(workdir, dims=(2, 4))
    run_sweep(cfg)
    again = run_sweep(cfg)
    assert again.trained == 0
    assert len(again.points) == 2
    assert len(pd.read_csv(cfg.out)) == 2


def test_failed_point_is_recorded_and_retried(workdir, monkeypatch):
    cfg = make_config(workdir, dims=(2, 4))
    real_train = sweep_module.train

    def flaky_train(kind, train_set, valid, tcfg, adj=None):
        if tcfg.dim == 4:
            raise NumericError("non-finite loss nan")
        return real_train(kind, train_set, valid, tcfg, adj=adj)

    monkeypatch.setattr(sweep_module, "train", flaky_train)
    result = run_sweep(cfg)
    assert not result.completed
    assert [p.dim for p in result.failed] == [4]
    frame = pd.read_csv(cfg.out)
    assert frame.loc[frame["dim"] == 4, "ndcg20"].isna().all()

    monkeypatch.setattr(sweep_module, "train", real_train)
    retry = run_sweep(cfg)
    assert retry.trained == 1 and retry.completed
    frame = pd.read_csv(cfg.out)
    assert len(frame) == 2 and frame["ndcg20"].notna().all()


def test_unexpected_exception_fails_only_its_point(workdir, monkeypatch):
    cfg = make_config(workdir, dims=(2, 4, 8))
    real_train = sweep_module.train
    trained_dims = []

    def crashing_train(kind, train_set, valid, tcfg, adj=None):
        trained_dims.append(tcfg.dim)
        if tcfg.dim == 2:
            raise np.linalg.LinAlgError("SVD did not converge")
        return real_train(kind, train_set, valid, tcfg, adj=adj)

    monkeypatch.setattr(sweep_module, "train", crashing_train)
    result = run_sweep(cfg)
    assert sorted(trained_dims) == [2, 4, 8]
    assert [p.dim for p in result.failed] == [2]

    frame = pd.read_csv(cfg.out)
    assert sorted(frame["dim"]) == [2, 4, 8]
    assert frame.loc[frame["dim"] == 2, "ndcg20"].isna().all()
    assert frame.loc[frame["dim"] != 2, "ndcg20"].notna().all()
    assert get_tracer()._parents == {}


def test_resume_keeps_other_pairs_failed_rows(workdir):
    cfg = make_config(workdir, dims=(2,))
    rows = [
        ["neumf", "tiny", 2, 1, "baseline", np.nan, 0, 0.1],
        ["bpr", "other", 2, 1, "baseline", np.nan, 0, 0.1],
        ["bpr", "tiny", 4, 1, "baseline", np.nan, 0, 0.1],
    ]
    pd.DataFrame(rows, columns=CSV_HEADER).to_csv(cfg.out, index=False, na_rep="nan")

    run_sweep(cfg)
    frame = pd.read_csv(cfg.out)
    keys = set(zip(frame["model"], frame["dataset"], frame["dim"]))
    assert keys == {("neumf", "tiny", 2), ("bpr", "other", 2), ("bpr", "tiny", 2)}
    untouched = frame[frame["model"].eq("neumf") | frame["dataset"].eq("other")]
    assert untouched["ndcg20"].isna().all()


def test_compare_drop_reports_failed_seeds(workdir, monkeypatch):
    cfg = make_config(workdir, dims=(2, 4), seeds=(1, 2))
    real_train = sweep_module.train

    def flaky_train(kind, train_set, valid, tcfg, adj=None):
        if tcfg.seed == 2:
            raise NumericError("non-finite loss nan")
        return real_train(kind, train_set, valid, tcfg, adj=adj)

    monkeypatch.setattr(sweep_module, "train", flaky_train)
    comparison = compare_drop(cfg, [0.9])
    # the seed-1 points still fill every cell of the mean table
    assert comparison.table["ndcg"].notna().all()
    assert len(comparison.failed) == 4
    assert {p.seed for p in comparison.failed} == {2}


def test_drop_variant_label(workdir):
    cfg = make_config(workdir, drop=DropConfig(save_ratio=0.9))
    result = run_sweep(cfg)
    assert result.points[0].variant == "drop-low-0.9"
    assert Variant.for_model(ModelKind.sgl()).objective.objective.value == "sgl"


@pytest.mark.parametrize("overrides", [
    {"dims": (4, 2)},
    {"dims": ()},
    {"dims": (2, 8192)},
    {"seeds": (1, 1)},
    {"jobs": 0},
])
def test_invalid_config(workdir, overrides):
    with pytest.raises(ConfigError):
        make_config(workdir, **overrides)


def test_compare_drop_full_retention_matches_baseline(workdir):
    cfg = make_config(workdir, dims=(2, 4))
    table = compare_drop(cfg, [1.0]).table
    assert list(table.columns) == ["dim", "variant", "ndcg"]
    for _, group in table.groupby("dim"):
        values = dict(zip(group["variant"], group["ndcg"]))
        assert values["baseline"] == values["drop-low-1"]
    written = pd.read_csv(workdir / "sweep_compare.csv")
    assert len(written) == 4


def test_compare_drop_grid_row_count(workdir):
    cfg = make_config(workdir, dims=(2, 4, 8, 16, 32), train=TrainConfig(max_epochs=1))
    table = compare_drop(cfg, [0.8, 0.85, 0.9, 0.95], out=str(workdir / "grid.csv")).table
    assert len(table) == 25
    assert list(table["variant"][:5]) == ["baseline", "drop-low-0.8", "drop-low-0.85",
                                          "drop-low-0.9", "drop-low-0.95"]
    assert len(pd.read_csv(cfg.out)) == 25


def test_compare_drop_needs_grid(workdir):
    with pytest.raises(ConfigError):
        compare_drop(make_config(workdir), [])


def test_classify_logarithmic():
    dims = powers_of_two(2, 1024)
    points = [0.05 + 0.02 * math.log(d) for d in dims]
    curve = classify_curve(points, dims)
    assert curve.variant is CurveShape.LOGARITHMIC
    assert curve.evidence["r2"] == pytest.approx(1.0)


def test_classify_single_peak():
    assert classify_curve([0.1, 0.5, 0.2]).variant is CurveShape.SINGLE_PEAK


def test_classify_double_peak():
    curve = classify_curve([0.1, 0.4, 0.2, 0.35, 0.1])
    assert curve.variant is CurveShape.DOUBLE_PEAK
    assert curve.evidence["peak_dims"] == [4, 16]


def test_classify_flat_is_other():
    assert classify_curve([0.3, 0.3, 0.3]).variant is CurveShape.OTHER


def test_classify_decreasing_is_other():
    assert classify_curve([0.5, 0.4, 0.3, 0.2]).variant is CurveShape.OTHER


def test_classify_ignores_tiny_bumps():
    points = [0.10, 0.20, 0.30, 0.3001, 0.3000, 0.40, 0.45, 0.48]
    curve = classify_curve(points)
    assert curve.variant is not CurveShape.DOUBLE_PEAK


def test_classify_is_affine_invariant():
    rng = np.random.default_rng(5)
    for _ in range(20):
        points = rng.random(9)
        base = classify_curve(points)
        scaled = classify_curve(3.5 * points + 0.2)
        assert base.variant is scaled.variant
        assert base.evidence["peak_dims"] == scaled.evidence["peak_dims"]


def test_classify_smoothing_depends_on_curve_length():
    short = classify_curve([0.1, 0.4, 0.2, 0.35, 0.1])
    padded = classify_curve([0.1, 0.4, 0.2, 0.35, 0.1, 0.08, 0.06])
    assert short.variant is CurveShape.DOUBLE_PEAK and not short.evidence["smoothed"]
    assert padded.variant is CurveShape.SINGLE_PEAK and padded.evidence["smoothed"]


def test_classify_needs_three_points():
    with pytest.raises(InsufficientDataError):
        classify_curve([0.1, 0.2])


def test_smooth_keeps_endpoints():
    values = np.array([1.0, 4.0, 1.0, 4.0])
    np.testing.assert_allclose(smooth(values), [1.0, 2.0, 3.0, 4.0])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
