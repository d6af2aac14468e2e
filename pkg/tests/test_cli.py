"""
Tests for the embedscale command line.
"""

import json
import pytest
from pathlib import Path
import sys
import tempfile

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from embedscale.cli import build_parser, config_from_args, main, parse_bool, parse_dims
from embedscale.models import ModelType
from embedscale.objectives import ObjectiveType


@pytest.fixture
def workdir():
    with tempfile.TemporaryDirectory() as tmpdir:
        rng = np.random.default_rng(1)
        lines = []
        for u in range(10):
            for i in rng.choice(12, size=5, replace=False):
                lines.append(f"{u}\t{i}\t4\t88125{u}{i}\n")
        (Path(tmpdir) / "ratings.data").write_text("".join(lines))
        yield Path(tmpdir)


def test_parse_dims():
    assert parse_dims("2..16") == (2, 4, 8, 16)
    assert parse_dims("8,32,64") == (8, 32, 64)


def test_parse_bool():
    assert parse_bool("true") is True
    assert parse_bool("0") is False


def test_config_from_sgl_flags():
    args = build_parser().parse_args([
        "sweep", "--model", "sgl", "--data", "x.data", "--dims", "2..8",
        "--sgl-gamma", "0.3", "--sgl-tau", "0.5", "--sgl-rho", "0.2", "--layers", "2",
        "--drop-save-ratio", "0.9", "--drop-get-low", "false", "--seeds", "1,2,3",
    ])
    cfg = config_from_args(args)
    assert cfg.model.model_type is ModelType.SGL
    assert (cfg.model.gamma, cfg.model.tau, cfg.model.rho, cfg.model.n_layers) == (0.3, 0.5, 0.2, 2)
    assert cfg.dims == (2, 4, 8)
    assert cfg.seeds == (1, 2, 3)
    assert cfg.drop.save_ratio == 0.9 and not cfg.drop.get_low
    assert cfg.train.max_epochs == 100
    assert cfg.dataset == "x"


def test_stats_command(workdir, capsys):
    assert main(["stats", "--data", str(workdir / "ratings.data")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "m,n,count,sparsity"
    m, n, count, _ = lines[1].split(",")
    assert (int(m), int(count)) == (10, 50)


def test_sweep_command(workdir, capsys):
    out = workdir / "sweep.csv"
    code = main([
        "--log-level", "WARNING", "--trace-dir", str(workdir / "traces"),
        "sweep", "--model", "bpr", "--data", str(workdir / "ratings.data"),
        "--dims", "2..8", "--epochs", "1", "--out", str(out), "--classify",
    ])
    assert code == 0
    frame = pd.read_csv(out)
    assert len(frame) == 3
    assert frame["variant"].unique().tolist() == ["baseline"]

    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert record["variant"] == "baseline"
    assert record["shape"] in {"Logarithmic", "SinglePeak", "DoublePeak", "Other"}

    index = json.loads((workdir / "traces" / "index.json").read_text())
    assert index["traces"][0]["name"] == "sweep:bpr:ratings"


def test_compare_drop_command(workdir, capsys):
    code = main([
        "--log-level", "WARNING",
        "compare-drop", "--model", "bpr", "--data", str(workdir / "ratings.data"),
        "--dims", "2,4", "--epochs", "1", "--save-ratios", "0.9,1.0",
        "--out", str(workdir / "cmp.csv"),
    ])
    assert code == 0
    table = pd.read_csv(workdir / "cmp_compare.csv")
    assert len(table) == 6
    assert set(table["variant"]) == {"baseline", "drop-low-0.9", "drop-low-1"}


def test_compare_drop_exit_code_counts_single_seed_failures(workdir, monkeypatch):
    import embedscale.sweep as sweep_module
    from embedscale.errors import NumericError

    real_train = sweep_module.train

    def flaky_train(kind, train_set, valid, tcfg, adj=None):
        if tcfg.seed == 2:
            raise NumericError("non-finite loss nan")
        return real_train(kind, train_set, valid, tcfg, adj=adj)

    monkeypatch.setattr(sweep_module, "train", flaky_train)
    code = main([
        "compare-drop", "--model", "bpr", "--data", str(workdir / "ratings.data"),
        "--dims", "2,4", "--seeds", "1,2", "--epochs", "1", "--save-ratios", "0.9",
        "--out", str(workdir / "cmp.csv"),
    ])
    assert code == 1
    # every (dim, variant) cell still has a seed-1 mean
    assert pd.read_csv(workdir / "cmp_compare.csv")["ndcg"].notna().all()


def test_classify_command(workdir, capsys):
    path = workdir / "curve.csv"
    rows = [
        {"model": "bpr", "dataset": "d", "dim": dim, "seed": 1, "variant": "baseline",
         "ndcg20": value, "epochs_trained": 1, "wall_seconds": 0.1}
        for dim, value in zip((2, 4, 8, 16, 32), (0.1, 0.4, 0.2, 0.35, 0.1))
    ]
    pd.DataFrame(rows).to_csv(path, index=False)
    assert main(["classify", str(path)]) == 0
    record = json.loads(capsys.readouterr().out.strip())
    assert record["shape"] == "DoublePeak"
    assert record["best_dim"] == 4
    assert record["peak_dims"] == [4, 16]
    assert record["smoothed"] is False


def test_theory_command(workdir, capsys):
    code = main(["theory", "--trials", "5", "--data", str(workdir / "ratings.data")])
    assert code == 0
    records = [json.loads(line) for line in capsys.readouterr().out.strip().splitlines()]
    checks = {r["check"] for r in records}
    assert checks == {"perturbation", "jacobian", "lowpass", "sensitivity", "mixup"}


def test_parse_error_exit_code(workdir):
    bad = workdir / "bad.data"
    bad.write_text("1 2 3\n")
    assert main(["stats", "--data", str(bad)]) == 2


def test_failed_points_give_nonzero_exit(workdir, monkeypatch):
    import embedscale.sweep as sweep_module
    from embedscale.errors import NumericError

    def broken_train(*args, **kwargs):
        raise NumericError("non-finite gradient")

    monkeypatch.setattr(sweep_module, "train", broken_train)
    code = main([
        "sweep", "--model", "bpr", "--data", str(workdir / "ratings.data"),
        "--dims", "2", "--out", str(workdir / "broken.csv"),
    ])
    assert code == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
