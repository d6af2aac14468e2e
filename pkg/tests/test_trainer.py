"""
Tests for the Adam optimizer and the training loop.
"""

import pytest
from pathlib import Path
import sys
import tempfile

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from embedscale.data import Dataset
from embedscale.errors import ConfigError, EmptyDatasetError, NumericError
from embedscale.evaluator import evaluate
from embedscale.graph import build_normalized_adjacency
from embedscale.models import ModelKind, Params, init_params
from embedscale.objectives import DropConfig, ObjectiveConfig, ObjectiveType
from embedscale.trainer import AdamState, TrainConfig, adam_step, train
from embedscale.tracing import InMemoryStorage, init_tracer, trace


def scalar_params(value: float) -> Params:
    return Params(P=np.array([[value]]), Q=np.zeros((1, 1)))


def test_adam_zero_gradient():
    params = scalar_params(0.5)
    state = AdamState.init(params)
    new_params, new_state = adam_step(params, params.zeros_like(), state, lr=0.001)
    assert new_params.P[0, 0] == 0.5
    assert new_state.t == 1
    assert state.t == 0


def test_adam_first_step():
    params = scalar_params(0.0)
    grads = Params(P=np.array([[1.0]]), Q=np.zeros((1, 1)))
    new_params, _ = adam_step(params, grads, AdamState.init(params), lr=0.001)
    assert new_params.P[0, 0] == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-12)


def test_adam_moves_monotonically():
    params = scalar_params(0.0)
    grads = Params(P=np.array([[1.0]]), Q=np.zeros((1, 1)))
    state = AdamState.init(params)
    first, state = adam_step(params, grads, state, lr=0.01)
    second, _ = adam_step(first, grads, state, lr=0.01)
    assert 0.0 > first.P[0, 0] > second.P[0, 0]


def test_adam_rejects_non_finite_gradient():
    params = scalar_params(0.0)
    grads = Params(P=np.array([[np.nan]]), Q=np.zeros((1, 1)))
    with pytest.raises(NumericError):
        adam_step(params, grads, AdamState.init(params), lr=0.001)


def test_zero_epochs_returns_initial_params():
    train_set = Dataset.from_pairs(2, 2, [0, 1], [0, 1])
    valid = Dataset.from_pairs(2, 2, [0], [1])
    cfg = TrainConfig(dim=4, max_epochs=0, seed=3)
    params, history = train(ModelKind.bpr(), train_set, valid, cfg)
    initial = init_params(ModelKind.bpr(), 2, 2, 4, seed=3)
    np.testing.assert_array_equal(params.P, initial.P)
    assert history.epochs_trained == 0 and history.best_epoch is None


@pytest.mark.parametrize("kind", [ModelKind.bpr(), ModelKind.lightgcn(n_layers=1)])
def test_learns_separable_instance(kind):
    train_set = Dataset.from_pairs(2, 2, [0, 1], [0, 1])
    cfg = TrainConfig(dim=4, lr=0.05, batch_size=2, max_epochs=200, k_eval=1)
    # empty validation: the last epoch is returned
    params, history = train(kind, train_set, Dataset.empty_like(train_set), cfg)
    assert history.epochs_trained == 200

    adj = build_normalized_adjacency(train_set) if kind.is_graph else None
    # unmasked: each positive must outrank the other item on its own
    report = evaluate(kind, params, adj, [], train_set, k=1)
    assert report.ndcg_at_k == 1.0


def test_training_loss_decreases_on_separable_instance():
    train_set = Dataset.from_pairs(2, 2, [0, 1], [0, 1])
    cfg = TrainConfig(dim=8, lr=0.01, batch_size=2, max_epochs=10)
    _, history = train(ModelKind.bpr(), train_set, Dataset.empty_like(train_set), cfg)
    losses = np.array([rec.train_loss for rec in history.epochs])
    assert losses.size == 10
    assert np.all(np.diff(losses) < 0)


def test_returned_params_are_the_best_epoch_snapshot():
    # users 1-3 share items 0-2; item 3 is nobody's positive, so training
    # pushes user 0's held-out item 3 down the ranking
    train_set = Dataset.from_pairs(4, 4, [0, 1, 1, 1, 2, 2, 2, 3, 3, 3],
                                   [0, 0, 1, 2, 0, 1, 2, 0, 1, 2])
    valid = Dataset.from_pairs(4, 4, [0], [3])
    earlier_best = 0
    for seed in range(20):
        cfg = TrainConfig(dim=4, lr=0.05, batch_size=4, max_epochs=30, patience=30, seed=seed, k_eval=3)
        params, history = train(ModelKind.bpr(), train_set, valid, cfg)
        assert history.epochs_trained == 30
        assert history.best_ndcg == max(rec.valid_ndcg for rec in history.epochs)
        replay = evaluate(ModelKind.bpr(), params, None, [train_set], valid, k=3)
        assert replay.ndcg_at_k == history.best_ndcg
        earlier_best += history.best_epoch < history.epochs_trained
    assert earlier_best > 0


def test_frozen_run_stops_after_patience():
    valid = Dataset.from_pairs(2, 3, [0, 1], [2, 2])
    train_set = Dataset.from_pairs(2, 3, [0, 1], [0, 1])
    cfg = TrainConfig(dim=4, lr=0.0, max_epochs=50, patience=1)
    _, history = train(ModelKind.bpr(), train_set, valid, cfg)
    assert history.epochs_trained == 2
    assert history.best_epoch == 1
    assert history.stopped_early


def test_training_is_deterministic():
    rng = np.random.default_rng(0)
    keys = rng.choice(54, size=25, replace=False)
    # item 9 is held out for validation
    train_set = Dataset.from_pairs(6, 10, keys // 9, keys % 9)
    valid = Dataset.from_pairs(6, 10, [0, 1, 2], [9, 9, 9])
    cfg = TrainConfig(dim=4, lr=0.01, batch_size=8, max_epochs=5, seed=7,
                      objective=ObjectiveConfig(ObjectiveType.BPR_DROP, DropConfig(0.8)))
    a_params, a_hist = train(ModelKind.neumf(), train_set, valid, cfg)
    b_params, b_hist = train(ModelKind.neumf(), train_set, valid, cfg)
    assert a_hist.epochs == b_hist.epochs
    for x, y in zip(a_params.arrays(), b_params.arrays()):
        np.testing.assert_array_equal(x, y)


def test_sgl_objective_trains():
    train_set = Dataset.from_pairs(3, 4, [0, 0, 1, 2, 2], [0, 1, 2, 3, 1])
    valid = Dataset.from_pairs(3, 4, [0, 1], [2, 0])
    kind = ModelKind.sgl(n_layers=2, gamma=0.2)
    cfg = TrainConfig(dim=4, lr=0.01, max_epochs=3, objective=ObjectiveConfig(ObjectiveType.SGL))
    params, history = train(kind, train_set, valid, cfg)
    assert history.epochs_trained == 3
    assert params.is_finite()


def test_sgl_objective_needs_graph_model():
    train_set = Dataset.from_pairs(2, 2, [0], [0])
    cfg = TrainConfig(dim=2, objective=ObjectiveConfig(ObjectiveType.SGL))
    with pytest.raises(ConfigError):
        train(ModelKind.bpr(), train_set, train_set, cfg)


def test_empty_train_set():
    empty = Dataset.from_pairs(2, 2, [], [])
    with pytest.raises(EmptyDatasetError):
        train(ModelKind.bpr(), empty, empty, TrainConfig(dim=2))


def test_empty_validation_disables_early_stopping():
    train_set = Dataset.from_pairs(2, 3, [0, 1], [0, 1])
    empty = Dataset.empty_like(train_set)
    _, history = train(ModelKind.bpr(), train_set, empty, TrainConfig(dim=2, max_epochs=4, patience=1))
    assert history.epochs_trained == 4 and history.best_epoch == 4


@pytest.mark.parametrize("kwargs", [{"lr": -0.1}, {"batch_size": 0}, {"patience": 0}, {"dim": 0}])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_history_csv_and_metrics():
    storage = InMemoryStorage()
    init_tracer(storage=storage)
    train_set = Dataset.from_pairs(2, 3, [0, 1], [0, 1])
    valid = Dataset.from_pairs(2, 3, [0, 1], [2, 2])
    with trace("train_test"):
        _, history = train(ModelKind.bpr(), train_set, valid, TrainConfig(dim=2, max_epochs=3, patience=5))

    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "history.csv"
        history.to_csv(path)
        lines = path.read_text().splitlines()
        written = pd.read_csv(path)
    assert lines[0] == "epoch,train_loss,valid_ndcg"
    assert len(lines) == 4
    assert written["epoch"].tolist() == [1, 2, 3]
    np.testing.assert_allclose(written["train_loss"], history.frame()["train_loss"], rtol=1e-12)

    trace_data = storage.get_trace(storage.list_traces()[0]["trace_id"])
    span = next(s for s in trace_data["spans"] if s["name"] == "train")
    losses = [m for m in span["metrics"] if m["name"] == "train_loss"]
    assert [m["step"] for m in losses] == [1, 2, 3]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
