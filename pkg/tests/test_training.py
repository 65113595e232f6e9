import math
from dataclasses import asdict

import numpy as np
import pytest

from lipode.datasets import Dataset, synth_dataset
from lipode.errors import DivergenceError, InvalidArgumentError
from lipode.numerics import RELU
from lipode.resnet import (
    ResNetModel,
    WeightTensor,
    build_model,
    load_weights,
    penalty_gradient,
)
from lipode.training import (
    RECORD_FIELDS,
    Adam,
    cross_entropy,
    generalization_gap,
    loss_and_gradients,
    mean_cross_entropy,
    train,
)
from lipode.types import TrainConfig


@pytest.fixture(scope="module")
def data():
    train_set = synth_dataset(3, 40, 6, 2.0, seed=0)
    test_set = synth_dataset(3, 20, 6, 2.0, seed=1, split="test")
    return train_set, test_set


def _model(seed=0, L=8, tied=False):
    return build_model(6, 4, 3, L, seed=seed, weight_tied=tied)


def _without_time(record):
    rows = [asdict(m) for m in record.epochs]
    return [{k: v for k, v in row.items() if k != "wall_time"} for row in rows]


def test_cross_entropy_uniform_logits():
    loss, grad = cross_entropy(np.zeros((2, 4)), np.array([1, 3]))
    assert loss == pytest.approx(math.log(4.0))
    expected = np.full((2, 4), 0.25)
    expected[0, 1] -= 1.0
    expected[1, 3] -= 1.0
    np.testing.assert_allclose(grad, expected / 2)


def test_cross_entropy_is_stable_for_large_logits():
    loss, grad = cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_adam_matches_a_hand_trace():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    opt = Adam(lr, b1, b2, eps)
    p = {"w": np.array([1.0])}
    m = v = 0.0
    expected = 1.0
    for t, g in enumerate((1.0, -2.0, 0.5), start=1):
        p = opt.step(p, {"w": np.array([g])})
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        expected -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        assert p["w"][0] == pytest.approx(expected, rel=1e-14)
    assert opt.t == 3


def test_first_adam_step_moves_by_the_learning_rate():
    opt = Adam(0.02)
    out = opt.step({"w": np.zeros(3)}, {"w": np.array([5.0, -0.1, 1e-3])})
    np.testing.assert_allclose(out["w"], [-0.02, 0.02, -0.02], rtol=1e-4)


def test_penalty_gradient_is_added_to_the_loss_gradient(data):
    train_set, _ = data
    model = _model(seed=3)
    xb, yb = train_set.inputs[:16], train_set.labels[:16]
    loss0, pen0, g0 = loss_and_gradients(model, xb, yb, 0.0)
    loss1, pen1, g1 = loss_and_gradients(model, xb, yb, 0.3)
    value, pg = penalty_gradient(model.core, "frob_l2")
    assert loss0 == loss1
    assert pen0 == pen1 == pytest.approx(value)
    expected = g0["core"] + 0.3 * pg
    np.testing.assert_allclose(g1["core"], expected, rtol=0, atol=1e-10)
    np.testing.assert_array_equal(g1["input_proj"], g0["input_proj"])


def test_gap_is_test_minus_train(data):
    train_set, test_set = data
    model = _model()
    gap = generalization_gap(model, train_set, test_set)
    test_loss = mean_cross_entropy(model, test_set)
    assert gap == test_loss - mean_cross_entropy(model, train_set)


def test_gap_on_identical_sets_is_zero(data):
    train_set, _ = data
    assert generalization_gap(_model(), train_set, train_set) == 0.0


def test_untrained_gap_on_balanced_data_is_small():
    train_set = synth_dataset(3, 500, 6, 2.0, seed=10)
    test_set = synth_dataset(3, 500, 6, 2.0, seed=11, split="test")
    assert abs(generalization_gap(_model(seed=3), train_set, test_set)) < 0.1


def test_overfit_tiny_train_set_has_positive_gap():
    train_set = synth_dataset(3, 2, 6, 0.5, seed=20)
    test_set = synth_dataset(3, 200, 6, 0.5, seed=21, split="test")
    cfg = TrainConfig(epochs=300, batch_size=6, learning_rate=0.05, seed=2)
    model, record = train(_model(seed=4), train_set, cfg)
    assert record.final.train_loss < 0.3
    assert generalization_gap(model, train_set, test_set) > 0.0


def test_mean_cross_entropy_rejects_empty_data():
    empty = Dataset(np.zeros((0, 6)), np.zeros(0, dtype=np.int64), classes=3)
    with pytest.raises(InvalidArgumentError, match="empty"):
        mean_cross_entropy(_model(), empty)


def test_training_lowers_the_loss_and_records_every_epoch(data):
    train_set, test_set = data
    cfg = TrainConfig(epochs=4, batch_size=16, learning_rate=0.02, seed=1)
    _, record = train(_model(), train_set, cfg, test=test_set)
    assert [m.epoch for m in record.epochs] == [0, 1, 2, 3, 4]
    assert record.final.train_loss < record.initial.train_loss
    rows = record.rows()
    assert list(rows[0]) == RECORD_FIELDS
    for m in record.epochs:
        assert m.gap == pytest.approx(m.test_loss - m.train_loss)


def test_training_is_deterministic(data):
    train_set, test_set = data
    cfg = TrainConfig(epochs=2, batch_size=16, seed=4)
    m1, r1 = train(_model(seed=2), train_set, cfg, test=test_set)
    m2, r2 = train(_model(seed=2), train_set, cfg, test=test_set)
    assert _without_time(r1) == _without_time(r2)
    np.testing.assert_array_equal(m1.core.layers, m2.core.layers)


def test_frozen_projections_do_not_move(data):
    train_set, _ = data
    model = _model()
    cfg = TrainConfig(epochs=2, batch_size=16, train_projections=False)
    trained, _ = train(model, train_set, cfg)
    np.testing.assert_array_equal(trained.input_proj, model.input_proj)
    np.testing.assert_array_equal(trained.output_proj, model.output_proj)
    assert not np.array_equal(trained.core.layers, model.core.layers)


def test_weight_tied_training(data):
    train_set, test_set = data
    cfg = TrainConfig(epochs=2, batch_size=16, lam=math.inf)
    assert cfg.weight_tied
    trained, record = train(_model(), train_set, cfg, test=test_set)
    assert trained.core.weight_tied
    assert all(m.weight_lipschitz == 0.0 for m in record.epochs)
    assert all(m.penalty == 0.0 for m in record.epochs)


def test_large_penalty_shrinks_the_penalty(data):
    train_set, _ = data
    finals = {}
    for lam in (0.0, 10.0):
        cfg = TrainConfig(epochs=3, batch_size=16, lam=lam, seed=0)
        _, record = train(_model(seed=5, L=10), train_set, cfg)
        finals[lam] = record.final.penalty
    assert finals[10.0] < finals[0.0]


def test_checkpoints_are_written(data, tmp_path):
    train_set, _ = data
    cfg = TrainConfig(epochs=2, batch_size=32, checkpoint_dir=tmp_path / "ckpt")
    trained, _ = train(_model(), train_set, cfg)
    names = sorted(p.name for p in (tmp_path / "ckpt").iterdir())
    assert names == ["epoch_001.odrn", "epoch_002.odrn"]
    back = load_weights(tmp_path / "ckpt" / "epoch_002.odrn")
    np.testing.assert_array_equal(back.layers, trained.core.layers)


def test_shape_mismatch_is_rejected(data):
    train_set, _ = data
    model = build_model(5, 4, 3, 4)
    with pytest.raises(InvalidArgumentError):
        train(model, train_set, TrainConfig(epochs=1))


def test_overflow_is_reported_as_divergence():
    data = synth_dataset(3, 4, 3, 1.0)
    inputs = np.abs(data.inputs) + 1.0
    data = type(data)(inputs, data.labels, classes=3)
    model = ResNetModel(WeightTensor(np.full((2, 3, 3), 1e308)), activation=RELU)
    with pytest.raises(DivergenceError):
        train(model, data, TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(epochs=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(epochs=1, lam=-1.0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(epochs=1, penalty_kind="l1")
