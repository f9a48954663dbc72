import json
import math
from dataclasses import replace

import numpy as np
import pytest

from dcfair import nn
from dcfair.data import Dataset, split, synth_biased
from dcfair.stats import cdc_stat, dcov, silverman_bandwidth
from dcfair.train import (
    DualState,
    PenaltySpec,
    TrainConfig,
    dual_update,
    fit,
    history_lines,
    penalty_value_and_grad,
    train_epoch,
)

FAST = TrainConfig(epochs=4, batch_size=256, hidden=(16, 16), milestones=(2,))


@pytest.fixture(scope="module")
def small():
    return split(synth_biased(600, 0.9, seed=1), seed=1)


def test_none_penalty_is_zero(rng):
    p = nn.softmax(rng.normal(size=(5, 2)))
    v, g = penalty_value_and_grad(PenaltySpec("none"), p, np.eye(2)[[0, 1, 0, 1, 1]])
    assert v == 0.0 and np.all(g == 0)


def test_dc_delegates_to_dcov(rng):
    p = nn.softmax(rng.normal(size=(20, 2)))
    Z = np.eye(2)[rng.integers(0, 2, 20)]
    v, _ = penalty_value_and_grad(PenaltySpec("dc"), p, Z)
    assert v == pytest.approx(dcov(p, Z).value, rel=1e-12)


def test_cdc_delegates_to_cdc_stat(rng):
    p = nn.softmax(rng.normal(size=(20, 2)))
    Z = np.eye(2)[rng.integers(0, 2, 20)]
    Y = np.eye(2)[rng.integers(0, 2, 20)]
    v, _ = penalty_value_and_grad(PenaltySpec("cdc"), p, Z, Y)
    assert v == pytest.approx(cdc_stat(p, Z, Y, silverman_bandwidth(20, 2)).value, rel=1e-10)


def test_cdc_requires_labels(rng):
    p = nn.softmax(rng.normal(size=(4, 2)))
    with pytest.raises(ValueError, match="labels"):
        penalty_value_and_grad(PenaltySpec("cdc"), p, np.eye(2)[[0, 1, 0, 1]])


def test_penalty_spec_validation():
    with pytest.raises(ValueError, match="penalty kind"):
        PenaltySpec("hsic")
    with pytest.raises(ValueError, match="positive"):
        PenaltySpec("cdc", bandwidth=-1.0)
    assert PenaltySpec("cdc", bandwidth="0.3").resolve_bandwidth(10, 2) == 0.3


def test_dual_update_hand_value():
    d = DualState(1.0, 0.5)
    for v in (0.1, 0.3, 0.2):
        d.record(v)
    nxt = dual_update(d)
    assert nxt.lam == pytest.approx(1.1, rel=1e-15)
    assert nxt.batch_count == 0 and nxt.epoch_penalty_sum == 0.0


def test_dual_update_ceiling_and_empty():
    d = DualState(1.0, 10.0, lam_max=1.5)
    d.record(1.0)
    assert dual_update(d).lam == 1.5
    with pytest.raises(ValueError):
        dual_update(DualState(1.0, 0.5))


def test_single_step_hand_update():
    # 1 -> 2 linear model, batch of two points, plain SGD
    X = np.array([[1.0], [-1.0]])
    labels = np.array([1, 0])
    ds = Dataset(X, labels, np.array([0, 1]), 2, 2)
    cfg = TrainConfig(epochs=1, batch_size=2, lr=0.5, momentum=0.0, hidden=(), lambda_init=0.0)
    model = nn.Mlp([nn.DenseLayer(np.zeros((2, 1)), np.zeros(2))])
    train_epoch(model, ds, DualState(0.0, 0.0), cfg, 0)
    # zero weights give p = 1/2; dL/dz = (p - onehot) / 2
    # dW = [[+0.5], [-0.5]] summed over both rows, db = 0
    np.testing.assert_allclose(model.layers[0].weights, [[-0.25], [0.25]])
    np.testing.assert_allclose(model.layers[0].biases, [0.0, 0.0])


def test_singleton_batch_counts_zero(small):
    train = small[0]
    cfg = replace(FAST, batch_size=len(train) - 1, penalty=PenaltySpec("dc"))
    dual = DualState(1.0, 0.5)
    model = nn.init_mlp([train.X.shape[1], 16, 16, 2])
    _, stats = train_epoch(model, train, dual, cfg, 0)
    assert len(stats.penalties) == 2 and stats.penalties[1] == 0.0


def test_zero_epochs_returns_initial_model(small):
    model, hist = fit(small[0], replace(FAST, epochs=0))
    assert hist == []
    init = nn.init_mlp([small[0].X.shape[1], 16, 16, 2], FAST.seed)
    assert np.array_equal(model.layers[0].weights, init.layers[0].weights)


@pytest.mark.parametrize("kind", ["dc", "cdc"])
def test_lambda_trace_nondecreasing(small, kind):
    _, hist = fit(small[0], replace(FAST, penalty=PenaltySpec(kind)), small[1])
    lams = [h["lambda"] for h in hist] + [hist[-1]["lambda_next"]]
    assert all(b >= a for a, b in zip(lams, lams[1:]))
    assert lams[-1] > lams[0]


@pytest.mark.parametrize("kind", ["dc", "cdc"])
def test_zero_lambda_matches_none(small, kind):
    m0, h0 = fit(small[0], replace(FAST, penalty=PenaltySpec("none")), small[1])
    m1, h1 = fit(small[0], replace(FAST, lambda_init=0.0, beta=0.0, penalty=PenaltySpec(kind)), small[1])
    for a, b in zip(m0.layers, m1.layers):
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
    assert [h["val_accuracy"] for h in h0] == [h["val_accuracy"] for h in h1]


def test_fit_deterministic(small):
    cfg = replace(FAST, penalty=PenaltySpec("dc"))
    (m0, h0), (m1, h1) = fit(small[0], cfg), fit(small[0], cfg)
    assert history_lines(h0) == history_lines(h1)
    assert np.array_equal(m0.layers[-1].weights, m1.layers[-1].weights)


def test_lr_schedule():
    cfg = TrainConfig(lr=0.1, lr_decay=10.0, milestones=(15, 30))
    assert [cfg.lr_at(e) for e in (0, 14, 15, 29, 30)] == pytest.approx([0.1, 0.1, 0.01, 0.01, 0.001])


def test_config_validation_lists_every_problem():
    errors = TrainConfig(epochs=-1, lr=0.0, momentum=1.0).validate()
    assert len(errors) == 3
    with pytest.raises(ValueError, match="invalid training config"):
        fit(synth_biased(200, 0.5), TrainConfig(batch_size=1))


def test_config_dict_round_trip():
    cfg = TrainConfig(milestones=(3,), penalty=PenaltySpec("cdc", 0.4))
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert TrainConfig.from_dict({"penalty": "dc"}).penalty.kind == "dc"
    with pytest.raises(ValueError, match="unknown config keys"):
        TrainConfig.from_dict({"epoch": 3})


def test_history_lines_write_null_for_nan():
    line = history_lines([{"epoch": 0, "val_ddp": math.nan}])
    assert json.loads(line) == {"epoch": 0, "val_ddp": None}
