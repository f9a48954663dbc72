import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcfair.metrics import (
    GroupedPredictions,
    accuracy,
    delta_dp,
    delta_eo,
    fairness_report,
    group_positive_rates,
)


def rates_fixture(rates, size=10):
    """Groups whose positive-prediction rates equal ``rates`` exactly."""
    pred, group = [], []
    for s, r in enumerate(rates):
        k = int(round(r * size))
        pred += [1] * k + [0] * (size - k)
        group += [s] * size
    return GroupedPredictions(np.array(pred), np.zeros(len(pred), int), np.array(group))


def recall_fixture(rec1, rec0, size=10):
    pred, true, group = [], [], []
    for s, (r1, r0) in enumerate(zip(rec1, rec0)):
        k1, k0 = int(round(r1 * size)), int(round(r0 * size))
        pred += [1] * k1 + [0] * (size - k1) + [0] * k0 + [1] * (size - k0)
        true += [1] * size + [0] * size
        group += [s] * (2 * size)
    return GroupedPredictions(np.array(pred), np.array(true), np.array(group))


def test_three_group_dp():
    assert delta_dp(rates_fixture([0.9, 0.5, 0.1])) == pytest.approx(1.6 / 3, abs=1e-15)


def test_two_group_dp():
    assert delta_dp(rates_fixture([0.7, 0.5])) == pytest.approx(0.2, abs=1e-15)


def test_equal_rates_give_zero():
    assert delta_dp(rates_fixture([0.4, 0.4, 0.4])) == 0.0


def test_two_group_eo_recalls():
    g = recall_fixture(rec1=(0.8, 0.6), rec0=(0.9, 0.7))
    assert delta_eo(g) == pytest.approx(0.2, abs=1e-15)


def test_eo_perfect_classifier_is_zero():
    true = np.array([0, 1, 0, 1, 0, 1])
    assert delta_eo(GroupedPredictions(true, true, np.array([0, 0, 1, 1, 2, 2]))) == 0.0


def test_accuracy():
    g = GroupedPredictions([1, 0, 1, 1], [1, 1, 1, 0], [0, 0, 1, 1])
    assert accuracy(g) == 0.5


def test_empty_group_is_named():
    g = GroupedPredictions([1, 0], [1, 0], [0, 0], n_groups=3)
    with pytest.raises(ValueError, match="group 1"):
        delta_dp(g)


def test_empty_stratum_is_named():
    g = GroupedPredictions([1, 0, 1], [1, 0, 1], [0, 0, 1])
    with pytest.raises(ValueError, match="group 1 and label 0"):
        delta_eo(g)


def test_single_group_rejected():
    with pytest.raises(ValueError, match="two groups"):
        delta_dp(GroupedPredictions([1, 0], [1, 0], [0, 0]))


def test_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        GroupedPredictions([1, 0], [1], [0, 0])


def test_multiclass_needs_compat_off():
    g = GroupedPredictions([0, 1, 2, 0, 1, 2], [0, 1, 2, 0, 1, 1], [0, 0, 0, 1, 1, 1])
    with pytest.raises(ValueError, match="binary"):
        delta_eo(g, n_classes=3)
    g2 = GroupedPredictions([0, 1, 2, 0, 1, 1], [0, 1, 2, 0, 1, 2], [0, 0, 0, 1, 1, 1])
    # recalls group0 (1,1,1), group1 (1,1,0) -> gaps (0,0,1) averaged
    assert delta_eo(g2, n_classes=3, paper_compat=False) == pytest.approx(1 / 3)


def test_report_json_round_trip():
    g = recall_fixture(rec1=(0.8, 0.6), rec0=(0.9, 0.7))
    rep = fairness_report(g)
    d = json.loads(rep.to_json())
    assert d["delta_eo"] == pytest.approx(0.2)
    assert set(d["per_group_label_rates"]) == {"0", "1"}
    assert d["per_group_label_rates"]["0"]["1"] == pytest.approx(0.8)


groups_strategy = st.integers(2, 4).flatmap(
    lambda S: st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=4 * S, max_size=40).map(
        lambda rows: (S, rows)
    )
)


@settings(max_examples=80, deadline=None)
@given(groups_strategy, st.integers(0, 2**31 - 1))
def test_metric_invariants(spec, seed):
    S, rows = spec
    rng = np.random.default_rng(seed)
    n = len(rows)
    # every (group, label) stratum is populated by construction
    group = np.arange(n) % S
    true = (np.arange(n) // S) % 2
    pred = np.array([r[0] for r in rows])
    g = GroupedPredictions(pred, true, group)
    dp, eo = delta_dp(g), delta_eo(g)
    assert 0.0 <= dp <= 1.0 and 0.0 <= eo <= 1.0
    perm = rng.permutation(S)
    relabeled = GroupedPredictions(pred, true, perm[group])
    assert delta_dp(relabeled) == pytest.approx(dp, abs=1e-15)
    assert delta_eo(relabeled) == pytest.approx(eo, abs=1e-15)
    # demographic parity ignores the true labels
    other = GroupedPredictions(pred, np.array([r[1] for r in rows]), group)
    assert delta_dp(other) == dp
    np.testing.assert_array_equal(group_positive_rates(other), group_positive_rates(g))
