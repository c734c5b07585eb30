import math
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from iceprune.freezing import (LayerDelta, layer_scores, probe_and_freeze, select_frozen,
                               weight_snapshot)
from iceprune.netcore import Dense, Network, ReLU

from helpers import small_cnn


def deltas(scores):
    return [LayerDelta(i, 0.0, 1.0, s) for i, s in enumerate(scores)]


def test_lowest_scores_are_frozen():
    assert select_frozen(deltas([0.5, 0.1, 0.3, 0.2]), 0.5).frozen_layer_indices == {1, 3}


def test_equal_scores_freeze_the_lower_index():
    assert select_frozen(deltas([0.2, 0.1, 0.2, 0.3]), 0.5).frozen_layer_indices == {0, 1}


@pytest.mark.parametrize("eta,k", [(0.0, 0), (0.19, 0), (0.2, 1), (0.5, 2), (0.99, 4)])
def test_frozen_count_is_floor_of_eta_times_layers(eta, k):
    assert len(select_frozen(deltas([0.3, 0.1, 0.4, 0.2, 0.5]), eta).frozen_layer_indices) == k


def test_eta_range():
    with pytest.raises(ValueError):
        select_frozen(deltas([1.0]), 1.0)


def test_score_hand_example():
    net = Network([Dense(2, 1, prunable=False)], (2,))
    net.layers[0].params["weight"][:] = [[3.0, 4.0]]
    before = weight_snapshot(net)
    net.layers[0].params["weight"][:] = [[3.5, 4.5]]
    net.layers[0].params["bias"][:] = 100.0  # biases do not count
    (d,) = layer_scores(before, net)
    assert (d.l1_change, d.init_l2, d.score) == pytest.approx((1.0, 5.0, 0.2))


def test_zero_norm_layer_warns_and_is_never_frozen():
    net = Network([Dense(2, 2), ReLU(), Dense(2, 1, prunable=False)], (2,))
    net.layers[0].params["weight"][:] = 0
    before = weight_snapshot(net)
    with pytest.warns(UserWarning, match="zero initial weight norm"):
        ds = layer_scores(before, net)
    assert math.isinf(ds[0].score)
    assert select_frozen(ds, 0.5).frozen_layer_indices == {2}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 500), st.lists(st.floats(0.01, 100), min_size=5, max_size=5))
def test_ranking_ignores_per_layer_weight_scale(seed, scales):
    net = small_cnn(seed % 10)
    rng = np.random.default_rng(seed)
    before = weight_snapshot(net)
    for i in net.parameterized_indices:
        net.layers[i].params["weight"] += rng.standard_normal(before[i].shape).astype(np.float32) * 0.1
    base = layer_scores(before, net)
    scaled_before = {i: before[i].astype(np.float64) * s for i, s in zip(sorted(before), scales)}
    scaled = net.copy().astype(np.float64)
    for i, s in zip(sorted(before), scales):
        scaled.layers[i].params["weight"] *= s
    again = layer_scores(scaled_before, scaled)
    for a, b in zip(base, again):
        assert b.score == pytest.approx(a.score, rel=1e-5)
    ordered = sorted(d.score for d in base)
    assume(all(b - a > 1e-4 * b for a, b in zip(ordered, ordered[1:])))
    assert select_frozen(base, 0.6) == select_frozen(again, 0.6)


def test_probe_keeps_updates_and_freezes_least_moving():
    net = small_cnn(1)
    moves = {0: 0.5, 3: 0.001, 7: 0.2, 9: 0.0001, 11: 0.3}

    def fake_fine_tune(n):
        for i, m in moves.items():
            n.layers[i].params["weight"] += m

    fs, ds = probe_and_freeze(net, 0.4, fake_fine_tune)
    assert fs.frozen_layer_indices == {3, 9}
    assert [d.layer_index for d in ds] == [0, 3, 7, 9, 11]
    assert net.layers[3].frozen and net.layers[9].frozen and not net.layers[0].frozen
    oracle = sorted(ds, key=lambda d: (d.score, d.layer_index))[:2]
    assert {d.layer_index for d in oracle} == fs.frozen_layer_indices
