from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iceprune.netcore import Dense, Network, ReLU
from iceprune.pruning import (CRITERIA, Criterion, PruneAction, PruneSchedule, alpha, apply_prune,
                              histogram_entropy, param_count, prune_count, prune_step, read_schedule,
                              score_structures, total_param_count, uniform_schedule, write_schedule)

from helpers import random_data, small_cnn
from oracles import count_params_by_enumeration, entropy_loops, lowest_k, masked_forward


def oracle_scores(net, layer, kind, calib, c):
    """Per-structure scores computed with explicit loops."""
    n = net.layers[layer].out_structures
    if kind == "l1_norm":
        # inputs fed by already-pruned structures upstream no longer exist
        w = net.layers[layer].params["weight"]
        prev = [i for i in net.masks if i < layer]
        keep_in = net.masks[prev[-1]] if prev else np.ones(w.shape[1], bool)
        per = w.shape[1] // keep_in.size
        return [sum(float(np.abs(w[j, k]).sum()) for k in range(w.shape[1]) if keep_in[k // per])
                for j in range(n)]
    if kind == "random":
        return list(np.random.default_rng([c.rng_seed, layer]).random(n))
    act = masked_forward(net, calib.x[:c.calib_batch_size], upto=layer)
    if layer + 1 < len(net.layers) and isinstance(net.layers[layer + 1], ReLU):
        act = np.maximum(act, 0)
    pooled = [[float(np.mean(act[s, j])) for s in range(len(act))] for j in range(n)]
    if kind == "mean_activation":
        return [sum(col) / len(col) for col in pooled]
    return [entropy_loops(col, c.histogram_bins) for col in pooled]


@pytest.mark.parametrize("kind", CRITERIA)
@pytest.mark.parametrize("seed", range(3))
def test_pruned_set_matches_sort_oracle(kind, seed):
    net = small_cnn(seed)
    calib = random_data(12, seed=seed)
    c = Criterion(kind, rng_seed=seed, calib_batch_size=10, histogram_bins=6)
    for layer, ratio in ((0, 0.5), (3, 0.6), (7, 0.5), (9, 0.4)):
        scores = oracle_scores(net, layer, kind, calib, c)
        expect = lowest_k(scores, prune_count(ratio, len(scores)))
        got = prune_step(net, PruneAction(layer, ratio), c, calib)
        assert got.tolist() == expect, (kind, layer)
        assert np.flatnonzero(~net.masks[layer]).tolist() == expect


def test_entropy_of_constant_map_is_zero_and_pruned_first():
    assert histogram_entropy(np.full(50, 3.2), 16) == 0.0
    net = small_cnn(2)
    w = net.layers[3].params["weight"]
    w[2] = 0
    net.layers[3].params["bias"][2] = 0.7
    calib = random_data(20, seed=1)
    c = Criterion("entropy", calib_batch_size=20)
    scores = score_structures(net, 3, c, calib)
    assert scores[2] == 0.0 and np.all(np.delete(scores, 2) > 0)
    assert prune_step(net, PruneAction(3, 0.2), c, calib).tolist() == [2]


def test_ties_prune_the_lower_index():
    net = small_cnn()
    assert apply_prune(net, PruneAction(7, 0.5), np.array([1.0, 0, 1, 0, 0, 2])).tolist() == [1, 3, 4]
    net2 = small_cnn()
    assert apply_prune(net2, PruneAction(0, 0.5), np.ones(4)).tolist() == [0, 1]


def test_masks_only_turn_off_and_reprune_is_idempotent():
    net = small_cnn()
    calib = random_data(8)
    c = Criterion()
    first = prune_step(net, PruneAction(3, 0.4), c, calib)
    mask = net.masks[3].copy()
    again = prune_step(net, PruneAction(3, 0.4), c, calib)
    assert len(first) == 2 and len(again) == 0
    np.testing.assert_array_equal(mask, net.masks[3])
    more = prune_step(net, PruneAction(3, 0.8), c, calib)
    assert len(more) == 2 and not np.any(net.masks[3] & ~mask)


@pytest.mark.parametrize("ratio,n,k", [(0.6, 8, 4), (0.6, 5, 3), (2 / 3, 3, 2), (0.0, 9, 0), (0.99, 4, 3)])
def test_prune_count(ratio, n, k):
    assert prune_count(ratio, n) == k


def test_activation_criteria_need_data():
    with pytest.raises(ValueError, match="calibration"):
        score_structures(small_cnn(), 0, Criterion("entropy"))
    with pytest.raises(ValueError):
        Criterion("taylor")


def test_random_criterion_is_seeded():
    a = score_structures(small_cnn(), 7, Criterion("random", rng_seed=4))
    b = score_structures(small_cnn(1), 7, Criterion("random", rng_seed=4))
    np.testing.assert_array_equal(a, b)


# -- accounting ----------------------------------------------------------------

def test_param_count_single_dense():
    net = Network([Dense(4, 3)], (4,))
    assert param_count(net) == 15
    net.masks[0][1] = False
    assert param_count(net) == 10


def test_param_count_propagates_to_next_layer():
    net = Network([Dense(3, 10), ReLU(), Dense(10, 1, prunable=False)], (3,))
    assert param_count(net) == 40 + 11
    net.masks[0][[0, 5]] = False
    assert param_count(net) == (40 - 2 * 4) + (11 - 2)


def test_param_count_through_flatten():
    net = small_cnn()
    full = param_count(net)
    assert full == total_param_count(net)
    net.masks[3][0] = False
    # conv3 loses 4*9 weights + 1 bias, dense7 loses one 2x2 block per unit
    assert param_count(net) == full - (4 * 9 + 1) - 4 * 6


@pytest.mark.parametrize("seed", range(50))
def test_param_count_matches_enumeration_and_alpha_is_exact(seed):
    rng = np.random.default_rng(seed)
    net = small_cnn(seed)
    original = param_count(net)
    for i in net.prunable_indices:
        m = rng.random(net.masks[i].size) < 0.6
        if not m.any():
            m[rng.integers(m.size)] = True
        net.masks[i] = m
    count = param_count(net)
    assert count == count_params_by_enumeration(net)
    a = alpha(net, original)
    assert isinstance(a, Fraction) and 0 < a <= 1
    assert a * original == count


# -- schedules -------------------------------------------------------------------

def test_uniform_schedule_covers_prunable_layers_in_order():
    s = uniform_schedule(small_cnn(), 0.6)
    assert [(a.layer_index, a.target_ratio) for a in s] == [(0, 0.6), (3, 0.6), (7, 0.6), (9, 0.6)]
    assert len(uniform_schedule(small_cnn(), 0.5, steps=2)) == 2


def test_schedule_validation():
    net = small_cnn()
    with pytest.raises(ValueError):
        PruneSchedule(())
    with pytest.raises(ValueError, match="not prunable"):
        PruneSchedule((PruneAction(11, 0.5),)).validate(net)
    with pytest.raises(ValueError, match="twice"):
        PruneSchedule((PruneAction(0, 0.5), PruneAction(0, 0.6))).validate(net)
    with pytest.raises(ValueError):
        PruneSchedule((PruneAction(0, 1.0),)).validate(net)


def test_schedule_file_round_trip(tmp_path):
    s = PruneSchedule((PruneAction(3, 0.25), PruneAction(0, 0.6)))
    write_schedule(s, tmp_path / "s.txt")
    assert (tmp_path / "s.txt").read_text() == "3,0.25\n0,0.6\n"
    assert read_schedule(tmp_path / "s.txt") == s
    (tmp_path / "bad.txt").write_text("# comment\n3;0.5\n")
    with pytest.raises(ValueError, match=":2:"):
        read_schedule(tmp_path / "bad.txt")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 0.95))
def test_retained_count_after_pruning(seed, ratio):
    net = small_cnn(seed % 20)
    n = net.masks[7].size
    prune_step(net, PruneAction(7, ratio), Criterion("random", rng_seed=seed))
    assert int(net.masks[7].sum()) == n - prune_count(ratio, n)
    assert net.masks[7].sum() >= 1
