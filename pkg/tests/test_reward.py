from dataclasses import replace

import numpy as np
import pytest

from a2tune.autodiff import Graph, backward, evaluate
from a2tune.latent import pool_groups
from a2tune.network import N_FEATURES
from a2tune.reward import (
    TARGETS, VARIANTS, DayObservation, Encoded, InputNodes, Preprocessor, RewardModels, TrainConfig, build_problem,
    evaluate_mse, init_params, make_pairs, models_equal, param_shapes, read_params, register, state_vector, train,
)
from conftest import random_action_world

FAST = TrainConfig(epochs=30, lr=1e-2, hidden=4, group_dim=2, state_dim=4)


class Fixed:
    """Predictor returning fixed arrays and recording the deltas it saw."""

    def __init__(self, beta, alpha):
        self.beta, self.alpha, self.seen = np.asarray(beta, float), np.asarray(alpha, float), None

    def predict(self, obs, graph, deltas):
        self.seen = np.asarray(deltas)
        return self.beta, self.alpha


def obs(day, a2, beta, alpha):
    n = len(a2)
    return DayObservation(day, np.asarray(a2, float), np.ones((24, n, N_FEATURES)), np.asarray(alpha, float),
                          np.asarray(beta, float))


def test_action_is_day_over_day_delta():
    a = obs(1, [-100, -100, -97], [1, 1, 1], [1, 1, 1])
    b = obs(2, [-98, -100, -97], [1, 1, 1], [1, 1, 1])
    model = Fixed([1, 1, 1], [1, 1, 1])
    evaluate_mse(model, (a, b), None)
    assert model.seen.tolist() == [2.0, 0.0, 0.0]


def test_mse_examples():
    a = obs(1, [-100] * 3, [1] * 3, [1] * 3)
    b = obs(2, [-100] * 3, [2.0] * 3, [2.0] * 3)
    assert evaluate_mse(Fixed(np.zeros(3), np.zeros(3)), (a, b), None) == (4.0, 4.0)
    assert evaluate_mse(Fixed(b.beta, b.alpha), (a, b), None) == (0.0, 0.0)
    c = obs(2, [-100] * 3, [1.0, 0.5, 2.0], [10.0, 20.0, 30.0])
    mse_b, mse_a = evaluate_mse(Fixed([1.5, 0.5, 1.0], [12.0, 17.0, 30.0]), (a, c), None)
    assert mse_b == pytest.approx((0.25 + 0 + 1) / 3)
    assert mse_a == pytest.approx((4 + 9 + 0) / 3)


def test_pairs_must_be_consecutive():
    a, b = obs(1, [-100], [1], [1]), obs(3, [-100], [1], [1])
    with pytest.raises(ValueError, match="consecutive"):
        make_pairs([a, b])


def test_training_needs_a_pair(world):
    graph, _, o, _ = world
    with pytest.raises(ValueError):
        train(o[:1], graph, FAST)


@pytest.mark.parametrize("variant", VARIANTS)
def test_predictions_positive_for_extreme_inputs(world, variant):
    graph, _, o, _ = world
    m = train(o[:3], graph, replace(FAST, variant=variant, epochs=3))
    wild = replace(o[0], hourly=o[0].hourly * 1e3, beta=o[0].beta * 50)
    beta, alpha = m.predict_grid(wild, graph, np.arange(-5, 6))
    assert np.all(beta > 0) and np.all(alpha > 0) and np.all(np.isfinite(alpha))


def test_variant_parameter_layout():
    keys = {v: set(param_shapes(replace(FAST, variant=v))) for v in VARIANTS}
    assert keys["MLP"] == {"state", "head_in", "head"}
    assert keys["GCN"] == keys["MLP"] | {"gcn"}
    assert keys["AG-GCN"] == keys["MLP"] | {"group1", "group2", "group3", "group4"}
    assert keys["TAG-GCN"] == keys["AG-GCN"] | {"rnn_in", "rnn_h"}
    assert set(param_shapes(replace(FAST, head_hidden=0))) == keys["TAG-GCN"] - {"head_in"}


def small_encoded(rng, n=3, k=2):
    return Encoded(rng.normal(size=(n, 1)), rng.normal(size=(n, N_FEATURES)), rng.normal(size=(n, k, N_FEATURES)),
                   rng.normal(size=(4, n, N_FEATURES)), rng.normal(size=(n, N_FEATURES)))


def tanh_affine(x, w):
    return np.tanh(x @ w[:-1] + w[-1])


@pytest.mark.parametrize("k", [1, 2])
def test_tag_state_matches_numpy_recurrence(k):
    rng = np.random.default_rng(0)
    enc = small_encoded(rng, k=k)
    p = init_params(FAST, rng)
    g = Graph()
    s = evaluate(g, state_vector(g, register(g, "m", p, frozen=True), InputNodes.build(g, enc, np.zeros(3)),
                                 "TAG-GCN"))
    h = np.zeros((3, FAST.hidden))
    for j in range(k):
        h = np.tanh(enc.seq[:, j] @ p["rnn_in"][:-1] + p["rnn_in"][-1] + h @ p["rnn_h"])
    z = [tanh_affine(enc.groups[r], p[f"group{r + 1}"]) for r in range(4)]
    expect = tanh_affine(np.hstack([enc.beta, h] + z), p["state"])
    np.testing.assert_allclose(s, expect, rtol=1e-12)


def test_zero_rnn_weights_give_zero_temporal_code():
    rng = np.random.default_rng(1)
    enc = small_encoded(rng)
    p = {k: np.zeros_like(v) for k, v in init_params(FAST, rng).items()}
    p["state"][1:1 + FAST.hidden] = 1.0  # pass the temporal code straight through
    g = Graph()
    s = evaluate(g, state_vector(g, register(g, "m", p, frozen=True), InputNodes.build(g, enc, np.zeros(3)),
                                 "TAG-GCN"))
    assert np.all(s == 0.0)


def test_moving_a_neighbour_across_a_quadrant_changes_h():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, N_FEATURES))
    before = pool_groups(x, [(1,), (2,), (), ()])
    after = pool_groups(x, [(1, 2), (), (), ()])
    w = [rng.normal(size=(N_FEATURES + 1, 2)) for _ in range(4)]
    h0 = np.hstack([tanh_affine(before[r], w[r]) for r in range(4)])
    h1 = np.hstack([tanh_affine(after[r], w[r]) for r in range(4)])
    assert not np.allclose(h0, h1)
    # an ungrouped mean cannot tell the two layouts apart
    np.testing.assert_allclose(x[[1, 2]].mean(0), x[[1, 2]].mean(0))


def test_within_group_permutation_is_bit_identical(world):
    graph, _, o, _ = world
    m = train(o[:3], graph, replace(FAST, epochs=5))
    perm = np.random.default_rng(3).permutation(graph.n)
    inv = np.argsort(perm)
    # relabelling cells shuffles neighbours within every group
    from a2tune.network import NetworkGraph
    g2 = NetworkGraph(tuple(graph.cells[i] for i in perm), graph.adjacency[np.ix_(perm, perm)], graph.tau)
    o2 = replace(o[2], a2=o[2].a2[perm], hourly=o[2].hourly[:, perm], alpha=o[2].alpha[perm], beta=o[2].beta[perm])
    b1, a1 = m.predict(o[2], graph, np.ones(graph.n))
    b2, a2 = m.predict(o2, g2, np.ones(graph.n))
    assert np.array_equal(b2[inv], b1) and np.array_equal(a2[inv], a1)


def constant_buffer(o):
    return [replace(x, beta=np.ones_like(x.beta), alpha=np.full_like(x.alpha, 5.0)) for x in o]


def test_loss_decreases_on_constant_targets(world):
    graph, _, o, _ = world
    m = train(constant_buffer(o[:3]), graph, TrainConfig(epochs=10, lambda_ratio=0, lambda_thr=0, validate=False))
    for t in TARGETS:
        assert np.all(np.diff(m.history[t]) < 0)


def norm(params):
    return sum(float((w ** 2).sum()) for w in params.values())


def test_huge_penalty_shrinks_weights(world):
    graph, _, o, _ = world
    cfg = replace(FAST, epochs=300, lambda_ratio=1e6, lambda_thr=1e6, validate=False)
    m = train(o[:3], graph, cfg)
    start = init_params(cfg, np.random.default_rng(cfg.seed))
    for t in TARGETS:
        assert norm(m.params[t]) < 1e-3 * norm(start)


def test_duplicated_pairs_give_identical_gradients(world):
    graph, _, o, _ = world
    pairs = make_pairs(o[:3])
    prep = Preprocessor.fit(o[:3])
    init = {t: init_params(FAST, np.random.default_rng(t == "beta")) for t in TARGETS}
    p1 = build_problem(pairs, graph, prep, FAST, init)
    p2 = build_problem(pairs + pairs, graph, prep, FAST, init)
    evaluate(p1.graph, p1.total), evaluate(p2.graph, p2.total)
    g1, g2 = backward(p1.graph, p1.total), backward(p2.graph, p2.total)
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)


def test_training_is_deterministic(world):
    graph, _, o, _ = world
    assert models_equal(train(o, graph, FAST), train(o, graph, FAST))


def test_parameter_file_round_trip(world, tmp_path):
    graph, _, o, _ = world
    m = train(o[:4], graph, replace(FAST, variant="AG-GCN"))
    m.save(tmp_path / "m.txt")
    back = RewardModels.load(tmp_path / "m.txt")
    assert models_equal(m, back) and back.cfg == m.cfg
    np.testing.assert_array_equal(m.predict_grid(o[3], graph, [-1, 0, 1])[1],
                                  back.predict_grid(o[3], graph, [-1, 0, 1])[1])


def test_parameter_file_rejects_truncated_rows(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# a2tune-params 1\nw 2 2 1.0 2.0 3.0\n")
    with pytest.raises(ValueError, match="expects 4"):
        read_params(path)


def test_action_input_is_live(world):
    graph, _, o, _ = world
    m = train(o, graph, replace(FAST, epochs=100))
    _, alpha = m.predict_grid(o[-1], graph, np.arange(-5, 6))
    assert np.ptp(alpha, axis=1).max() > 0
    assert len(set(np.argmax(alpha, axis=1))) > 1 or np.ptp(alpha[0]) > 0


def test_validation_picks_an_epoch_within_budget(world):
    graph, _, o, _ = world
    m = train(o, graph, replace(FAST, epochs=40))
    for t in TARGETS:
        assert 1 <= len(m.history[t]) <= 41


def test_warm_start_begins_from_given_weights(world):
    graph, _, o, _ = world
    m = train(o[:3], graph, replace(FAST, epochs=1, validate=False))
    m2 = train(o[:3], graph, replace(FAST, epochs=1, validate=False, seed=99), init=m)
    assert m2.history["beta"][0] == pytest.approx(m.history["beta"][-1], rel=1e-9)


@pytest.mark.parametrize("target", TARGETS)
def test_loss_gradients_match_finite_differences(target):
    graph, _, o, _ = random_action_world(cells=5, days=3, seed=4)
    cfg = TrainConfig(k=2, hidden=3, group_dim=2, state_dim=3)
    pairs = make_pairs(o)
    init = {t: init_params(cfg, np.random.default_rng(7)) for t in TARGETS}
    prob = build_problem(pairs, graph, Preprocessor.fit(o), cfg, init)
    loss = prob.losses[target]
    evaluate(prob.graph, loss)
    grads = backward(prob.graph, loss)
    eps = 1e-6
    worst = 0.0
    for name, w in prob.graph.params.items():
        if not name.startswith(target):
            continue
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + eps
            up = evaluate(prob.graph, loss)[0, 0]
            w[idx] = orig - eps
            down = evaluate(prob.graph, loss)[0, 0]
            w[idx] = orig
            fd = (up - down) / (2 * eps)
            g = grads[name][idx]
            worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1e-6))
    assert worst < 1e-4
