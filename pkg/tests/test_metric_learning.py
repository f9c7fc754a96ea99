import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (embed_two_step, fd_gradient, fd_gradient_brute, random_raw,
                     triplet_loss_direct)
from semloc.errors import DegenerateNormError, FormatError, NumericError
from semloc.geo import Triplet
from semloc.metric_learning import (EmbeddingModel, TrainConfig, embed, embed_many,
                                    identity_model, init_weights, load_model, loss_gradient,
                                    save_model, train, triplet_loss)


def _random_model(rng, d_out=5, d_in=9, margin=0.2):
    return EmbeddingModel(rng.normal(size=(d_out, d_in)) / math.sqrt(d_in), margin)


# ---------------------------------------------------------------------------
# embed


def test_identity_on_unit_vector():
    x = np.array([0.6, 0.0, 0.8])
    np.testing.assert_array_equal(embed(identity_model(3), x), x)


def test_identity_scale_invariance():
    u = np.array([0.0, 0.6, 0.8])
    np.testing.assert_allclose(embed(identity_model(3), 2 * u), u, atol=1e-15)


def test_embed_matches_two_step_oracle():
    rng = np.random.default_rng(1)
    model = _random_model(rng, 64, 168)
    for _ in range(20):
        x = random_raw(rng)
        e = embed(model, x)
        assert abs(np.linalg.norm(e) - 1) < 1e-9
        np.testing.assert_allclose(e, embed_two_step(model.W, x), rtol=1e-12, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_embed_positive_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    model = _random_model(rng)
    x = rng.random(9)
    np.testing.assert_allclose(embed(model, c * x), embed(model, x), atol=1e-12)
    assert abs(np.linalg.norm(embed(model, x)) - 1) < 1e-9


def test_embed_errors():
    model = identity_model(3)
    with pytest.raises(ValueError, match="shape"):
        embed(model, np.ones(4))
    with pytest.raises(DegenerateNormError):
        embed(model, np.zeros(3))


def test_embed_many_rows():
    rng = np.random.default_rng(2)
    model = _random_model(rng)
    X = rng.random((4, 9))
    np.testing.assert_array_equal(embed_many(model, X), np.stack([embed(model, x) for x in X]))


# ---------------------------------------------------------------------------
# triplet_loss


def test_loss_equal_positive_and_negative_is_margin():
    e = np.array([0.6, 0.8])
    assert triplet_loss(np.array([1.0, 0.0]), e, e, 0.3) == pytest.approx(0.3, abs=1e-15)


def test_loss_inactive_hinge():
    assert triplet_loss([1.0, 0.0], [1.0, 0.0], [0.0, 1.0], 0.5) == 0.0


def test_loss_hand_example():
    # ||a-p||^2 = 0.4, ||a-n||^2 = 0.8
    assert triplet_loss([1, 0], [0.8, 0.6], [0.6, 0.8], 0.5) == pytest.approx(0.1, abs=1e-12)


def test_loss_errors():
    with pytest.raises(ValueError):
        triplet_loss([1, 0], [1, 0, 0], [1, 0], 0.2)
    with pytest.raises(ValueError):
        triplet_loss([1, 0], [1, 0], [1, 0], 0.0)


# ---------------------------------------------------------------------------
# loss_gradient


def test_inactive_triplet_gradient_is_exactly_zero():
    model = identity_model(3)
    g = loss_gradient(model, [1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0])
    assert np.all(g == 0.0) and g.shape == (3, 3)


def test_gradient_matches_brute_force_fd_small():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 5:
        model = _random_model(rng, 3, 6)
        xa, xp, xn = rng.random((3, 6))
        if triplet_loss_direct(model.W, xa, xp, xn, model.margin) < 1e-3:
            continue
        np.testing.assert_allclose(loss_gradient(model, xa, xp, xn),
                                   fd_gradient_brute(model.W, xa, xp, xn, model.margin),
                                   rtol=1e-4, atol=1e-8)
        checked += 1


def test_batched_fd_oracle_agrees_with_brute_force():
    rng = np.random.default_rng(6)
    W = rng.normal(size=(4, 7))
    xa, xp, xn = rng.random((3, 7))
    np.testing.assert_allclose(fd_gradient(W, xa, xp, xn, 1.0),
                               fd_gradient_brute(W, xa, xp, xn, 1.0), rtol=1e-6, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_fd_full_size(seed):
    rng = np.random.default_rng(seed)
    model = _random_model(rng, 64, 168)
    xa, xp, xn = (random_raw(rng) for _ in range(3))
    model = EmbeddingModel(model.W, margin=1.0)   # keep the hinge active
    assert triplet_loss_direct(model.W, xa, xp, xn, 1.0) > 1e-3
    np.testing.assert_allclose(loss_gradient(model, xa, xp, xn),
                               fd_gradient(model.W, xa, xp, xn, 1.0), rtol=1e-4, atol=1e-8)


def test_swapping_positive_and_negative_negates_gradient():
    rng = np.random.default_rng(8)
    for _ in range(10):
        # margin above the largest possible gap (4) keeps both orders active
        model = EmbeddingModel(rng.normal(size=(5, 9)), margin=5.0)
        xa, xp, xn = rng.random((3, 9))
        g1 = loss_gradient(model, xa, xp, xn)
        g2 = loss_gradient(model, xa, xn, xp)
        assert np.any(g1 != 0)
        np.testing.assert_allclose(g1, -g2, rtol=1e-10, atol=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 2.0))
def test_hinge_flatness(seed, margin):
    rng = np.random.default_rng(seed)
    model = _random_model(rng, margin=margin)
    xa, xp, xn = rng.random((3, 9))
    loss = triplet_loss(*(embed(model, x) for x in (xa, xp, xn)), margin)
    g = loss_gradient(model, xa, xp, xn)
    if loss == 0.0:
        assert np.all(g == 0.0)
    else:
        assert np.any(g != 0.0)


# ---------------------------------------------------------------------------
# train


def _toy_problem(seed=0, n=40, d=12):
    rng = np.random.default_rng(seed)
    centers = rng.random((4, d))
    labels = np.arange(n) % 4
    X = centers[labels] + 0.3 * rng.random((n, d))
    triplets = []
    for a in range(n):
        same = [i for i in range(n) if labels[i] == labels[a] and i != a]
        diff = [i for i in range(n) if labels[i] != labels[a]]
        triplets.append(Triplet(a, int(rng.choice(same)), int(rng.choice(diff))))
    return X, triplets


def test_zero_learning_rate_keeps_initialization():
    X, ts = _toy_problem()
    cfg = TrainConfig(learning_rate=0.0, epochs=1, d_out=4, seed=3)
    model, log = train(X, ts, cfg)
    np.testing.assert_array_equal(model.W, init_weights(12, cfg))
    assert len(log.mean_loss) == 1


def test_init_scale():
    W = init_weights(10_000, TrainConfig(d_out=4, init_scale=2.0, seed=1))
    assert np.std(W) == pytest.approx(2.0 / 100, rel=0.02)


def test_epochs_must_be_positive():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_train_log_and_loss_decrease():
    X, ts = _toy_problem()
    cfg = TrainConfig(learning_rate=0.5, epochs=15, batch_size=8, d_out=4)
    _, log = train(X, ts, cfg)
    assert len(log.mean_loss) == len(log.active_fraction) == 15
    assert all(math.isfinite(v) and v >= 0 for v in log.mean_loss)
    assert all(0 <= f <= 1 for f in log.active_fraction)
    assert log.mean_loss[-1] < log.mean_loss[0]


def test_train_is_bit_deterministic():
    X, ts = _toy_problem(1)
    cfg = TrainConfig(learning_rate=0.2, epochs=5, batch_size=7, d_out=6, seed=9)
    m1, log1 = train(X, ts, cfg)
    m2, log2 = train(X, ts, cfg)
    assert m1.W.tobytes() == m2.W.tobytes()
    assert log1 == log2


def test_degenerate_triplets_are_skipped():
    X, ts = _toy_problem()
    X = np.vstack([X, np.zeros(12)])
    ts = ts + [Triplet(len(X) - 1, 0, 1)]
    _, log = train(X, ts, TrainConfig(epochs=2, d_out=4))
    assert log.skipped == [1, 1]


def test_all_degenerate_raises():
    X = np.zeros((3, 4))
    with pytest.raises(NumericError):
        train(X, [Triplet(0, 1, 2)], TrainConfig(epochs=1, d_out=2))


def test_divergent_learning_rate_raises():
    X, ts = _toy_problem()
    with pytest.raises(NumericError):
        train(X, ts, TrainConfig(learning_rate=1e308, epochs=3, d_out=4))


@pytest.mark.parametrize("triplets, match", [([], "no triplets"), ([Triplet(0, 1, 99)], "range")])
def test_train_rejects_bad_triplets(triplets, match):
    with pytest.raises(ValueError, match=match):
        train(np.ones((3, 4)), triplets, TrainConfig(d_out=2))


# ---------------------------------------------------------------------------
# model file


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 5), st.integers(0, 2**32 - 1),
       st.floats(1e-6, 10), st.floats(1e-300, 1e-3))
def test_model_round_trip(d_out, extra, seed, margin, eps):
    W = np.random.default_rng(seed).normal(size=(d_out, d_out + extra)) * 10.0 ** (seed % 7 - 3)
    m = EmbeddingModel(W, margin, eps)
    data = save_model(m)
    assert load_model(data) == m
    assert save_model(load_model(data)) == data


def test_model_file_uses_17_significant_digits():
    data = save_model(EmbeddingModel(np.array([[0.1, 1.0]]), 0.2))
    assert b"margin 0.20000000000000001\n" in data
    assert data.endswith(b"\nW\n0.10000000000000001 1\n")


def test_handwritten_minimal_model():
    text = (b"semloc-embedding-model\nversion 1\nd_in 2\nd_out 1\nmargin 0.2\n"
            b"norm_epsilon 1e-12\nW\n1 0\n")
    m = load_model(text)
    assert embed(m, [1.0, 0.0]).tolist() == [1.0]
    with pytest.raises(DegenerateNormError):
        embed(m, [0.0, 1.0])


@pytest.mark.parametrize("text, match", [
    (b"semloc-embedding-model\nversion 1\nd_in 1\nd_out 2\nmargin 0.2\n"
     b"norm_epsilon 1e-12\nW\n1\n2\n", "shape"),
    (b"semloc-embedding-model\nversion 2\nd_in 2\nd_out 1\nmargin 0.2\n"
     b"norm_epsilon 1e-12\nW\n1 0\n", "version"),
    (b"semloc-embedding-model\nversion 1\nd_in 2\nd_out 1\nmargin 0.2\n"
     b"norm_epsilon 1e-12\nW\n1 0 3\n", "expected 2 values"),
    (b"semloc-embedding-model\nversion 1\nd_in 2\nd_out 2\nmargin 0.2\n"
     b"norm_epsilon 1e-12\nW\n1 0\n", "weight rows"),
    (b"something else\n", "not a model file"),
])
def test_model_file_errors(text, match):
    with pytest.raises(FormatError, match=match):
        load_model(text)
