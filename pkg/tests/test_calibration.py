import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpeal.calibration import (
    EPS, anneal_alpha, balance_weights, calib_loss, entropy, grad_total_loss, partition, predict,
)
from cpeal.errors import ValidationError
from cpeal.heads import softmax


def oracle_entropy(p):
    return -sum(x * math.log(x) for x in p if x > 0)


def oracle_total_loss(z, y, alpha, wrong, right, gamma, beta):
    """Scalar loss with the partition and weights held fixed, in plain Python."""
    m = len(z)
    ce, li, lc = 0.0, 0.0, 0.0
    for i, row in enumerate(z):
        top = max(row)
        ex = [math.exp(v - top) for v in row]
        s = sum(ex)
        p = [v / s for v in ex]
        ce -= math.log(p[y[i]]) / m
        u = math.tanh(oracle_entropy(p))
        if i in wrong:
            li -= math.log(u + EPS) / len(wrong)
        if i in right:
            lc -= math.log(1.0 - u + EPS) / len(right)
    return ce + alpha * (gamma * lc + beta * li)


def fd_relative_error(z, y, alpha, interw=True, h=1e-4):
    p = softmax(z)
    wrong_idx, right_idx = partition(predict(p), y)
    wrong, right = set(wrong_idx.tolist()), set(right_idx.tolist())
    gamma, beta = balance_weights(len(right), len(wrong), interw)
    analytic = grad_total_loss(z, y, alpha, interw)
    numeric = np.zeros_like(z)
    for idx in np.ndindex(*z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        fp = oracle_total_loss(zp.tolist(), y.tolist(), alpha, wrong, right, gamma, beta)
        fm = oracle_total_loss(zm.tolist(), y.tolist(), alpha, wrong, right, gamma, beta)
        numeric[idx] = (fp - fm) / (2 * h)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return np.max(np.abs(analytic - numeric)) / scale


# --- entropy -----------------------------------------------------------------

def test_entropy_uniform_is_log_k():
    assert entropy(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)
    assert entropy(np.full(4, 0.25)) == pytest.approx(1.386294, abs=1e-6)


def test_entropy_one_hot_is_zero():
    assert entropy([0.0, 1.0, 0.0]) == 0.0


def test_entropy_three_class_value():
    p = [0.7, 0.2, 0.1]
    assert entropy(p) == pytest.approx(oracle_entropy(p), abs=1e-12)
    assert entropy(p) == pytest.approx(0.801819, abs=1e-6)


def test_entropy_rejects_bad_input():
    with pytest.raises(ValidationError):
        entropy([0.5, 0.6])
    with pytest.raises(ValidationError):
        entropy([1.5, -0.5])


# --- partition ---------------------------------------------------------------

def test_partition_definition():
    wrong, right = partition([0, 1, 2], [0, 2, 2])
    assert wrong.tolist() == [1]
    assert right.tolist() == [0, 2]


def test_partition_degenerate_and_mismatch():
    assert partition([1, 2], [1, 2])[0].size == 0
    assert partition([1, 2], [0, 0])[1].size == 0
    with pytest.raises(ValidationError):
        partition([0, 1], [0])


def test_argmax_tie_breaks_low():
    assert predict(np.array([[0.5, 0.5]]))[0] == 0


# --- calib_loss --------------------------------------------------------------

def test_two_sample_batch_values():
    p = np.array([[0.9, 0.1], [0.6, 0.4]])
    y = np.array([0, 1])
    h1, h2 = oracle_entropy(p[0]), oracle_entropy(p[1])
    assert (h1, h2) == pytest.approx((0.325083, 0.673012), abs=1e-6)
    lc = -math.log(1 - math.tanh(h1) + EPS)
    li = -math.log(math.tanh(h2) + EPS)
    out = calib_loss(p, y, alpha=0.5)
    assert out.loss_c == pytest.approx(lc, abs=1e-12)
    assert out.loss_i == pytest.approx(li, abs=1e-12)
    # exact evaluation gives 0.37702 / 0.53280 / 0.45491
    assert (out.loss_c, out.loss_i) == pytest.approx((0.37702, 0.53280), abs=5e-6)
    assert (out.gamma, out.beta) == (0.5, 0.5)
    assert out.loss_calib == pytest.approx(0.5 * (lc + li), abs=1e-12)
    assert out.loss_calib == pytest.approx(0.45491, abs=5e-6)
    ce = -(math.log(0.9) + math.log(0.4)) / 2
    assert out.loss_total == pytest.approx(ce + 0.5 * out.loss_calib, abs=1e-12)


def test_all_correct_batch_reduces_to_ce():
    p = np.array([[0.8, 0.2], [0.3, 0.7]])
    out = calib_loss(p, [0, 1], alpha=1.0)
    assert out.gamma == 0.0 and out.loss_i == 0.0
    assert out.loss_calib == 0.0
    assert out.loss_total == out.loss_ce


def test_all_incorrect_batch_has_zero_calib():
    p = np.array([[0.8, 0.2], [0.3, 0.7]])
    out = calib_loss(p, [1, 0], alpha=1.0)
    assert out.beta == 0.0 and out.loss_c == 0.0
    assert out.loss_calib == 0.0


def test_interw_off_uses_equal_weights():
    p = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
    out = calib_loss(p, [0, 1, 1], alpha=0.5, interw=False)
    assert (out.gamma, out.beta) == (0.5, 0.5)


def test_weights_follow_counts():
    p = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4], [0.9, 0.1]])
    out = calib_loss(p, [0, 1, 1, 0], alpha=0.5)
    assert out.n_incorrect == 1 and out.n_correct == 3
    assert out.gamma == pytest.approx(0.25)
    assert out.beta == pytest.approx(0.75)


def test_empty_batch_rejected():
    with pytest.raises(ValidationError):
        calib_loss(np.zeros((0, 3)), [], 0.5)


def test_monotonicity_on_two_class_simplex():
    # p0 from 0.5 to 1 lowers H; label 0 keeps the sample correct, label 1 incorrect
    ps = np.linspace(0.51, 0.99, 40)
    probs = np.stack([ps, 1 - ps], axis=1)
    hs = entropy(probs)
    lc = [calib_loss(p[None], [0], 1.0).loss_c for p in probs]
    li = [calib_loss(p[None], [1], 1.0).loss_i for p in probs]
    # sort by increasing entropy
    order = np.argsort(hs)
    assert np.all(np.diff(np.array(lc)[order]) > 0)
    assert np.all(np.diff(np.array(li)[order]) < 0)


@settings(max_examples=200, deadline=None)
@given(
    m=st.integers(1, 12),
    k=st.integers(1, 8),
    scale=st.floats(0.0, 50.0),
    seed=st.integers(0, 2**31),
    interw=st.booleans(),
)
def test_loss_invariants_property(m, k, scale, seed, interw):
    rng = np.random.default_rng(seed)
    probs = softmax(scale * rng.standard_normal((m, k)))
    y = rng.integers(k, size=m)
    out = calib_loss(probs, y, 0.7, interw)
    assert out.gamma + out.beta == pytest.approx(1.0)
    assert 0 <= out.gamma <= 1 and 0 <= out.beta <= 1
    # -log(1 - tanh H + eps) dips to -log(1 + eps) when H = 0
    assert out.loss_i >= 0 and out.loss_c >= -math.log1p(EPS)
    assert np.isfinite(out.loss_total)
    u = np.tanh(entropy(probs))
    assert np.all(u >= 0) and np.all(u <= math.tanh(math.log(k)) + 1e-12)


def test_tanh_bound_for_ten_classes():
    # tanh(ln 10) = (10 - 1/10) / (10 + 1/10) = 99/101
    assert np.tanh(entropy(np.full(10, 0.1))) == pytest.approx(99 / 101, abs=1e-12)


# --- gradient ----------------------------------------------------------------

def test_gradient_tied_logits_single_sample():
    g = grad_total_loss(np.array([[0.0, 0.0]]), np.array([0]), alpha=1.0)
    np.testing.assert_allclose(g, [[-0.5, 0.5]], atol=1e-15)


def test_alpha_zero_is_pure_ce():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((6, 4))
    y = rng.integers(4, size=6)
    p = softmax(z)
    expect = p.copy()
    expect[np.arange(6), y] -= 1
    np.testing.assert_allclose(grad_total_loss(z, y, 0.0), expect / 6, atol=1e-15)


def test_gradient_matches_finite_differences_m8_k5():
    rng = np.random.default_rng(2024)
    z = 2.0 * rng.standard_normal((8, 5))
    y = rng.integers(5, size=8)
    for alpha in (0.3, 1.0):
        assert fd_relative_error(z, y, alpha) < 1e-4


def test_gradient_interw_off_matches_finite_differences():
    rng = np.random.default_rng(7)
    z = 1.5 * rng.standard_normal((10, 3))
    y = rng.integers(3, size=10)
    assert fd_relative_error(z, y, 0.8, interw=False) < 1e-4


def test_gradient_rejects_non_finite():
    with pytest.raises(ValidationError):
        grad_total_loss(np.array([[np.nan, 0.0]]), [0], 0.5)


# --- annealing ---------------------------------------------------------------

def test_anneal_alpha_ramp():
    assert anneal_alpha(0, 10, 0.6) == 0.0
    assert anneal_alpha(10, 10, 0.6) == 0.6
    assert anneal_alpha(5, 10, 0.6) == pytest.approx(0.3)
    with pytest.raises(ValidationError):
        anneal_alpha(-1, 10, 0.6)
