"""Net ops against naive reference implementations."""

from __future__ import annotations

import numpy as np
import pytest

from relmeta import nn
from relmeta.tensor import ShapeError, Tensor, grad


def naive_conv2d(x, w, b, pads):
    """Loop convolution (cross-correlation) oracle."""
    B, C, H, W = x.shape
    F, _, kh, kw = w.shape
    (pt, pb_), (pl, pr) = pads
    xp = np.zeros((B, C, H + pt + pb_, W + pl + pr))
    xp[:, :, pt : pt + H, pl : pl + W] = x
    Ho = xp.shape[2] - kh + 1
    Wo = xp.shape[3] - kw + 1
    out = np.zeros((B, F, Ho, Wo))
    for bi in range(B):
        for f in range(F):
            for i in range(Ho):
                for j in range(Wo):
                    out[bi, f, i, j] = np.sum(xp[bi, :, i : i + kh, j : j + kw] * w[f]) + b[f]
    return out


def naive_maxpool(x, k, s, p):
    B, C, H, W = x.shape
    xp = np.full((B, C, H + 2 * p, W + 2 * p), -np.inf)
    xp[:, :, p : p + H, p : p + W] = x
    Ho = (xp.shape[2] - k) // s + 1
    Wo = (xp.shape[3] - k) // s + 1
    out = np.zeros((B, C, Ho, Wo))
    for bi in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    out[bi, c, i, j] = xp[bi, c, i * s : i * s + k, j * s : j * s + k].max()
    return out


def test_conv2d_matches_loop_oracle() -> None:
    rng = np.random.default_rng(0)
    for _ in range(10):
        C, F, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 5))
        H = int(rng.integers(k, k + 6))
        x = rng.standard_normal((2, C, H, H))
        w = rng.standard_normal((F, C, k, k))
        b = rng.standard_normal(F)
        pb, pe = nn.same_pads(k)
        pads = ((pb, pe), (pb, pe))
        got = nn.conv2d(Tensor(x), Tensor(w), Tensor(b), 1, pads)
        want = naive_conv2d(x, w, b, pads)
        assert got.shape == want.shape
        assert np.allclose(got.data, want, atol=1e-10)


def test_conv2d_same_padding_preserves_extent() -> None:
    for k in (2, 4, 6):
        x = Tensor(np.zeros((1, 3, 16, 16)))
        w = Tensor(np.zeros((5, 3, k, k)))
        b = Tensor(np.zeros(5))
        pb, pe = nn.same_pads(k)
        out = nn.conv2d(x, w, b, 1, ((pb, pe), (pb, pe)))
        assert out.shape == (1, 5, 16, 16)


def test_conv2d_rejects_channel_mismatch() -> None:
    with pytest.raises(ShapeError):
        nn.conv2d(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((4, 2, 3, 3))), Tensor(np.zeros(4)))


def test_maxpool_matches_loop_oracle_and_halves() -> None:
    rng = np.random.default_rng(1)
    for H in (7, 8, 16, 33):
        x = rng.standard_normal((2, 3, H, H))
        got = nn.maxpool2d(Tensor(x), 3, 2, 1)
        want = naive_maxpool(x, 3, 2, 1)
        assert got.shape == want.shape
        assert got.shape[2] == (H + 1) // 2  # halve, round up
        assert np.allclose(got.data, want)


def test_maxpool_gradient_goes_to_argmax() -> None:
    # tie-free input: each window sends its unit gradient to its own argmax
    rng = np.random.default_rng(7)
    x = rng.permutation(36).astype(np.float64).reshape((1, 1, 6, 6))
    xt = Tensor(x, requires_grad=True)
    out = nn.maxpool2d(xt, 3, 2, 1)
    (g,) = grad(out.sum(), [xt])
    want = np.zeros((1, 1, 6, 6))
    xp = np.full((8, 8), -np.inf)
    xp[1:7, 1:7] = x[0, 0]
    for i in range(3):
        for j in range(3):
            win = xp[2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
            r, c = np.unravel_index(np.argmax(win), (3, 3))
            want[0, 0, 2 * i + r - 1, 2 * j + c - 1] += 1
    assert np.array_equal(g.data, want)


def test_batchnorm_normalises_batch() -> None:
    rng = np.random.default_rng(2)
    x = rng.standard_normal((8, 4, 5, 5)) * 3.0 + 1.5
    out = nn.batchnorm2d(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), state=None, training=True)
    m = out.data.mean(axis=(0, 2, 3))
    v = out.data.var(axis=(0, 2, 3))
    assert np.allclose(m, 0.0, atol=1e-6)
    assert np.allclose(v, 1.0, atol=1e-3)


def test_batchnorm_running_stats_converge_and_drive_eval() -> None:
    rng = np.random.default_rng(3)
    state = nn.BatchNormState.create(2, dtype=np.float64)
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    for _ in range(200):
        x = rng.standard_normal((16, 2, 4, 4)) * 2.0 + 3.0
        nn.batchnorm2d(Tensor(x), gamma, beta, state=state, training=True)
    assert state.count == 200
    assert np.allclose(state.mean, 3.0, atol=0.15)
    assert np.allclose(state.var, 4.0, atol=0.4)
    # eval mode uses the running stats, not the batch
    x = np.full((2, 2, 4, 4), 3.0)
    out = nn.batchnorm2d(Tensor(x), gamma, beta, state=state, training=False)
    assert np.allclose(out.data, 0.0, atol=0.2)


def test_batchnorm_eval_without_state_fails() -> None:
    with pytest.raises(ValueError):
        nn.batchnorm2d(Tensor(np.zeros((2, 2, 3, 3))), Tensor(np.ones(2)), Tensor(np.zeros(2)), state=None, training=False)


def test_dropout_scaling_preserves_expectation() -> None:
    rng = np.random.default_rng(4)
    x = Tensor(np.ones((200, 100)))
    out = nn.dropout(x, 0.5, rng)
    kept = out.data != 0
    assert abs(kept.mean() - 0.5) < 0.02
    assert np.allclose(out.data[kept], 2.0)  # inverted scaling
    assert abs(out.data.mean() - 1.0) < 0.05


def test_dropout_disabled_paths() -> None:
    x = Tensor(np.ones((3, 3)))
    assert nn.dropout(x, 0.5, None) is x
    assert nn.dropout(x, 0.0, np.random.default_rng(0)) is x
    with pytest.raises(ValueError):
        nn.dropout(x, 1.0, np.random.default_rng(0))


def test_cross_entropy_matches_logsumexp_oracle() -> None:
    from scipy.special import logsumexp

    rng = np.random.default_rng(5)
    for _ in range(20):
        B, C = int(rng.integers(2, 8)), int(rng.integers(2, 5))
        logits = rng.standard_normal((B, C)) * 5
        labels = rng.integers(0, C, size=B)
        got = nn.softmax_cross_entropy(Tensor(logits), labels).item()
        want = float(np.mean(logsumexp(logits, axis=1) - logits[np.arange(B), labels]))
        assert got == pytest.approx(want, rel=1e-10)


def test_cross_entropy_gradient_is_softmax_minus_onehot() -> None:
    rng = np.random.default_rng(6)
    logits = rng.standard_normal((5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    lt = Tensor(logits, requires_grad=True)
    (g,) = grad(nn.softmax_cross_entropy(lt, labels), [lt])
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    onehot = np.eye(3)[labels]
    assert np.allclose(g.data, (p - onehot) / 5, atol=1e-10)


def test_cross_entropy_extreme_logits_stay_finite() -> None:
    logits = Tensor(np.array([[1000.0, -1000.0], [-1000.0, 1000.0]]), requires_grad=True)
    loss = nn.softmax_cross_entropy(logits, np.array([0, 1]))
    assert np.isfinite(loss.item())
    (g,) = grad(loss, [logits])
    assert np.all(np.isfinite(g.data))


def test_cross_entropy_rejects_bad_labels() -> None:
    logits = Tensor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        nn.softmax_cross_entropy(logits, np.array([0, 5]))
    with pytest.raises(TypeError):
        nn.softmax_cross_entropy(logits, np.array([0.5, 1.0]))


def test_accuracy_and_predictions() -> None:
    logits = np.array([[2.0, 1.0], [0.0, 3.0], [1.0, 0.0], [0.0, 1.0]])
    labels = np.array([0, 1, 1, 1])
    assert nn.logits_to_predictions(logits).tolist() == [0, 1, 0, 1]
    assert nn.accuracy(logits, labels) == pytest.approx(0.75)


def test_same_pads_totals() -> None:
    for k in range(1, 8):
        pb, pe = nn.same_pads(k)
        assert pb + pe == k - 1
        assert 0 <= pb <= pe
