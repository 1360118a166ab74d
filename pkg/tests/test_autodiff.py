import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxsketch import autodiff as ad
from voxsketch.autodiff import (
    AdamConfig,
    Parameter,
    ShapeError,
    Tensor,
    adam_step,
    bce_with_logits,
    conv3d,
    depth_to_space,
    embedding,
    gradient_check,
    layernorm,
    masked_cross_entropy,
    matmul,
    precision,
    softmax,
    space_to_depth,
)


def matmul_oracle(a, b):
    """Naive triple loop, independent of the production path."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += float(a[i, l]) * float(b[l, j])
    return out


class TestMatmul:
    def test_identity(self):
        x = np.arange(9, dtype=np.float32).reshape(3, 3)
        out = matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(x))
        np.testing.assert_array_equal(out.data, x)

    def test_zeros(self):
        x = np.random.default_rng(0).normal(size=(2, 5)).astype(np.float32)
        out = matmul(Tensor(np.zeros((2, 2), dtype=np.float32)), Tensor(x))
        np.testing.assert_array_equal(out.data, np.zeros((2, 5)))

    def test_against_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(3, 4)).astype(np.float32)
        b = rng.normal(size=(4, 2)).astype(np.float32)
        got = matmul(Tensor(a), Tensor(b)).data
        want = matmul_oracle(a, b)
        assert np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-12)) < 1e-6

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_batched_matches_per_slice(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 3, 5)).astype(np.float32)
        b = rng.normal(size=(4, 5, 2)).astype(np.float32)
        got = matmul(Tensor(a), Tensor(b)).data
        for i in range(4):
            np.testing.assert_allclose(got[i], a[i] @ b[i], rtol=1e-6)


class TestSoftmax:
    def test_uniform(self):
        out = softmax(Tensor(np.zeros(4))).data
        np.testing.assert_allclose(out, [0.25, 0.25, 0.25, 0.25], atol=1e-7)

    def test_shift_invariance(self):
        x = np.array([0.3, -1.2, 2.0, 0.0], dtype=np.float64)
        a = softmax(Tensor(x)).data
        b = softmax(Tensor(x + 123.456)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_analytic_quarter_three_quarters(self):
        out = softmax(Tensor(np.array([0.0, math.log(3.0)]))).data
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-7)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=16))
    @settings(max_examples=100, deadline=None)
    def test_rows_sum_to_one(self, vals):
        out = softmax(Tensor(np.array(vals, dtype=np.float64))).data
        assert abs(out.sum() - 1.0) < 1e-6
        assert (out >= 0).all()

    def test_sum_of_softmax_has_zero_gradient(self):
        x = Tensor(np.array([0.4, -1.0, 2.5], dtype=np.float64), requires_grad=True)
        softmax(x).sum().backward()
        assert np.max(np.abs(x.grad)) < 1e-12


class TestMaskedCrossEntropy:
    def test_uniform_logits_all_masked(self):
        n, k = 6, 512
        loss = masked_cross_entropy(
            Tensor(np.zeros((n, k))), np.zeros(n, dtype=int), np.ones(n, dtype=bool)
        )
        assert abs(loss.item() - math.log(512)) < 1e-6

    def test_confident_prediction_drives_loss_to_zero(self):
        logits = np.zeros((3, 5))
        targets = np.array([1, 2, 4])
        logits[np.arange(3), targets] = 50.0
        loss = masked_cross_entropy(Tensor(logits), targets, np.ones(3, dtype=bool))
        assert loss.item() < 1e-8

    def test_invariant_to_unmasked_logits(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(8, 7))
        targets = rng.integers(0, 7, size=8)
        mask = np.array([1, 0, 1, 0, 0, 1, 0, 1], dtype=bool)
        base = masked_cross_entropy(Tensor(logits), targets, mask).item()
        perturbed = logits.copy()
        perturbed[~mask] += rng.normal(size=(4, 7)) * 100
        after = masked_cross_entropy(Tensor(perturbed), targets, mask).item()
        assert abs(base - after) < 1e-12

    def test_zero_masked_positions_rejected(self):
        with pytest.raises(ValueError):
            masked_cross_entropy(
                Tensor(np.zeros((2, 3))), np.zeros(2, dtype=int), np.zeros(2, dtype=bool)
            )


def adam_oracle_trajectory(x0, grad_fn, lr, beta1, beta2, eps, steps):
    """Scalar Adam reference in plain python floats."""
    x, m, v = x0, 0.0, 0.0
    history = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        history.append(x)
    return history


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = Parameter(np.array([1.0, -2.0, 3.0]))
        p.value.grad = np.zeros(3)
        before = p.data.copy()
        adam_step(p, AdamConfig())
        np.testing.assert_array_equal(p.data, before)
        assert p.step == 1 and p.grad is None

    def test_first_step_magnitude_is_learning_rate(self):
        cfg = AdamConfig(learning_rate=1e-3)
        p = Parameter(np.zeros(4))
        p.value.grad = np.full(4, 7.5)
        adam_step(p, cfg)
        np.testing.assert_allclose(np.abs(p.data), cfg.learning_rate, rtol=1e-5)

    def test_ten_step_trajectory_matches_scalar_oracle(self):
        cfg = AdamConfig(learning_rate=0.05)
        with precision(64):
            p = Parameter(np.array(3.0, dtype=np.float64))
            ours = []
            for _ in range(10):
                x = p.value
                loss = ad.mul(x, x)
                loss.backward()
                adam_step(p, cfg)
                ours.append(float(p.data))
        want = adam_oracle_trajectory(
            3.0, lambda x: 2 * x, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, 10
        )
        np.testing.assert_allclose(ours, want, atol=1e-10)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AdamConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            AdamConfig(beta1=1.0)


class TestGradientCheck:
    def test_square_at_three(self):
        err = gradient_check(lambda x: ad.mul(x, x), Tensor(np.array(3.0)), step=1e-6)
        assert err < 1e-8
        # analytic value itself
        x = Tensor(np.array(3.0, dtype=np.float64), requires_grad=True)
        ad.mul(x, x).backward()
        assert abs(float(x.grad) - 6.0) < 1e-12

    def test_nonfinite_function_raises(self):
        with pytest.raises(ad.NumericError):
            gradient_check(lambda x: ad.log(x), Tensor(np.array(-1.0)))


def _block_checks():
    rng = np.random.default_rng(42)

    def attention(x):
        # single-head attention where query/key/value all come from x
        q = ad.reshape(x, (4, 6))
        scores = matmul(q, ad.transpose(q)) * (1.0 / math.sqrt(6))
        return matmul(softmax(scores, axis=-1), q).sum()

    gain = Tensor(np.ones(6, dtype=np.float64))
    bias = Tensor(np.zeros(6, dtype=np.float64))
    probe = Tensor(rng.normal(size=(4, 6)))
    w = Tensor(rng.normal(size=(3, 2, 3, 3, 3)).astype(np.float64))
    idx = np.array([0, 2, 1, 2])
    targets = np.array([1, 0, 2, 1])
    mask = np.array([1, 1, 0, 1], dtype=bool)
    return {
        "matmul": (
            lambda x: matmul(ad.reshape(x, (3, 4)), ad.reshape(x, (4, 3))).sum(),
            rng.normal(size=12),
        ),
        "conv3d": (
            lambda x: conv3d(ad.reshape(x, (1, 4, 4, 4, 2)), w, pad=1).sum(),
            rng.normal(size=(2 * 64)),
        ),
        "layernorm": (
            # weighted sum: a plain sum of normalized rows is ~0 by construction
            lambda x: ad.mul(layernorm(ad.reshape(x, (4, 6)), gain, bias), probe).sum(),
            rng.normal(size=24),
        ),
        "softmax": (lambda x: ad.mul(softmax(x), Tensor(np.arange(5.0))).sum(), rng.normal(size=5)),
        "attention": (attention, rng.normal(size=24)),
        "embedding": (
            lambda x: ad.mul(embedding(ad.reshape(x, (3, 5)), idx), 2.0).sum(),
            rng.normal(size=15),
        ),
        "masked_cross_entropy": (
            lambda x: masked_cross_entropy(ad.reshape(x, (4, 3)), targets, mask),
            rng.normal(size=12),
        ),
        "bce_with_logits": (
            lambda x: bce_with_logits(x, np.array([0.0, 1.0, 1.0, 0.0])),
            rng.normal(size=4),
        ),
    }


@pytest.mark.parametrize("name", sorted(_block_checks()))
def test_block_gradients_match_finite_differences(name):
    fn, point = _block_checks()[name]
    with precision(64):
        err = gradient_check(fn, Tensor(np.asarray(point, dtype=np.float64)), step=1e-5)
    assert err < 1e-4, f"{name}: max relative error {err:.3e}"


class TestConv3d:
    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 4, 4, 4, 2)).astype(np.float64)  # channels last
        w = rng.normal(size=(3, 2, 3, 3, 3)).astype(np.float64)
        got = conv3d(Tensor(x), Tensor(w), pad=1).data
        want = np.zeros_like(got)
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
        for f in range(3):
            for d in range(4):
                for h in range(4):
                    for ww in range(4):
                        patch = xp[0, d : d + 3, h : h + 3, ww : ww + 3]  # (3,3,3,C)
                        want[0, d, h, ww, f] = np.sum(patch * w[f].transpose(1, 2, 3, 0))
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_space_to_depth_round_trip(self):
        x = np.random.default_rng(0).normal(size=(2, 4, 4, 4, 3)).astype(np.float32)
        t = space_to_depth(Tensor(x), 2)
        assert t.shape == (2, 2, 2, 2, 24)
        back = depth_to_space(t, 2)
        np.testing.assert_array_equal(back.data, x)

    def test_space_to_depth_equals_strided_conv(self):
        # folding plus a 1x1 conv must equal a kernel-2 stride-2 convolution
        rng = np.random.default_rng(9)
        x_cf = rng.normal(size=(1, 2, 4, 4, 4)).astype(np.float64)
        w = rng.normal(size=(5, 2, 2, 2, 2)).astype(np.float64)
        folded = space_to_depth(Tensor(x_cf.transpose(0, 2, 3, 4, 1)), 2)
        # folded channel order is (dz, dy, dx, c)
        w_mat = np.zeros((5, 16), dtype=np.float64)
        for dz in range(2):
            for dy in range(2):
                for dx in range(2):
                    for c in range(2):
                        col = ((dz * 2 + dy) * 2 + dx) * 2 + c
                        w_mat[:, col] = w[:, c, dz, dy, dx]
        got = conv3d(folded, Tensor(w_mat.reshape(5, 16, 1, 1, 1)), pad=0).data
        want = np.zeros((1, 2, 2, 2, 5))
        for f in range(5):
            for d in range(2):
                for h in range(2):
                    for ww in range(2):
                        want[0, d, h, ww, f] = np.sum(
                            x_cf[0, :, 2 * d : 2 * d + 2, 2 * h : 2 * h + 2, 2 * ww : 2 * ww + 2] * w[f]
                        )
        np.testing.assert_allclose(got, want, atol=1e-10)


class TestTensorBasics:
    def test_precision_context(self):
        assert Tensor(1.0).dtype == np.float32
        with precision(64):
            assert Tensor(1.0).dtype == np.float64
        assert Tensor(1.0).dtype == np.float32

    def test_broadcast_add_gradients(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        (a + b).sum().backward()
        np.testing.assert_array_equal(a.grad, np.ones((3, 4)))
        np.testing.assert_array_equal(b.grad, np.full(4, 3.0))

    def test_stopgrad_blocks_flow(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.mul(ad.stopgrad(ad.mul(x, x)), x)
        y.backward(np.ones(1))
        np.testing.assert_allclose(x.grad, [4.0])  # d(c*x)/dx with c=x^2=4

    def test_data_length_matches_shape(self):
        t = Tensor(np.zeros((3, 5, 2)))
        assert t.size == 3 * 5 * 2 == int(np.prod(t.shape))
