"""Engine semantics: op math, shape/domain errors, tape behavior, and
finite-difference verification of every differentiable op."""

import numpy as np
import pytest

from sincalign import tensor as T
from sincalign.tensor import DomainError, ShapeError, Tensor

from gradcheck import check_gradients


@pytest.fixture(autouse=True)
def f64_mode():
    with T.precision("f64"):
        T.clear_tape()
        yield
        T.clear_tape()


def leaf(rng, shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# forward semantics


def test_add_mul_forward_values():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 5.0])
    assert np.array_equal((a + b).data, [4.0, 7.0])
    assert np.array_equal((a * b).data, [3.0, 10.0])
    assert np.array_equal((a - b).data, [-2.0, -3.0])
    assert np.allclose((a / b).data, [1 / 3, 2 / 5])


def test_broadcasting_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 1, 4))
    b = rng.standard_normal((2, 4))
    out = (Tensor(a) + Tensor(b)).data
    assert np.array_equal(out, a + b)


def test_incompatible_shapes_raise():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))


def test_log_sqrt_domain_errors():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, -1.0]))
    with pytest.raises(DomainError):
        T.sqrt(Tensor([-0.5]))


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    s = T.softmax(Tensor(rng.standard_normal((5, 7)) * 10)).data
    assert np.all(np.abs(s.sum(axis=-1) - 1.0) < 1e-9)
    assert np.all(s >= 0)


def test_tmax_forward_and_tie_split():
    x = Tensor([[1.0, 3.0, 3.0], [2.0, 0.0, 1.0]], requires_grad=True)
    out = T.tsum(T.tmax(x, axis=-1))
    out.backward()
    # ties share the gradient evenly
    assert np.allclose(x.grad, [[0.0, 0.5, 0.5], [1.0, 0.0, 0.0]])


def test_matmul_shapes():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
    assert np.allclose(T.matmul(Tensor(a), Tensor(b)).data, a @ b)
    batched = rng.standard_normal((2, 4, 3))
    assert np.allclose(T.matmul(Tensor(batched), Tensor(b)).data, batched @ b)
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 5))))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * 2.0
    with pytest.raises(ShapeError):
        y.backward()


def test_grad_accumulates_across_uses():
    x = Tensor([2.0], requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1 = 5
    T.tsum(y).backward()
    assert np.allclose(x.grad, [5.0])


def test_no_grad_suppresses_tape():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 3.0
    assert not y.requires_grad
    assert T.tape_len() == 0


def test_dropout_eval_is_identity():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    y = T.dropout(x, 0.5, training=False)
    assert np.array_equal(y.data, x.data)
    T.tsum(y).backward()
    assert np.allclose(x.grad, np.ones_like(x.data))


def test_dropout_train_scales_and_masks():
    rng = np.random.default_rng(4)
    x = Tensor(np.ones((100, 100)))
    y = T.dropout(x, 0.3, training=True, rng=rng).data
    kept = y != 0
    assert abs(kept.mean() - 0.7) < 0.02
    assert np.allclose(y[kept], 1.0 / 0.7)


def test_determinism_same_seed_same_result():
    def run(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        loss = T.tsum(T.tanh(x @ x))
        loss.backward()
        return loss.item(), x.grad.copy()

    T.clear_tape()
    l1, g1 = run(11)
    T.clear_tape()
    l2, g2 = run(11)
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_f32_default_dtype_outside_precision_context():
    T.clear_tape()
    with T.precision("f32"):
        assert Tensor([1.0]).data.dtype == np.float32


def test_getitem_forward_backward():
    x = Tensor(np.arange(12, dtype=float).reshape(3, 4), requires_grad=True)
    y = x[1]
    assert np.array_equal(y.data, [4.0, 5.0, 6.0, 7.0])
    T.tsum(y * y).backward()
    expect = np.zeros((3, 4))
    expect[1] = 2 * x.data[1]
    assert np.allclose(x.grad, expect)


def test_concat_backward_splits():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((3, 2)), requires_grad=True)
    out = T.concat([a, b], axis=0)
    assert out.shape == (5, 2)
    T.tsum(out * 3.0).backward()
    assert np.allclose(a.grad, 3.0)
    assert np.allclose(b.grad, 3.0)


# ---------------------------------------------------------------------------
# finite-difference verification (one representative instance per op here;
# the exhaustive sweep lives in the acceptance suite)


@pytest.mark.parametrize("op", [
    lambda x: x + 2.0, lambda x: 3.0 - x, lambda x: x * x,
    lambda x: x / 2.5, lambda x: x**3, T.exp, T.tanh, T.cos, T.sin,
    lambda x: T.log(T.tabs(x) + 1.0), lambda x: T.sqrt(T.tabs(x) + 0.5),
    lambda x: T.maximum(x, 0.1), lambda x: T.minimum(x, -0.1),
    T.softmax, lambda x: T.gelu(x), lambda x: T.l2norm(x),
    lambda x: T.tmean(x), lambda x: T.transpose(x),
    lambda x: T.reshape(x, (8, 3)),
])
def test_gradcheck_elementwise_ops(op):
    rng = np.random.default_rng(5)
    x = leaf(rng, (4, 6))

    def build():
        out = op(x)
        return T.tsum(out * T.cos(out * 0.3))

    check_gradients(build, [x])


def test_gradcheck_matmul():
    rng = np.random.default_rng(6)
    a, b = leaf(rng, (3, 4)), leaf(rng, (4, 2))
    check_gradients(lambda: T.tsum(T.tanh(T.matmul(a, b))), [a, b])


def test_gradcheck_prelu():
    rng = np.random.default_rng(7)
    x, slope = leaf(rng, (5, 5)), Tensor(np.array([0.3]), requires_grad=True)
    check_gradients(lambda: T.tsum(T.sin(T.prelu(x, slope))), [x, slope])


def test_gradcheck_layer_norm():
    rng = np.random.default_rng(8)
    x, sc, sh = leaf(rng, (3, 6)), leaf(rng, (6,)), leaf(rng, (6,))
    check_gradients(lambda: T.tsum(T.tanh(T.layer_norm(x, sc, sh))), [x, sc, sh])


@pytest.mark.parametrize("stride,dilation,groups,padding,cin,cout,t,k", [
    (1, 1, 1, "valid", 2, 3, 12, 5),
    (2, 1, 1, "same", 3, 2, 15, 4),
    (1, 2, 1, "valid", 2, 2, 16, 3),
    (1, 1, 2, "same", 4, 6, 10, 3),
    (3, 2, 2, "valid", 2, 2, 25, 3),
])
def test_gradcheck_conv1d(stride, dilation, groups, padding, cin, cout, t, k):
    rng = np.random.default_rng(9)
    x = leaf(rng, (2, cin, t))
    w = leaf(rng, (cout, cin // groups, k), scale=0.5)
    b = leaf(rng, (cout,))

    def build():
        y = T.conv1d(x, w, b, stride=stride, dilation=dilation,
                     groups=groups, padding=padding)
        return T.tsum(T.tanh(y))

    check_gradients(build, [x, w, b])


@pytest.mark.parametrize("cin,cout,groups,t,k,stride,dilation", [
    (1, 1, 1, 600, 31, 1, 1),    # frequency-domain path, long single map
    (1, 1, 1, 601, 64, 6, 1),    # frequency-domain path, strided
    (4, 4, 4, 3000, 3, 1, 2),    # per-tap path, dilated depthwise
])
def test_gradcheck_conv1d_fast_paths(cin, cout, groups, t, k, stride, dilation):
    rng = np.random.default_rng(10)
    x = leaf(rng, (2, cin, t))
    w = leaf(rng, (cout, cin // groups, k), scale=0.2)
    mod = Tensor(np.cos(0.01 * np.arange(t)))

    def build():
        y = T.conv1d(x, w, stride=stride, dilation=dilation,
                     groups=groups, padding="same")
        return T.tsum(y * mod[: y.shape[2]].reshape(1, 1, -1))

    check_gradients(build, [x, w])


def test_conv1d_fast_paths_match_windowed_reference():
    """All three execution strategies must agree bit-for-bit in math."""
    rng = np.random.default_rng(11)
    for t, k, stride, dilation, groups, cin in [
        (40000, 101, 1, 1, 1, 1), (40000, 3, 1, 2, 8, 8), (40000, 64, 6, 1, 1, 1),
    ]:
        x = rng.standard_normal((2, cin, t))
        w = rng.standard_normal((groups if cin > 1 else 1, cin // groups, k))
        with T.no_grad():
            fast = T.conv1d(Tensor(x), Tensor(w), stride=stride,
                            dilation=dilation, groups=groups, padding="same").data
        # direct windowed reference
        k_eff = (k - 1) * dilation + 1
        t_out = -(-t // stride)
        pad = max((t_out - 1) * stride + k_eff - t, 0)
        xp = np.pad(x, ((0, 0), (0, 0), (pad // 2, pad - pad // 2)))
        win = np.lib.stride_tricks.sliding_window_view(xp, k_eff, axis=2)
        cols = win[:, :, ::stride, ::dilation]
        cg = cols.reshape(2, groups, cin // groups, t_out, k)
        wg = w.reshape(groups, w.shape[0] // groups, cin // groups, k)
        ref = np.einsum("bgctk,gock->bgot", cg, wg).reshape(fast.shape)
        assert np.allclose(fast, ref, atol=1e-9), (t, k, stride, dilation)


def test_conv1d_too_short_raises_with_diagnostic():
    with pytest.raises(ShapeError, match="shorter than effective kernel"):
        T.conv1d(Tensor(np.zeros((1, 1, 5))), Tensor(np.zeros((1, 1, 9))))
