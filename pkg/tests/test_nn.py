"""Module registration, state dicts, and Adam behavior."""

import numpy as np
import pytest

from sincalign import tensor as T
from sincalign.nn import Adam, Conv1d, Dropout, LayerNorm, Linear, Module, PReLU
from sincalign.tensor import Tensor


@pytest.fixture(autouse=True)
def clean_tape():
    T.clear_tape()
    yield
    T.clear_tape()


class TwoLayer(Module):
    def __init__(self, rng):
        super().__init__()
        self.fc1 = Linear(4, 8, rng)
        self.act = PReLU()
        self.fc2 = Linear(8, 2, rng)

    def __call__(self, x):
        return self.fc2(self.act(self.fc1(x)))


def test_named_parameters_dotted_paths():
    m = TwoLayer(np.random.default_rng(0))
    names = dict(m.named_parameters())
    assert "fc1.weight" in names and "fc1.bias" in names
    assert "act.slope" in names
    assert "fc2.weight" in names
    assert all(p.requires_grad for p in names.values())


def test_state_dict_roundtrip():
    rng = np.random.default_rng(1)
    m1, m2 = TwoLayer(rng), TwoLayer(np.random.default_rng(99))
    m2.load_state_dict(m1.state_dict())
    for (n1, p1), (n2, p2) in zip(m1.named_parameters(), m2.named_parameters()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)


def test_load_state_dict_rejects_mismatch():
    m = TwoLayer(np.random.default_rng(2))
    state = m.state_dict()
    state.pop("fc1.weight")
    with pytest.raises((KeyError, ValueError)):
        m.load_state_dict(state)


def test_train_eval_propagates():
    m = TwoLayer(np.random.default_rng(3))
    m.eval()
    assert not m.fc1.training
    m.train()
    assert m.act.training


def test_linear_matches_manual():
    rng = np.random.default_rng(4)
    lin = Linear(3, 2, rng)
    x = rng.standard_normal((5, 3)).astype(np.float32)
    out = lin(Tensor(x)).data
    assert np.allclose(out, x @ lin.weight.data + lin.bias.data, atol=1e-6)


def test_conv1d_module_matches_functional():
    rng = np.random.default_rng(5)
    conv = Conv1d(2, 3, 5, rng, stride=2, padding="same")
    x = Tensor(rng.standard_normal((2, 2, 16)))
    with T.no_grad():
        a = conv(x).data
        b = T.conv1d(x, conv.weight, conv.bias, stride=2, padding="same").data
    assert np.array_equal(a, b)


def test_layernorm_normalizes_last_axis():
    rng = np.random.default_rng(6)
    ln = LayerNorm(10)
    out = ln(Tensor(rng.standard_normal((4, 10)) * 5 + 3)).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-5)
    assert np.all(np.abs(out.std(axis=-1) - 1.0) < 1e-3)


def test_dropout_module_seeded_reproducible():
    x = Tensor(np.ones((8, 8)))
    y1 = Dropout(0.5, seed=7)(x).data
    y2 = Dropout(0.5, seed=7)(x).data
    assert np.array_equal(y1, y2)


# ---------------------------------------------------------------------------
# Adam


def make_scalar_problem(x0):
    p = Tensor(np.array([x0]), requires_grad=True)
    return p, Adam([("x", p)], lr=0.1)


def test_adam_zero_grad_noop_step():
    p, opt = make_scalar_problem(1.5)
    before = p.data.copy()
    opt.step()  # no grad present
    assert np.array_equal(p.data, before)


def test_adam_first_step_is_signed_lr():
    """With bias correction, step 1 moves by ~lr * sign(grad)."""
    p, opt = make_scalar_problem(0.0)
    p.grad = np.array([3.7], dtype=p.data.dtype)
    opt.step()
    assert np.allclose(p.data, [-0.1], atol=1e-6)


def test_adam_converges_on_quadratic():
    with T.precision("f64"):
        p, opt = make_scalar_problem(10.0)
        for _ in range(300):
            T.clear_tape()
            p.zero_grad()
            loss = (p - 2.0) ** 2
            T.tsum(loss).backward()
            opt.step()
        assert abs(p.data[0] - 2.0) < 0.05


def test_adam_raises_on_nonfinite_grad_with_name():
    p, opt = make_scalar_problem(0.0)
    p.grad = np.array([np.nan], dtype=p.data.dtype)
    with pytest.raises(FloatingPointError, match="x"):
        opt.step()


def test_adam_state_roundtrip():
    p, opt = make_scalar_problem(5.0)
    for _ in range(3):
        p.grad = np.array([1.0], dtype=p.data.dtype)
        opt.step()
    state = {k: v.copy() for k, v in opt.state_dict().items()}
    q = Tensor(p.data.copy(), requires_grad=True)
    opt2 = Adam([("x", q)], lr=0.1)
    opt2.load_state_dict(state)
    assert opt2.step_count == opt.step_count
    p.grad = q.grad = np.array([1.0], dtype=p.data.dtype)
    opt.step()
    opt2.step()
    assert np.allclose(p.data, q.data, atol=1e-12)
