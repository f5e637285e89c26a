"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run: every differentiable op appends a node to a thread-local
tape; ``backward`` walks the tape in reverse append order and accumulates
gradients into every tensor that requires them.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np
from scipy import fft as sfft


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


_state = threading.local()


def _st():
    if not hasattr(_state, "tape"):
        _state.tape = []
        _state.grad_enabled = True
        _state.dtype = np.float32
    return _state


def default_dtype():
    return _st().dtype


def set_default_dtype(dtype):
    """dtype: 'f32'/'f64' or a numpy float dtype. f64 is the verification mode."""
    if isinstance(dtype, str):
        dtype = {"f32": np.float32, "f64": np.float64}[dtype]
    _st().dtype = np.dtype(dtype).type


@contextmanager
def precision(dtype):
    st = _st()
    old = st.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        st.dtype = old


@contextmanager
def no_grad():
    st = _st()
    old = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = old


def clear_tape():
    _st().tape.clear()


def tape_len():
    return len(_st().tape)


class Tensor:
    """N-d real array, optionally participating in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            # rebinding (never in-place) below keeps shared references safe
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return powc(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def flatten(self):
        return reshape(self, -1)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype.type if like is not None else default_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


def _record(out, inputs, backward_fn):
    """Append a tape node if grads are on and any input wants them."""
    st = _st()
    if st.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        st.tape.append((out, backward_fn))
    return out


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from loss.

    Repeated calls without zeroing grads accumulate.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad (no taped operations)")
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, fn in reversed(_st().tape):
        if out.grad is not None:
            fn(out.grad)


def _unbroadcast(g, shape):
    """Reduce gradient g back to the pre-broadcast shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_elementwise(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{opname}: shapes {a.shape} and {b.shape} are not broadcastable"
        ) from None


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    _check_elementwise(a, b, "add")
    out = Tensor(a.data + b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _record(out, (a, b), bw)


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_elementwise(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _record(out, (a, b), bw)


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_elementwise(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), bw)


def div(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_elementwise(a, b, "div")
    out = Tensor(a.data / b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data**2), b.shape))

    return _record(out, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    out = Tensor(-a.data)

    def bw(g):
        a.accumulate_grad(-g)

    return _record(out, (a,), bw)


def powc(a, p):
    a = as_tensor(a)
    p = float(p)
    out = Tensor(a.data**p)

    def bw(g):
        a.accumulate_grad(g * p * a.data ** (p - 1))

    return _record(out, (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))

    def bw(g):
        a.accumulate_grad(g * out.data)

    return _record(out, (a,), bw)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")
    out = Tensor(np.log(a.data))

    def bw(g):
        a.accumulate_grad(g / a.data)

    return _record(out, (a,), bw)


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt requires non-negative input")
    out = Tensor(np.sqrt(a.data))

    def bw(g):
        a.accumulate_grad(g * 0.5 / np.maximum(out.data, np.finfo(out.dtype).tiny))

    return _record(out, (a,), bw)


def cos(a):
    a = as_tensor(a)
    out = Tensor(np.cos(a.data))

    def bw(g):
        a.accumulate_grad(-g * np.sin(a.data))

    return _record(out, (a,), bw)


def sin(a):
    a = as_tensor(a)
    out = Tensor(np.sin(a.data))

    def bw(g):
        a.accumulate_grad(g * np.cos(a.data))

    return _record(out, (a,), bw)


def tanh(a):
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))

    def bw(g):
        a.accumulate_grad(g * (1.0 - out.data**2))

    return _record(out, (a,), bw)


def tabs(a):
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))

    def bw(g):
        a.accumulate_grad(g * np.sign(a.data))

    return _record(out, (a,), bw)


def maximum(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_elementwise(a, b, "maximum")
    out = Tensor(np.maximum(a.data, b.data))

    def bw(g):
        amask = a.data >= b.data
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * amask, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * ~amask, b.shape))

    return _record(out, (a, b), bw)


def minimum(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_elementwise(a, b, "minimum")
    out = Tensor(np.minimum(a.data, b.data))

    def bw(g):
        amask = a.data <= b.data
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * amask, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * ~amask, b.shape))

    return _record(out, (a, b), bw)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    out = Tensor(a.data.reshape(shape))

    def bw(g):
        a.accumulate_grad(g.reshape(old))

    return _record(out, (a,), bw)


def transpose(a, *axes):
    a = as_tensor(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    out = Tensor(a.data.transpose(axes))
    inv = np.argsort(axes)

    def bw(g):
        a.accumulate_grad(g.transpose(inv))

    return _record(out, (a,), bw)


def getitem(a, key):
    a = as_tensor(a)
    out = Tensor(a.data[key])

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        a.accumulate_grad(full)

    return _record(out, (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t.accumulate_grad(piece)

    return _record(out, tuple(tensors), bw)


# ---------------------------------------------------------------------------
# reductions


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    axes = _axis_tuple(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    return _record(out, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes]))
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a.accumulate_grad(np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=False))

    return _record(out, (a,), bw)


def tmax(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.max(axis=axis, keepdims=keepdims)
    out = Tensor(out_data)
    axes = _axis_tuple(axis, a.ndim)

    def bw(g):
        full = out_data if keepdims else np.expand_dims(out_data, axes)
        gk = g if keepdims else np.expand_dims(g, axes)
        mask = (a.data == full).astype(a.dtype)
        mask /= mask.sum(axis=tuple(axes), keepdims=True)  # split ties evenly
        a.accumulate_grad(mask * gk)

    return _record(out, (a,), bw)


def l2norm(a, keepdims=False):
    """Euclidean norm over the last axis."""
    a = as_tensor(a)
    nrm = np.sqrt((a.data**2).sum(axis=-1, keepdims=True))
    out = Tensor(nrm if keepdims else nrm[..., 0])

    def bw(g):
        gk = g if keepdims else g[..., None]
        safe = np.maximum(nrm, np.finfo(a.dtype).tiny)
        a.accumulate_grad(gk * a.data / safe)

    return _record(out, (a,), bw)


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw(g):
        if a.requires_grad:
            if b.ndim == 1:
                ga = g[..., None] * b.data if a.ndim > 1 else g * b.data
            else:
                ga = g @ b.data.swapaxes(-1, -2)
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.ndim == 1:
                gb = a.data[:, None] * g if b.ndim > 1 else a.data * g
            elif b.ndim == 1:
                gb = (a.data.swapaxes(-1, -2) @ g[..., None])[..., 0]
                gb = _unbroadcast(gb, b.shape)
            else:
                gb = a.data.swapaxes(-1, -2) @ g
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _record(out, (a, b), bw)


# ---------------------------------------------------------------------------
# nonlinearities with analytic backward


def softmax(a):
    """Softmax over the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def bw(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        a.accumulate_grad(s * (g - dot))

    return _record(out, (a,), bw)


def prelu(x, slope):
    """PReLU with a learnable slope tensor (broadcast against x)."""
    x = as_tensor(x)
    slope = as_tensor(slope, like=x)
    neg = x.data < 0
    y = x.data.copy()
    np.multiply(y, slope.data, out=y, where=neg)
    out = Tensor(y)

    def bw(g):
        if x.requires_grad:
            dx = g.copy()
            np.multiply(dx, slope.data, out=dx, where=neg)
            x.accumulate_grad(dx)
        if slope.requires_grad:
            if slope.size == 1:
                ds = np.sum(x.data * g, where=neg, dtype=x.dtype)
                slope.accumulate_grad(np.full(slope.shape, ds, dtype=slope.dtype))
            else:
                slope.accumulate_grad(
                    _unbroadcast(np.where(neg, x.data, 0.0) * g, slope.shape))

    return _record(out, (x, slope), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """GELU, tanh approximation (pinned variant)."""
    x = as_tensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t))

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du
        x.accumulate_grad(g * dx)

    return _record(out, (x,), bw)


def dropout(x, p, training, rng=None):
    """Inverted dropout: eval mode is the identity."""
    x = as_tensor(x)
    if not training or p <= 0.0:
        out = Tensor(x.data.copy())

        def bw_id(g):
            x.accumulate_grad(g)

        return _record(out, (x,), bw_id)
    if rng is None:
        rng = np.random.default_rng()
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    scale = 1.0 / (1.0 - p)
    out = Tensor(x.data * keep * scale)

    def bw(g):
        x.accumulate_grad(g * keep * scale)

    return _record(out, (x,), bw)


def layer_norm(x, scale, shift, eps=1e-5):
    """Layer normalization over the last axis with learnable scale/shift."""
    x = as_tensor(x)
    scale = as_tensor(scale, like=x)
    shift = as_tensor(shift, like=x)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * scale.data + shift.data)

    def bw(g):
        if scale.requires_grad:
            red = tuple(range(x.ndim - 1))
            scale.accumulate_grad(_unbroadcast((g * xhat).sum(axis=red), scale.shape))
        if shift.requires_grad:
            red = tuple(range(x.ndim - 1))
            shift.accumulate_grad(_unbroadcast(g.sum(axis=red), shift.shape))
        if x.requires_grad:
            gx = g * scale.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (gx - m1 - xhat * m2))

    return _record(out, (x, scale, shift), bw)


# ---------------------------------------------------------------------------
# 1-D cross-correlation


def _conv_out_len(t, k_eff, stride):
    return (t - k_eff) // stride + 1


def conv1d(x, w, b=None, stride=1, dilation=1, groups=1, padding="valid"):
    """Batched 1-D cross-correlation (no kernel flip).

    x: (B, Cin, T); w: (Cout, Cin // groups, K); b: (Cout,) or None.
    padding 'valid' or 'same' (zero pad, T preserved when stride == 1).
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b, like=w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x (B,C,T) and w (O,C/g,K); got {x.shape}, {w.shape}")
    B, cin, t = x.shape
    cout, cin_g, k = w.shape
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise ShapeError(
            f"conv1d: groups={groups} incompatible with x channels {cin} and kernel {w.shape}"
        )
    k_eff = (k - 1) * dilation + 1
    if padding == "same":
        t_out_target = -(-t // stride)
        pad_total = max((t_out_target - 1) * stride + k_eff - t, 0)
        pl, pr = pad_total // 2, pad_total - pad_total // 2
    elif padding == "valid":
        pl = pr = 0
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    tp = t + pl + pr
    if tp < k_eff:
        raise ShapeError(
            f"conv1d: input length {t} (padded {tp}) shorter than effective kernel "
            f"{k_eff} (kernel {k}, dilation {dilation}) for x {x.shape}, w {w.shape}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if (pl or pr) else x.data
    t_out = _conv_out_len(tp, k_eff, stride)
    span = (t_out - 1) * stride + 1
    w_g = w.data.reshape(groups, cout // groups, cin_g, k)

    # Channel-diagonal convs (depthwise / single-map) over long signals are
    # memory-bound: materializing the T_out x K window matrix costs far more
    # than the arithmetic. Go through the frequency domain for long kernels,
    # or accumulate per tap for short ones.
    pointwise = k == 1 and stride == 1 and groups == 1 and not (pl or pr)
    diagonal = (not pointwise and cin_g == 1 and cout == groups
                and t_out * k > (1 << 14))
    fft_path = diagonal and k_eff >= 8
    tap_loop = diagonal and not fft_path

    if pointwise:
        cols_g = w_mat = None
        y = np.matmul(w.data[:, :, 0], x.data)  # (O, C) @ (B, C, T)
    elif diagonal:
        cols_g = w_mat = None
        xp_g = xp.reshape(B, groups, tp)
        if fft_path:
            nfft = sfft.next_fast_len(tp)
            w_eff = np.zeros((groups, k_eff), dtype=x.dtype)
            w_eff[:, ::dilation] = w_g[:, 0, 0, :]
            xf = sfft.rfft(xp_g, nfft, axis=-1)
            corr = sfft.irfft(xf * np.conj(sfft.rfft(w_eff, nfft, axis=-1)),
                              nfft, axis=-1)
            y = np.ascontiguousarray(corr[:, :, :span:stride], dtype=x.dtype)
        else:
            y = np.zeros((B, groups, t_out), dtype=x.dtype)
            wj = w_g[:, 0, 0, :]
            for j in range(k):
                xs = xp_g[:, :, j * dilation : j * dilation + span : stride]
                y += wj[:, j][None, :, None] * xs
        y = y.reshape(B, cout, t_out)
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, k_eff, axis=2)
        cols = win[:, :, ::stride, ::dilation]  # (B, Cin, T_out, K)
        # (B, g, T_out, Cin_g * K) so the contraction is a BLAS matmul
        cols_g = np.ascontiguousarray(
            cols.reshape(B, groups, cin_g, t_out, k).transpose(0, 1, 3, 2, 4)
        ).reshape(B, groups, t_out, cin_g * k)
        w_mat = w_g.reshape(groups, cout // groups, cin_g * k)
        y = np.matmul(cols_g, w_mat.swapaxes(-1, -2))  # (B, g, T_out, O_g)
        y = np.ascontiguousarray(y.transpose(0, 1, 3, 2)).reshape(B, cout, t_out)
    if b is not None:
        y += b.data[None, :, None]
    out = Tensor(y)

    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        gg = g.reshape(B, groups, cout // groups, t_out)
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2)))
        if pointwise:
            if w.requires_grad:
                dw = np.matmul(g, x.data.swapaxes(1, 2)).sum(axis=0)
                w.accumulate_grad(dw[:, :, None])
            if x.requires_grad:
                x.accumulate_grad(np.matmul(w.data[:, :, 0].T, g))
            return
        if fft_path:
            # correlation/convolution identities, all linear (no wraparound:
            # nfft >= tp >= span + k_eff - 1)
            nfft = sfft.next_fast_len(tp)
            xp_g = xp.reshape(B, groups, tp)
            w_eff = np.zeros((groups, k_eff), dtype=x.dtype)
            w_eff[:, ::dilation] = w_g[:, 0, 0, :]
            g_up = np.zeros((B, groups, span), dtype=x.dtype)
            g_up[:, :, ::stride] = gg[:, :, 0, :]
            gf = sfft.rfft(g_up, nfft, axis=-1)
            if w.requires_grad:
                corr = sfft.irfft(sfft.rfft(xp_g, nfft, axis=-1) * np.conj(gf),
                                  nfft, axis=-1)
                dw = corr.sum(axis=0)[:, :k_eff:dilation]
                w.accumulate_grad(dw.reshape(w.shape).astype(w.dtype))
            if x.requires_grad:
                conv = sfft.irfft(gf * sfft.rfft(w_eff, nfft, axis=-1),
                                  nfft, axis=-1)
                dxp = conv[:, :, :tp].astype(x.dtype)
                dxp[:, :, span + k_eff - 1:] = 0.0
                dxp = dxp.reshape(B, cin, tp)
                x.accumulate_grad(dxp[:, :, pl : tp - pr] if (pl or pr) else dxp)
            return
        if w.requires_grad:
            if tap_loop:
                xp_g = xp.reshape(B, groups, tp)
                dw = np.empty_like(w_g)
                for j in range(k):
                    xs = xp_g[:, :, j * dilation : j * dilation + span : stride]
                    dw[:, 0, 0, j] = (xs * gg[:, :, 0, :]).sum(axis=(0, 2))
            else:
                gg_t = gg.transpose(0, 1, 3, 2)  # (B, g, T_out, O_g)
                dw = np.matmul(cols_g.swapaxes(-1, -2), gg_t).sum(axis=0)
                dw = dw.swapaxes(-1, -2).reshape(groups, cout // groups, cin_g, k)
            w.accumulate_grad(dw.reshape(w.shape))
        if x.requires_grad:
            dxp = np.zeros((B, cin, tp), dtype=x.dtype)
            if tap_loop:
                dxp_g = dxp.reshape(B, groups, tp)
                wj = w_g[:, 0, 0, :]
                for j in range(k):
                    sl = dxp_g[:, :, j * dilation : j * dilation + span : stride]
                    sl += wj[:, j][None, :, None] * gg[:, :, 0, :]
            else:
                gg_t = gg.transpose(0, 1, 3, 2)  # (B, g, T_out, O_g)
                dcols = np.matmul(gg_t, w_mat)  # (B, g, T_out, Cin_g * K)
                dcols = dcols.reshape(B, groups, t_out, cin_g, k).transpose(
                    0, 1, 3, 2, 4).reshape(B, cin, t_out, k)
                for j in range(k):
                    dxp[:, :, j * dilation : j * dilation + span : stride] += dcols[:, :, :, j]
            x.accumulate_grad(dxp[:, :, pl : tp - pr] if (pl or pr) else dxp)

    return _record(out, inputs, bw)
