"""Parameterized layers and the Adam optimizer on top of the tape engine."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter container with hierarchical naming."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def n_params(self):
        return sum(p.size for p in self.parameters())

    def train(self, mode=True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state dict mismatch; missing={sorted(missing)}, extra={sorted(extra)}")
        for name, arr in state.items():
            p = own[name]
            if p.data.shape != arr.shape:
                raise T.ShapeError(f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data = np.asarray(arr, dtype=p.data.dtype).copy()


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = _uniform_init(rng, (in_dim, out_dim), in_dim)
        self.bias = _uniform_init(rng, (out_dim,), in_dim)

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise T.ShapeError(f"Linear({self.in_dim},{self.out_dim}): input has dim {x.shape[-1]}")
        return T.matmul(x, self.weight) + self.bias


class Conv1d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, dilation=1, groups=1, padding="valid"):
        super().__init__()
        self.stride, self.dilation, self.groups, self.padding = stride, dilation, groups, padding
        fan_in = (in_ch // groups) * kernel
        self.weight = _uniform_init(rng, (out_ch, in_ch // groups, kernel), fan_in)
        self.bias = _uniform_init(rng, (out_ch,), fan_in)

    def __call__(self, x):
        return T.conv1d(
            x, self.weight, self.bias,
            stride=self.stride, dilation=self.dilation,
            groups=self.groups, padding=self.padding,
        )


class PReLU(Module):
    """Single learnable slope, init 0.25."""

    def __init__(self, init=0.25):
        super().__init__()
        self.slope = Tensor(np.array([init]), requires_grad=True)

    def __call__(self, x):
        return T.prelu(x, self.slope)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.scale = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return T.layer_norm(x, self.scale, self.shift, eps=self.eps)


class Dropout(Module):
    def __init__(self, p, seed=None):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(seed)

    def __call__(self, x):
        return T.dropout(x, self.p, training=self.training, rng=self.rng)


class Adam:
    """Standard Adam with bias correction; step counter starts at 1."""

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if isinstance(named_params, Module):
            named_params = list(named_params.named_parameters())
        self.named_params = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for i, (name, p) in enumerate(self.named_params):
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def state_dict(self):
        out = {"step": np.array([self.step_count], dtype=np.float64)}
        for i, (name, _) in enumerate(self.named_params):
            out[f"m.{name}"] = self.m[i]
            out[f"v.{name}"] = self.v[i]
        return out

    def load_state_dict(self, state):
        self.step_count = int(state["step"][0])
        for i, (name, p) in enumerate(self.named_params):
            self.m[i] = np.asarray(state[f"m.{name}"], dtype=p.data.dtype).copy()
            self.v[i] = np.asarray(state[f"v.{name}"], dtype=p.data.dtype).copy()
