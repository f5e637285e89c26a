"""EEG and audio encoders: sinc bandpass -> channel mix -> dilated depthwise
conv stack -> strided down-sampling -> projector, emitting 128-d embeddings
in a shared space."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import sincnet
from . import tensor as T
from .nn import Conv1d, Dropout, LayerNorm, Linear, Module, PReLU

EMBED_DIM = 128


@dataclass
class SincSpec:
    n_filters: int
    kernel_len: int
    min_low_hz: float
    min_band_hz: float
    sample_rate_hz: float
    init: str  # 'hz' or 'mel'
    mel_f_lo: float = 50.0


@dataclass
class EncoderConfig:
    modality: str  # 'eeg' or 'audio'
    in_channels: int
    in_length: int
    sinc: SincSpec
    depth_layers: int = 2
    depth_hidden: int = 32
    depth_kernel: int = 3
    down_kernels: tuple = (64, 32)
    down_strides: tuple = (6, 4)
    down_linear_out: int = 256
    proj_hidden: int = 128
    dropout_p: float = 0.1

    @staticmethod
    def eeg_default(in_channels=64, window_s=1.0):
        return EncoderConfig(
            modality="eeg", in_channels=in_channels,
            in_length=int(round(window_s * 128)),
            sinc=SincSpec(60, 31, 1.0, 4.0, 128.0, "hz"),
        )

    @staticmethod
    def audio_default(window_s=1.0, n_filters=320):
        return EncoderConfig(
            modality="audio", in_channels=1,
            in_length=int(round(window_s * 16000)),
            sinc=SincSpec(n_filters, 101, 50.0, 50.0, 16000.0, "mel"),
        )


def _build_sinc(spec: SincSpec):
    if spec.init == "hz":
        return sincnet.init_hz_uniform(
            spec.n_filters, spec.sample_rate_hz, spec.kernel_len,
            spec.min_low_hz, spec.min_band_hz,
        )
    if spec.init == "mel":
        return sincnet.init_mel_uniform(
            spec.n_filters, spec.sample_rate_hz, spec.kernel_len,
            f_lo=spec.mel_f_lo, min_low_hz=spec.min_low_hz,
            min_band_hz=spec.min_band_hz,
        )
    raise ValueError(f"unknown sinc init {spec.init!r}")


@contextmanager
def _stage(name):
    try:
        yield
    except (T.ShapeError, ValueError) as e:
        raise type(e)(f"[stage {name}] {e}") from e


class DepthConvBlock(Module):
    """N residual layers of pointwise -> dilated depthwise -> pointwise convs.

    Dilation doubles per layer (1, 2, 4, ...); same padding keeps T fixed.
    """

    def __init__(self, channels, hidden, kernel, n_layers, rng):
        super().__init__()
        if n_layers < 1:
            raise ValueError(f"depth block needs >= 1 layer, got {n_layers}")
        if kernel % 2 == 0:
            raise ValueError(f"depth kernel must be odd, got {kernel}")
        self.n_layers = n_layers
        for d in range(n_layers):
            setattr(self, f"pw_in{d}", Conv1d(channels, hidden, 1, rng))
            setattr(self, f"act_a{d}", PReLU())
            setattr(self, f"dw{d}", Conv1d(hidden, hidden, kernel, rng,
                                           dilation=2 ** d, groups=hidden, padding="same"))
            setattr(self, f"act_b{d}", PReLU())
            setattr(self, f"pw_out{d}", Conv1d(hidden, channels, 1, rng))

    def __call__(self, x):
        for d in range(self.n_layers):
            h = getattr(self, f"pw_in{d}")(x)
            h = getattr(self, f"act_a{d}")(h)
            h = getattr(self, f"dw{d}")(h)
            h = getattr(self, f"act_b{d}")(h)
            h = getattr(self, f"pw_out{d}")(h)
            x = x + h
        return x


def down_sample_trace(channels, length, kernels=(64, 32), strides=(6, 4)):
    """Flattened-length trace through the two strided convs; raises with the
    full trace when an intermediate is shorter than the next kernel."""
    trace = [channels * length]
    cur = trace[0]
    for k, s in zip(kernels, strides):
        if cur < k:
            steps = " -> ".join(str(v) for v in trace)
            raise T.ShapeError(
                f"down_sample: length {cur} too short for conv kernel {k} "
                f"(trace: flatten {channels}x{length} -> {steps})"
            )
        cur = (cur - k) // s + 1
        trace.append(cur)
    return trace


class DownSample(Module):
    """Flatten C x T, two strided single-channel convs, then linear to 256."""

    def __init__(self, channels, length, rng, kernels=(64, 32), strides=(6, 4), out_dim=256):
        super().__init__()
        self.channels, self.length = channels, length
        trace = down_sample_trace(channels, length, kernels, strides)
        self.trace = trace
        self.conv1 = Conv1d(1, 1, kernels[0], rng, stride=strides[0])
        self.act = PReLU()
        self.conv2 = Conv1d(1, 1, kernels[1], rng, stride=strides[1])
        self.linear = Linear(trace[-1], out_dim, rng)

    def __call__(self, x):
        b = x.shape[0]
        flat = T.reshape(x, (b, 1, self.channels * self.length))
        h = self.conv1(flat)
        h = self.act(h)
        h = self.conv2(h)
        return self.linear(T.reshape(h, (b, self.trace[-1])))


class Projector(Module):
    """256 -> 128 with GELU, dropout, layer norm, then a 128 -> 128 linear."""

    def __init__(self, in_dim, out_dim, rng, dropout_p=0.1, dropout_seed=None):
        super().__init__()
        self.linear1 = Linear(in_dim, out_dim, rng)
        self.drop = Dropout(dropout_p, seed=dropout_seed)
        self.norm = LayerNorm(out_dim)
        self.linear2 = Linear(out_dim, out_dim, rng)

    def pre_linear2(self, x):
        return self.norm(self.drop(T.gelu(self.linear1(x))))

    def __call__(self, x):
        return self.linear2(self.pre_linear2(x))


class EEGEncoder(Module):
    """Sinc bank shared across channels, filter-grouped channel mix, then the
    common depth/down/projector tail."""

    def __init__(self, cfg: EncoderConfig, rng, dropout_seed=None):
        super().__init__()
        self.cfg = cfg
        f = cfg.sinc.n_filters
        self.sinc = _build_sinc(cfg.sinc)
        # per filter, mix its per-channel maps down to one map
        self.mix = Conv1d(f * cfg.in_channels, f, 1, rng, groups=f)
        self.depth = DepthConvBlock(f, cfg.depth_hidden, cfg.depth_kernel,
                                    cfg.depth_layers, rng)
        self.down = DownSample(f, cfg.in_length, rng, cfg.down_kernels,
                               cfg.down_strides, cfg.down_linear_out)
        self.proj = Projector(cfg.down_linear_out, EMBED_DIM, rng,
                              cfg.dropout_p, dropout_seed)

    def __call__(self, x):
        if x.ndim != 3 or x.shape[1] != self.cfg.in_channels or x.shape[2] != self.cfg.in_length:
            raise T.ShapeError(
                f"EEG encoder expects (B, {self.cfg.in_channels}, {self.cfg.in_length}), "
                f"got {x.shape}"
            )
        with _stage("sinc"):
            h = self.sinc(x)
        with _stage("channel_mix"):
            h = self.mix(h)
        with _stage("depth_conv"):
            h = self.depth(h)
        with _stage("down_sample"):
            h = self.down(h)
        with _stage("projector"):
            return self.proj(h)


class AudioEncoder(Module):
    """Sinc bank on mono audio with the 320->1 mix fused into a single kernel,
    then the common tail on one 16 kHz map."""

    def __init__(self, cfg: EncoderConfig, rng, dropout_seed=None):
        super().__init__()
        self.cfg = cfg
        f = cfg.sinc.n_filters
        self.sinc = _build_sinc(cfg.sinc)
        self.mix = Conv1d(f, 1, 1, rng)
        self.depth = DepthConvBlock(1, cfg.depth_hidden, cfg.depth_kernel,
                                    cfg.depth_layers, rng)
        self.down = DownSample(1, cfg.in_length, rng, cfg.down_kernels,
                               cfg.down_strides, cfg.down_linear_out)
        self.proj = Projector(cfg.down_linear_out, EMBED_DIM, rng,
                              cfg.dropout_p, dropout_seed)

    def __call__(self, x):
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != self.cfg.in_length:
            raise T.ShapeError(
                f"audio encoder expects (B, 1, {self.cfg.in_length}), got {x.shape}"
            )
        with _stage("sinc_mix"):
            # mix(sinc(x)) computed as one conv with the mix-weighted kernel
            mix_w = T.reshape(self.mix.weight, (1, self.cfg.sinc.n_filters))
            kernel = self.sinc.fused_kernel(mix_w)
            h = T.conv1d(x, kernel, self.mix.bias, padding="same")
        with _stage("depth_conv"):
            h = self.depth(h)
        with _stage("down_sample"):
            h = self.down(h)
        with _stage("projector"):
            return self.proj(h)
