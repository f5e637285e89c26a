"""Learnable band-pass sinc filterbank.

Each filter is parameterized only by a low cutoff and a bandwidth, both in
Hz, through abs/clamp transforms that keep the band valid for any raw
parameter value. Kernels are windowed sincs, rebuilt from the current
parameters on every forward pass, so gradients reach the cutoffs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module
from .tensor import Tensor

NYQUIST_MARGIN_HZ = 1.0


def mel(f_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=float) / 700.0)


def mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@dataclass
class FrequencyResponse:
    freqs_hz: np.ndarray
    magnitude: np.ndarray


class SincFilterbank(Module):
    """Bank of learnable windowed-sinc band-pass FIR kernels."""

    def __init__(self, n_filters, kernel_len, sample_rate_hz, min_low_hz, min_band_hz,
                 low_hz=None, band_hz=None):
        super().__init__()
        if kernel_len % 2 == 0 or kernel_len < 3:
            raise ValueError(f"kernel_len must be odd and >= 3, got {kernel_len}")
        self.n_filters = n_filters
        self.kernel_len = kernel_len
        self.sample_rate_hz = float(sample_rate_hz)
        self.min_low_hz = float(min_low_hz)
        self.min_band_hz = float(min_band_hz)
        if low_hz is None:
            low_hz = np.zeros(n_filters)
        if band_hz is None:
            band_hz = np.zeros(n_filters)
        self.low_hz = Tensor(low_hz, requires_grad=True)
        self.band_hz = Tensor(band_hz, requires_grad=True)

        half = (kernel_len - 1) // 2
        n = np.arange(-half, half + 1, dtype=float)
        self._n = n
        self._center_mask = (n == 0).astype(float)
        self._off_mask = 1.0 - self._center_mask
        self._n_safe = np.where(n == 0, 1.0, n)
        # Hamming over [0, L-1] so the edges are exactly 0.08 and the center 1.00
        m = np.arange(kernel_len, dtype=float)
        self.window = 0.54 - 0.46 * np.cos(2.0 * math.pi * m / (kernel_len - 1))

    # -- parameterization -------------------------------------------------

    def cutoffs(self):
        """Effective (f1, f2) in Hz as differentiable tensors."""
        f1 = self.min_low_hz + T.tabs(self.low_hz)
        upper = self.sample_rate_hz / 2.0 - NYQUIST_MARGIN_HZ
        f2 = T.minimum(f1 + self.min_band_hz + T.tabs(self.band_hz), upper)
        if np.any(f2.data < f1.data):
            raise ValueError(
                "filter band collapsed: some f1 exceed the Nyquist clamp "
                f"(max f1 = {f1.data.max():.3f} Hz, clamp = {upper:.3f} Hz)"
            )
        return f1, f2

    def cutoffs_hz(self):
        f1, f2 = self.cutoffs()
        return f1.data.copy(), f2.data.copy()

    def build_kernels(self, normalize=True):
        """(n_filters, kernel_len) windowed band-pass kernels."""
        f1, f2 = self.cutoffs()
        fs = self.sample_rate_hz
        f1n = T.reshape(f1 * (1.0 / fs), (self.n_filters, 1))
        f2n = T.reshape(f2 * (1.0 / fs), (self.n_filters, 1))
        two_pi_n = 2.0 * math.pi * self._n
        # 2f sinc(2 pi f n) == sin(2 pi f n) / (pi n) off center, 2f at center
        band = (T.sin(f2n * two_pi_n) - T.sin(f1n * two_pi_n)) * (
            self._off_mask / (math.pi * self._n_safe)
        )
        center = (f2n - f1n) * (2.0 * self._center_mask)
        kernels = (band + center) * self.window
        if normalize:
            kernels = self._normalize(kernels)
        return kernels

    def _normalize(self, kernels):
        # divide by peak magnitude response; symmetric kernel => response is
        # a plain cosine transform
        grid = np.linspace(0.0, 0.5, 4 * self.kernel_len + 1)
        basis = np.cos(2.0 * math.pi * np.outer(self._n, grid))
        resp = T.tabs(T.matmul(kernels, basis))
        peak = T.tmax(resp, axis=-1, keepdims=True)
        tiny = np.finfo(kernels.data.dtype).tiny
        return kernels / T.maximum(peak, tiny)

    # -- application ------------------------------------------------------

    def forward(self, x):
        """Apply every filter to every input channel independently.

        x: (B, C, T) -> (B, n_filters * C, T), filter-major, same length.
        """
        if x.ndim != 3:
            raise T.ShapeError(f"sinc forward expects (B, C, T), got {x.shape}")
        b, c, t = x.shape
        kernels = self.build_kernels()
        w = T.reshape(kernels, (self.n_filters, 1, self.kernel_len))
        flat = T.reshape(x, (b * c, 1, t))
        y = T.conv1d(flat, w, padding="same")  # (B*C, F, T)
        y = T.reshape(y, (b, c, self.n_filters, t))
        y = T.transpose(y, (0, 2, 1, 3))
        return T.reshape(y, (b, self.n_filters * c, t))

    __call__ = forward

    def fused_kernel(self, mix_weight):
        """Collapse a pointwise 320->1 mix into a single kernel.

        mix_weight: Tensor (1, n_filters); returns (1, 1, kernel_len).
        Mathematically identical to forward + pointwise mix.
        """
        kernels = self.build_kernels()
        return T.reshape(T.matmul(mix_weight, kernels), (1, 1, self.kernel_len))

    # -- analysis ---------------------------------------------------------

    def magnitude_response(self, filter_idx, grid_hz=None, nfft=4096):
        """|DFT| of one windowed kernel sampled on a frequency grid (no grad)."""
        with T.no_grad():
            kernel = self.build_kernels().data[filter_idx]
        freqs = np.fft.rfftfreq(nfft, d=1.0 / self.sample_rate_hz)
        mags = np.abs(np.fft.rfft(kernel, nfft))
        if grid_hz is None:
            grid_hz = default_response_grid(self.sample_rate_hz)
        grid_hz = np.asarray(grid_hz, dtype=float)
        if np.any(grid_hz < 0) or np.any(grid_hz > self.sample_rate_hz / 2):
            raise ValueError("response grid outside [0, Nyquist]")
        return FrequencyResponse(grid_hz, np.interp(grid_hz, freqs, mags))


def default_response_grid(sample_rate_hz, bin_hz=4.0):
    """Bin centers covering [0, Nyquist] at bin_hz resolution."""
    n_bins = int(round(sample_rate_hz / 2 / bin_hz))
    return (np.arange(n_bins) + 0.5) * bin_hz


def init_hz_uniform(n, fs, kernel_len, min_low_hz=1.0, min_band_hz=4.0):
    """f1 equally spaced on the Hz scale up to 0.9 * Nyquist, uniform widths."""
    if n < 1:
        raise ValueError("need at least one filter")
    f_max = 0.9 * fs / 2.0
    f1 = np.linspace(min_low_hz, f_max, n)
    spacing = (f_max - min_low_hz) / n
    bw = max(spacing, min_band_hz)
    return SincFilterbank(
        n, kernel_len, fs, min_low_hz, min_band_hz,
        low_hz=f1 - min_low_hz,
        band_hz=np.full(n, bw - min_band_hz),
    )


def init_mel_uniform(n, fs, kernel_len, f_lo, f_hi=None, min_low_hz=50.0, min_band_hz=50.0):
    """n+1 edges equally spaced on the Mel scale; filter k spans edges (k, k+1)."""
    if f_lo < min_low_hz:
        raise ValueError(f"f_lo={f_lo} below min_low_hz={min_low_hz}")
    if f_hi is None:
        f_hi = 0.9 * fs / 2.0
    if f_hi > fs / 2.0:
        raise ValueError(f"f_hi={f_hi} above Nyquist {fs / 2.0}")
    edges = mel_inv(np.linspace(mel(f_lo), mel(f_hi), n + 1))
    f1 = edges[:-1]
    bw = np.diff(edges)
    return SincFilterbank(
        n, kernel_len, fs, min_low_hz, min_band_hz,
        low_hz=f1 - min_low_hz,
        band_hz=np.maximum(bw - min_band_hz, 0.0),
    )
