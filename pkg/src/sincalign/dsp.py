"""Deterministic signal preprocessing for EEG and audio.

All filters are applied causally (forward only). Filter coefficients come
from scipy.signal; pipeline order, ERB spacing and resampling policy live
here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

log = logging.getLogger(__name__)


@dataclass
class Signal:
    """Multichannel signal; data is channels x samples."""

    sample_rate_hz: float
    data: np.ndarray
    channel_names: list[str] | None = None

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.channel_names is not None and len(self.channel_names) != self.channels:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {self.channels} channels"
            )

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def duration_s(self):
        return self.n_samples / self.sample_rate_hz

    def with_data(self, data, sample_rate_hz=None):
        return replace(
            self, data=data,
            sample_rate_hz=sample_rate_hz or self.sample_rate_hz,
        )


@dataclass
class BiquadCascade:
    """Second-order sections, each normalized to a0 == 1."""

    sections: list[tuple]
    description: str = ""

    @classmethod
    def from_sos(cls, sos, description=""):
        sos = np.atleast_2d(sos)
        sections = []
        for row in sos:
            b0, b1, b2, a0, a1, a2 = row
            sections.append((b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0))
        out = cls(sections, description)
        if not out.is_stable():
            raise ValueError(f"unstable filter design: {description}")
        return out

    def to_sos(self):
        return np.array([(b0, b1, b2, 1.0, a1, a2) for b0, b1, b2, a1, a2 in self.sections])

    def poles(self):
        ps = []
        for _, _, _, a1, a2 in self.sections:
            ps.extend(np.roots([1.0, a1, a2]))
        return np.array(ps)

    def is_stable(self):
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def apply(self, data):
        return sps.sosfilt(self.to_sos(), data, axis=-1)

    def gain_at(self, freq_hz, fs):
        _, h = sps.sosfreqz(self.to_sos(), worN=2 * np.pi * np.atleast_1d(freq_hz) / fs)
        return np.abs(h)


def _check_band(freq_hz, fs):
    if not 0 < freq_hz < fs / 2:
        raise ValueError(f"frequency {freq_hz} Hz outside (0, Nyquist={fs / 2}) for fs={fs}")


def design_notch(freq_hz, q, fs):
    _check_band(freq_hz, fs)
    b, a = sps.iirnotch(freq_hz, q, fs=fs)
    return BiquadCascade.from_sos(np.hstack([b, a]), f"notch {freq_hz} Hz Q={q}")


def notch_filter(s: Signal, freq_hz: float, q: float = 30.0) -> Signal:
    """Remove a narrow band (power-line) component."""
    casc = design_notch(freq_hz, q, s.sample_rate_hz)
    return s.with_data(casc.apply(s.data))


def design_butterworth(order, cutoff_hz, kind, fs):
    if order < 2 or order % 2:
        raise ValueError(f"order must be a positive even integer, got {order}")
    if kind == "highpass":
        _check_band(float(cutoff_hz), fs)
        sos = sps.butter(order, cutoff_hz, btype="highpass", fs=fs, output="sos")
    elif kind == "lowpass":
        _check_band(float(cutoff_hz), fs)
        sos = sps.butter(order, cutoff_hz, btype="lowpass", fs=fs, output="sos")
    elif kind == "bandpass":
        lo, hi = cutoff_hz
        if not lo < hi:
            raise ValueError(f"bandpass cutoffs must be ordered, got ({lo}, {hi})")
        _check_band(lo, fs)
        _check_band(hi, fs)
        sos = sps.butter(order // 2, [lo, hi], btype="bandpass", fs=fs, output="sos")
    else:
        raise ValueError(f"unknown filter kind {kind!r}")
    return BiquadCascade.from_sos(sos, f"butterworth {kind} order {order} @ {cutoff_hz} Hz")


def butterworth(s: Signal, order: int, cutoff_hz, kind: str) -> Signal:
    casc = design_butterworth(order, cutoff_hz, kind, s.sample_rate_hz)
    return s.with_data(casc.apply(s.data))


def resample(s: Signal, target_hz: float) -> Signal:
    """Downsample with an 8th-order Butterworth anti-alias filter at 0.45*target."""
    fs = s.sample_rate_hz
    if target_hz > fs:
        raise ValueError(f"upsampling {fs} -> {target_hz} Hz is unsupported")
    if target_hz == fs:
        return s.with_data(s.data.copy())
    casc = design_butterworth(8, 0.45 * target_hz, "lowpass", fs)
    filtered = casc.apply(s.data)
    out_len = int(round(s.n_samples * target_hz / fs))
    ratio = fs / target_hz
    if float(ratio).is_integer() and s.n_samples % int(ratio) == 0:
        data = filtered[:, :: int(ratio)]
    else:
        t_old = np.arange(s.n_samples) / fs
        t_new = np.arange(out_len) / target_hz
        data = np.stack([np.interp(t_new, t_old, ch) for ch in filtered])
    return s.with_data(data, sample_rate_hz=target_hz)


def average_rereference(s: Signal) -> Signal:
    if s.channels < 2:
        raise ValueError("average re-reference needs at least 2 channels")
    return s.with_data(s.data - s.data.mean(axis=0, keepdims=True))


def zscore(s: Signal, scope: str = "per_channel") -> Signal:
    """Population (N-denominator) z-score per channel or globally."""
    if scope == "per_channel":
        mu = s.data.mean(axis=1, keepdims=True)
        sd = s.data.std(axis=1, keepdims=True)
        bad = np.where(sd[:, 0] <= 1e-12)[0]
        if bad.size:
            names = (
                [s.channel_names[i] for i in bad] if s.channel_names else list(bad)
            )
            raise ValueError(f"zero-variance channel(s): {names}")
    elif scope == "global":
        mu = s.data.mean()
        sd = s.data.std()
        if sd <= 1e-12:
            raise ValueError("zero-variance signal")
    else:
        raise ValueError(f"unknown zscore scope {scope!r}")
    return s.with_data((s.data - mu) / sd)


# ---------------------------------------------------------------------------
# auditory front end

# Glasberg-Moore constants
def erb_number(f_hz):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f_hz, dtype=float))


def erb_number_inv(e):
    return (10.0 ** (np.asarray(e, dtype=float) / 21.4) - 1.0) / 0.00437


def erb_bandwidth(f_hz):
    return 24.7 * (0.00437 * np.asarray(f_hz, dtype=float) + 1.0)


def gammatone_centers(n_bands, f_lo, f_hi):
    return erb_number_inv(np.linspace(erb_number(f_lo), erb_number(f_hi), n_bands))


def gammatone_bank(s: Signal, n_bands: int = 32, f_lo: float = 80.0, f_hi: float = 8000.0) -> Signal:
    """4th-order gammatone bank, centers ERB-spaced; mono in, n_bands out."""
    if s.channels != 1:
        raise ValueError(f"gammatone bank expects mono input, got {s.channels} channels")
    if not 0 < f_lo < f_hi:
        raise ValueError(f"need 0 < f_lo < f_hi, got ({f_lo}, {f_hi})")
    if f_hi >= s.sample_rate_hz / 2:
        raise ValueError(f"f_hi={f_hi} Hz reaches Nyquist for fs={s.sample_rate_hz}")
    centers = gammatone_centers(n_bands, f_lo, f_hi)
    out = np.empty((n_bands, s.n_samples))
    for i, fc in enumerate(centers):
        b, a = sps.gammatone(fc, "iir", fs=s.sample_rate_hz)
        out[i] = sps.lfilter(b, a, s.data[0])
    return Signal(s.sample_rate_hz, out, channel_names=[f"gt{fc:.0f}" for fc in centers])


def envelope(s: Signal, lowpass_hz: float = 8.0, target_hz: float = 128.0) -> Signal:
    """Rectify, lowpass, and resample a mono signal to the EEG rate."""
    if s.channels != 1:
        raise ValueError(f"envelope expects mono input, got {s.channels} channels")
    rectified = s.with_data(np.abs(s.data))
    smoothed = butterworth(rectified, 4, lowpass_hz, "lowpass")
    if target_hz < s.sample_rate_hz:
        smoothed = resample(smoothed, target_hz)
    return smoothed


# ---------------------------------------------------------------------------
# pipelines (order pinned)


def ica_passthrough(s: Signal) -> Signal:
    """Placeholder stage: artifact removal by ICA is out of scope."""
    log.info("ICA stage is a pass-through (component inspection not automated)")
    return s


def preprocess_eeg(
    s: Signal,
    notch_hz: float = 50.0,
    notch_q: float = 30.0,
    highpass_hz: float = 0.1,
    band=(1.0, 60.0),
    target_hz: float = 128.0,
) -> Signal:
    """notch -> highpass -> average re-ref -> bandpass -> resample -> ICA stub -> zscore."""
    s = notch_filter(s, notch_hz, notch_q)
    s = butterworth(s, 4, highpass_hz, "highpass")
    s = average_rereference(s)
    s = butterworth(s, 4, band, "bandpass")
    s = resample(s, target_hz)
    s = ica_passthrough(s)
    return zscore(s, "per_channel")


def preprocess_audio(
    s: Signal,
    target_hz: float = 16000.0,
    n_bands: int = 32,
    f_lo: float = 80.0,
    f_hi: float = 7000.0,
) -> Signal:
    """resample -> gammatone bank -> sum to mono -> global zscore."""
    s = resample(s, target_hz)
    bands = gammatone_bank(s, n_bands, f_lo, min(f_hi, 0.45 * target_hz))
    mono = Signal(s.sample_rate_hz, bands.data.sum(axis=0, keepdims=True))
    return zscore(mono, "global")
