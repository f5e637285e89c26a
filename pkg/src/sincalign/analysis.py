"""Post-hoc interpretability: filter response deltas, channel-envelope
correlations, electrode subsetting, and parameter accounting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import dsp
from .data import TrialRecord
from .sincnet import SincFilterbank, default_response_grid

log = logging.getLogger(__name__)


@dataclass
class ResponseDelta:
    bin_centers_hz: np.ndarray
    delta: np.ndarray  # trained minus initial magnitude, mean over filters


@dataclass
class ChannelCorrelation:
    channel_names: list
    r_values: np.ndarray
    normalized: np.ndarray  # min-max scaled to [0, 1]


def pearson(x, y):
    """Pearson correlation via the direct covariance formula."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch {x.shape} vs {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc**2).sum() * (yc**2).sum())
    if denom == 0:
        return 0.0
    return float((xc * yc).sum() / denom)


def _mean_response(bank: SincFilterbank, grid_hz):
    resp = np.stack([
        bank.magnitude_response(i, grid_hz).magnitude for i in range(bank.n_filters)
    ])
    return resp.mean(axis=0)


def response_delta(bank_trained: SincFilterbank, bank_init: SincFilterbank,
                   bin_hz=4.0) -> ResponseDelta:
    """Per-bin magnitude response change, averaged over filters."""
    same = (
        bank_trained.n_filters == bank_init.n_filters
        and bank_trained.kernel_len == bank_init.kernel_len
        and bank_trained.sample_rate_hz == bank_init.sample_rate_hz
    )
    if not same:
        raise ValueError("checkpoints have different sinc filterbank configurations")
    grid = default_response_grid(bank_trained.sample_rate_hz, bin_hz)
    delta = _mean_response(bank_trained, grid) - _mean_response(bank_init, grid)
    return ResponseDelta(grid, delta)


def select_band_filter(bank: SincFilterbank, band=(12.0, 16.0)):
    """Index of the filter with maximal Jaccard overlap with band; ties and
    equal scores resolve to the lower index."""
    f1, f2 = bank.cutoffs_hz()
    lo, hi = band
    inter = np.maximum(np.minimum(f2, hi) - np.maximum(f1, lo), 0.0)
    union = np.maximum(f2, hi) - np.minimum(f1, lo)
    jaccard = inter / np.maximum(union, 1e-12)
    if jaccard.max() <= 0:
        raise ValueError(f"no sinc filter overlaps the {band} Hz band")
    return int(np.argmax(jaccard))


def channel_envelope_corr(bank: SincFilterbank, trials, band=(12.0, 16.0),
                          eeg_hz=128.0) -> ChannelCorrelation:
    """Per-channel Pearson correlation, per second, between band-filtered EEG
    and the attended-audio envelope, averaged over seconds and trials."""
    idx = select_band_filter(bank, band)
    kernel = bank.build_kernels().data[idx].astype(float)
    sums = None
    count = 0
    names = None
    n_sec_samples = int(eeg_hz)
    for trial in trials:
        if trial.eeg.sample_rate_hz != eeg_hz:
            raise ValueError(f"trial {trial.trial_id}: EEG not at {eeg_hz} Hz")
        attended = trial.audio_a if trial.attended == "a" else trial.audio_b
        env = dsp.envelope(attended, target_hz=eeg_hz).data[0]
        n = min(env.shape[0], trial.eeg.n_samples)
        filtered = np.stack([
            np.convolve(ch, kernel[::-1], mode="same") for ch in trial.eeg.data
        ])
        if sums is None:
            sums = np.zeros(trial.eeg.channels)
            names = trial.eeg.channel_names or [f"ch{i}" for i in range(trial.eeg.channels)]
        for sec in range(n // n_sec_samples):
            sl = slice(sec * n_sec_samples, (sec + 1) * n_sec_samples)
            for c in range(trial.eeg.channels):
                sums[c] += pearson(filtered[c, sl], env[sl])
            count += 1
    if not count:
        raise ValueError("no full seconds of data to correlate")
    r = sums / count
    span = r.max() - r.min()
    normalized = (r - r.min()) / span if span > 0 else np.zeros_like(r)
    return ChannelCorrelation(names, r, normalized)


def electrode_subset(trials, names=tuple(t for t in ("T7", "T8", "FT7", "FT8", "TP7", "TP8"))):
    """Reduce every trial's EEG to the named channels, in the given order."""
    names = list(names)
    out = []
    for trial in trials:
        available = trial.eeg.channel_names
        if available is None:
            raise ValueError(f"trial {trial.trial_id}: EEG has no channel names")
        missing = [n for n in names if n not in available]
        if missing:
            raise ValueError(
                f"trial {trial.trial_id}: channels {missing} not found; "
                f"available: {available}"
            )
        rows = [available.index(n) for n in names]
        eeg = replace(trial.eeg, data=trial.eeg.data[rows].copy(),
                      channel_names=list(names))
        out.append(TrialRecord(trial.trial_id, trial.subject_id, trial.story_id,
                               eeg, trial.audio_a, trial.audio_b, trial.attended))
    return out


def count_params(model):
    """Trainable parameter total plus a per-submodule breakdown."""
    breakdown = {}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        breakdown[top] = breakdown.get(top, 0) + p.size
    return sum(breakdown.values()), breakdown
