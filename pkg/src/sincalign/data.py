"""Dataset model: trial records, file formats, windowing, fold protocols,
checkpointing, and the synthetic cocktail-party generator."""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .dsp import Signal, butterworth, preprocess_audio, preprocess_eeg

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
CHECKPOINT_MAGIC = b"SALC"
CHECKPOINT_VERSION = 1

# 10/20-extended montage, 64 channels; odd suffix = left hemisphere,
# even = right, z = midline.
CHANNEL_NAMES_64 = [
    "Fp1", "Fpz", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8",
    "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8",
    "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8",
    "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8",
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2", "Iz", "M1", "M2",
]

TEMPORAL_SUBSET = ["T7", "T8", "FT7", "FT8", "TP7", "TP8"]


def hemisphere(name):
    """-1 left, +1 right, 0 midline."""
    tail = name[-1]
    if not tail.isdigit():
        return 0
    return -1 if int(tail) % 2 else 1


@dataclass
class TrialRecord:
    trial_id: str
    subject_id: str
    story_id: str
    eeg: Signal
    audio_a: Signal
    audio_b: Signal
    attended: str  # 'a' or 'b'

    def __post_init__(self):
        if self.attended not in ("a", "b"):
            raise ValueError(f"trial {self.trial_id}: attended must be 'a' or 'b'")
        tol = 1.0 / self.eeg.sample_rate_hz
        for label, audio in (("a", self.audio_a), ("b", self.audio_b)):
            if abs(audio.duration_s - self.eeg.duration_s) > tol + 1e-9:
                raise ValueError(
                    f"trial {self.trial_id}: audio_{label} duration {audio.duration_s:.4f}s "
                    f"misaligned with EEG {self.eeg.duration_s:.4f}s (tolerance one EEG sample)"
                )


@dataclass
class WindowSample:
    eeg: np.ndarray      # C x T
    audio_1: np.ndarray  # L
    audio_2: np.ndarray  # L
    label: int           # index of the attended stream after order shuffling
    trial_id: str = ""
    story_id: str = ""


@dataclass
class FoldSpec:
    name: str
    train_trials: list
    test_trials: list

    def __post_init__(self):
        overlap = set(self.train_trials) & set(self.test_trials)
        if overlap:
            raise ValueError(f"fold {self.name}: train/test overlap {sorted(overlap)}")


# ---------------------------------------------------------------------------
# signal files + manifest


def write_signal(path, s: Signal):
    """Raw little-endian float32, channel-major, with a JSON sidecar."""
    path = Path(path)
    raw = np.ascontiguousarray(s.data, dtype="<f4").tobytes()
    path.write_bytes(raw)
    sidecar = {
        "dtype": "float32-le",
        "sample_rate_hz": s.sample_rate_hz,
        "channels": s.channels,
        "n_samples": s.n_samples,
        "channel_names": s.channel_names,
        "crc32": zlib.crc32(raw),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1))


def read_signal(path) -> Signal:
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not path.exists() or not sidecar_path.exists():
        raise FileNotFoundError(f"missing signal file or sidecar for {path}")
    meta = json.loads(sidecar_path.read_text())
    raw = path.read_bytes()
    if zlib.crc32(raw) != meta["crc32"]:
        raise ValueError(f"checksum mismatch reading {path}")
    data = np.frombuffer(raw, dtype="<f4").reshape(meta["channels"], meta["n_samples"])
    return Signal(meta["sample_rate_hz"], data.astype(np.float64),
                  channel_names=meta.get("channel_names"))


def write_manifest(directory, trials):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for tr in trials:
        base = tr.trial_id
        write_signal(directory / f"{base}_eeg.f32", tr.eeg)
        write_signal(directory / f"{base}_audio_a.f32", tr.audio_a)
        write_signal(directory / f"{base}_audio_b.f32", tr.audio_b)
        entries.append({
            "trial_id": tr.trial_id,
            "subject_id": tr.subject_id,
            "story_id": tr.story_id,
            "eeg_file": f"{base}_eeg.f32",
            "audio_a_file": f"{base}_audio_a.f32",
            "audio_b_file": f"{base}_audio_b.f32",
            "attended": tr.attended,
        })
    manifest = {"format_version": MANIFEST_VERSION, "trials": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return directory / "manifest.json"


def load_trials(manifest_path):
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ValueError(
            f"unknown manifest format_version {doc.get('format_version')!r} "
            f"(expected {MANIFEST_VERSION})"
        )
    root = manifest_path.parent
    trials = []
    for entry in doc["trials"]:
        try:
            trials.append(TrialRecord(
                trial_id=entry["trial_id"],
                subject_id=entry["subject_id"],
                story_id=entry["story_id"],
                eeg=read_signal(root / entry["eeg_file"]),
                audio_a=read_signal(root / entry["audio_a_file"]),
                audio_b=read_signal(root / entry["audio_b_file"]),
                attended=entry["attended"],
            ))
        except (KeyError, FileNotFoundError, ValueError) as e:
            raise type(e)(f"trial {entry.get('trial_id', '?')!r}: {e}") from e
    if not trials:
        log.warning("manifest %s lists no trials", manifest_path)
    return trials


def preprocess_trial(trial: TrialRecord, eeg_hz=128.0, audio_hz=16000.0) -> TrialRecord:
    """Full deterministic preprocessing of one trial (EEG chain + audio chain)."""
    return TrialRecord(
        trial_id=trial.trial_id,
        subject_id=trial.subject_id,
        story_id=trial.story_id,
        eeg=preprocess_eeg(trial.eeg, target_hz=eeg_hz),
        audio_a=preprocess_audio(trial.audio_a, target_hz=audio_hz),
        audio_b=preprocess_audio(trial.audio_b, target_hz=audio_hz),
        attended=trial.attended,
    )


# ---------------------------------------------------------------------------
# windowing + folds

SUPPORTED_WINDOWS_S = (0.5, 1.0, 1.5, 2.0, 2.5)


def make_windows(trials, window_s, hop_s=None, seed=0):
    """Cut decision windows; audio presentation order is shuffled per window
    with the label tracking the attended position."""
    if window_s not in SUPPORTED_WINDOWS_S:
        raise ValueError(f"window_s must be one of {SUPPORTED_WINDOWS_S}, got {window_s}")
    hop_s = hop_s or window_s
    if hop_s <= 0:
        raise ValueError("hop_s must be positive")
    rng = np.random.default_rng(seed)
    windows = []
    for trial in trials:
        fs_e = trial.eeg.sample_rate_hz
        fs_a = trial.audio_a.sample_rate_hz
        n_e = int(round(window_s * fs_e))
        n_a = int(round(window_s * fs_a))
        hop_e = int(round(hop_s * fs_e))
        if n_e > trial.eeg.n_samples:
            log.warning("trial %s shorter than window %.1fs; skipped", trial.trial_id, window_s)
            continue
        n_win = (trial.eeg.n_samples - n_e) // hop_e + 1
        att, ign = ((trial.audio_a, trial.audio_b) if trial.attended == "a"
                    else (trial.audio_b, trial.audio_a))
        for i in range(n_win):
            e0 = i * hop_e
            a0 = int(round(e0 / fs_e * fs_a))
            if a0 + n_a > att.n_samples:
                break
            eeg_w = trial.eeg.data[:, e0:e0 + n_e].astype(np.float32)
            att_w = att.data[0, a0:a0 + n_a].astype(np.float32)
            ign_w = ign.data[0, a0:a0 + n_a].astype(np.float32)
            if rng.random() < 0.5:
                windows.append(WindowSample(eeg_w, att_w, ign_w, 0,
                                            trial.trial_id, trial.story_id))
            else:
                windows.append(WindowSample(eeg_w, ign_w, att_w, 1,
                                            trial.trial_id, trial.story_id))
    return windows


def batch_arrays(windows):
    """Stack a list of WindowSamples into model-ready arrays."""
    eeg = np.stack([w.eeg for w in windows])
    a1 = np.stack([w.audio_1 for w in windows])[:, None, :]
    a2 = np.stack([w.audio_2 for w in windows])[:, None, :]
    labels = np.array([w.label for w in windows], dtype=np.int64)
    return eeg, a1, a2, labels


def build_folds(protocol, trials, custom=None):
    """kul: 4 folds of held-out trial pairs; dtu: first 48 train / last 12 test."""
    ids = [t.trial_id for t in trials]
    if protocol == "kul":
        if len(ids) != 8:
            raise ValueError(f"kul protocol needs exactly 8 trials, got {len(ids)}")
        folds = []
        for i in range(4):
            test = ids[2 * i:2 * i + 2]
            train = [x for x in ids if x not in test]
            folds.append(FoldSpec(f"fold{i + 1}", train, test))
        return folds
    if protocol == "dtu":
        if len(ids) != 60:
            raise ValueError(f"dtu protocol needs exactly 60 trials, got {len(ids)}")
        return [FoldSpec("dtu", ids[:48], ids[48:])]
    if protocol == "custom":
        if not custom:
            raise ValueError("custom protocol requires explicit fold specs")
        folds = []
        for i, (train, test) in enumerate(custom):
            unknown = (set(train) | set(test)) - set(ids)
            if unknown:
                raise ValueError(f"custom fold {i}: unknown trial ids {sorted(unknown)}")
            folds.append(FoldSpec(f"custom{i + 1}", list(train), list(test)))
        return folds
    raise ValueError(f"unknown protocol {protocol!r}")


def check_story_leakage(fold, trials):
    """No story may appear on both sides of a fold."""
    by_id = {t.trial_id: t for t in trials}
    train_stories = {by_id[i].story_id for i in fold.train_trials}
    test_stories = {by_id[i].story_id for i in fold.test_trials}
    leaked = train_stories & test_stories
    if leaked:
        raise ValueError(f"fold {fold.name}: stories {sorted(leaked)} leak across the split")


# ---------------------------------------------------------------------------
# synthetic cocktail-party generator


@dataclass
class SynthConfig:
    n_trials: int = 16
    trial_s: float = 60.0
    n_channels: int = 64
    snr_db: float = 10.0
    lateralization: float = 1.0
    ignored_gain: float = 0.3   # relative amplitude of the ignored stream in EEG
    eeg_fs: float = 512.0
    audio_fs: float = 16000.0
    carrier_hz: float = 14.0    # attention-marking rhythm, mid 12-16 Hz band


def _pink_noise(rng, n, fs):
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, 1 / fs)
    spec[1:] /= np.sqrt(f[1:])
    x = np.fft.irfft(spec, n)
    return x / x.std()


def _speech_envelope(rng, n_slow, fs_slow):
    """Positive 2-8 Hz amplitude envelope at a slow rate."""
    x = rng.standard_normal(n_slow)
    sig = Signal(fs_slow, x[None, :])
    band = butterworth(sig, 4, (2.0, 8.0), "bandpass").data[0]
    band = band / max(band.std(), 1e-12)
    return np.clip(1.0 + 0.95 * band, 0.02, None)


def _trf_kernel(fs):
    """Two-peak response: positive ~100 ms, negative ~200 ms."""
    t = np.arange(0, 0.35, 1 / fs)
    k = np.exp(-((t - 0.10) ** 2) / (2 * 0.02 ** 2)) - 0.6 * np.exp(
        -((t - 0.20) ** 2) / (2 * 0.03 ** 2))
    return k / np.abs(k).sum()


def synth_dataset(cfg: SynthConfig, seed=0):
    """Deterministic synthetic trials: two AM-pink-noise 'speech' streams and
    EEG built from envelope responses, a 12-16 Hz attention carrier, and
    lateralized gains."""
    if not -20.0 <= cfg.snr_db <= 60.0:
        raise ValueError(f"snr_db {cfg.snr_db} outside supported range [-20, 60]")
    if cfg.n_channels != len(CHANNEL_NAMES_64):
        raise ValueError(f"generator supports {len(CHANNEL_NAMES_64)} channels")
    root_rng = np.random.default_rng(seed)
    trf = _trf_kernel(cfg.eeg_fs)
    hemi = np.array([hemisphere(n) for n in CHANNEL_NAMES_64], dtype=float)
    n_eeg = int(round(cfg.trial_s * cfg.eeg_fs))
    n_aud = int(round(cfg.trial_s * cfg.audio_fs))
    t_eeg = np.arange(n_eeg) / cfg.eeg_fs
    # fixed per-dataset (single-subject) topography, shared by both streams:
    # attention is marked only by gain and lateralization, never by a
    # stream-specific channel pattern
    w_env = root_rng.uniform(0.5, 1.5, cfg.n_channels)
    w_osc = root_rng.uniform(0.5, 1.5, cfg.n_channels)
    trials = []
    for i in range(cfg.n_trials):
        rng = np.random.default_rng(root_rng.integers(0, 2**63))
        attended = "a" if i % 2 == 0 else "b"

        audio, env_eeg = [], []
        for _ in range(2):
            env = _speech_envelope(rng, n_eeg, cfg.eeg_fs)
            pink = _pink_noise(rng, n_aud, cfg.audio_fs)
            env_a = np.interp(np.arange(n_aud) / cfg.audio_fs, t_eeg, env)
            stream = env_a * pink
            audio.append(stream / stream.std())
            env_eeg.append(env)
        env_att, env_ign = (env_eeg[0], env_eeg[1]) if attended == "a" else (env_eeg[1], env_eeg[0])

        resp_att = sps.fftconvolve(env_att - env_att.mean(), trf)[:n_eeg]
        resp_ign = sps.fftconvolve(env_ign - env_ign.mean(), trf)[:n_eeg]
        osc_att = np.sin(2 * np.pi * cfg.carrier_hz * t_eeg + rng.uniform(0, 2 * np.pi)) * env_att
        osc_ign = np.sin(2 * np.pi * cfg.carrier_hz * t_eeg + rng.uniform(0, 2 * np.pi)) * env_ign

        side = -1.0 if attended == "a" else 1.0  # stream a on the left
        lat = 1.0 + cfg.lateralization * np.clip(hemi * side, 0, None)

        signal_part = lat[:, None] * (
            np.outer(w_env, resp_att) + 0.5 * np.outer(w_osc, osc_att)
        ) + cfg.ignored_gain * (
            np.outer(w_env, resp_ign) + 0.5 * np.outer(w_osc, osc_ign)
        )
        noise = Signal(cfg.eeg_fs, rng.standard_normal((cfg.n_channels, n_eeg)))
        noise = butterworth(noise, 4, (1.0, 45.0), "bandpass").data
        noise *= signal_part.std() / (noise.std() * 10 ** (cfg.snr_db / 20))
        eeg = signal_part + noise

        trials.append(TrialRecord(
            trial_id=f"trial{i + 1:02d}",
            subject_id="synth01",
            story_id=f"story{i + 1:02d}",
            eeg=Signal(cfg.eeg_fs, eeg, channel_names=list(CHANNEL_NAMES_64)),
            audio_a=Signal(cfg.audio_fs, audio[0][None, :]),
            audio_b=Signal(cfg.audio_fs, audio[1][None, :]),
            attended=attended,
        ))
    return trials


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    format_version: int
    config: dict
    rng_seed: int | None
    tensors: dict

    def model_state(self):
        return {k[len("model."):]: v for k, v in self.tensors.items()
                if k.startswith("model.")}

    def optimizer_state(self):
        return {k[len("optim."):]: v for k, v in self.tensors.items()
                if k.startswith("optim.")}


def save_checkpoint(path, model, optimizer=None, config=None, rng_seed=None):
    """Versioned binary container: JSON directory + raw tensors, each with an
    embedded length and crc32."""
    named = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        named.update({f"optim.{k}": v for k, v in optimizer.state_dict().items()})
    directory = []
    payload = bytearray()
    for name, arr in named.items():
        arr = np.ascontiguousarray(arr)
        raw = arr.tobytes()
        directory.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str,
            "offset": len(payload),
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw),
        })
        payload.extend(raw)
    header = json.dumps({
        "format_version": CHECKPOINT_VERSION,
        "config": config or {},
        "rng_seed": rng_seed,
        "tensors": directory,
    }).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        f.write(payload)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode())
    payload = raw[16 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        chunk = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"] or zlib.crc32(chunk) != entry["crc32"]:
            raise ValueError(f"{path}: tensor {entry['name']!r} corrupt or truncated")
        tensors[entry["name"]] = np.frombuffer(chunk, dtype=entry["dtype"]).reshape(
            entry["shape"]).copy()
    return Checkpoint(header["format_version"], header["config"],
                      header["rng_seed"], tensors)
