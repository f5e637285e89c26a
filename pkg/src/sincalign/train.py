"""Training orchestration: model assembly, fold loops, evaluation, decision
window sweeps, and the ablation harness."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import align
from . import dsp
from . import tensor as T
from .align import EdiHead
from .data import (FoldSpec, batch_arrays, check_story_leakage, make_windows,
                   save_checkpoint)
from .encoder import AudioEncoder, EEGEncoder, EncoderConfig
from .nn import Adam, Module
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 150
    lr: float = 1e-4
    batch_size: int = 32
    dropout: float = 0.1
    tau: float = align.DEFAULT_TAU
    window_s: float = 1.0
    no_edi: bool = False
    no_eaci: bool = False
    no_contrastive: bool = False
    seed: int = 0
    precision: str = "f32"
    eeg_channels: int = 64
    audio_filters: int = 320

    def __post_init__(self):
        for name in ("epochs", "lr", "batch_size", "tau", "window_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.no_edi and self.no_eaci:
            raise ValueError("no_edi and no_eaci together leave no decision path")

    def model_config(self):
        return {
            "window_s": self.window_s,
            "eeg_channels": self.eeg_channels,
            "audio_filters": self.audio_filters,
            "dropout": self.dropout,
            "tau": self.tau,
        }


class SincAlignNet(Module):
    """Both encoders plus the EEG-only classifier head."""

    def __init__(self, model_config, seed=0):
        super().__init__()
        self.config = dict(model_config)
        window_s = model_config.get("window_s", 1.0)
        dropout = model_config.get("dropout", 0.1)
        rng = np.random.default_rng(seed)
        eeg_cfg = EncoderConfig.eeg_default(model_config.get("eeg_channels", 64), window_s)
        audio_cfg = EncoderConfig.audio_default(window_s, model_config.get("audio_filters", 320))
        eeg_cfg.dropout_p = dropout
        audio_cfg.dropout_p = dropout
        self.eeg_enc = EEGEncoder(eeg_cfg, rng, dropout_seed=seed + 101)
        self.audio_enc = AudioEncoder(audio_cfg, rng, dropout_seed=seed + 202)
        self.edi_head = EdiHead(rng, dropout_p=dropout, dropout_seed=seed + 303)

    def forward(self, eeg, a1, a2):
        z_e = self.eeg_enc(eeg)
        z_a1 = self.audio_enc(a1)
        z_a2 = self.audio_enc(a2)
        return z_e, z_a1, z_a2

    __call__ = forward


def combined_logits(model, z_e, z_a1, z_a2, cfg: TrainConfig):
    """Decision logits respecting the ablation switches."""
    parts = []
    if not cfg.no_eaci:
        parts.append(align.eaci(z_e, z_a1, z_a2))
    if not cfg.no_edi:
        parts.append(align.edi(z_e, model.edi_head))
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


def batch_loss(model, batch, cfg: TrainConfig):
    eeg, a1, a2, labels = batch
    z_e, z_a1, z_a2 = model(Tensor(eeg), Tensor(a1), Tensor(a2))
    logits = combined_logits(model, z_e, z_a1, z_a2, cfg)
    clip = None
    if not cfg.no_contrastive:
        mask = labels.astype(z_e.dtype.type)[:, None]
        z_pos = z_a1 * (1.0 - mask) + z_a2 * mask
        clip = align.clip_loss(z_e, z_pos, cfg.tau)
    return align.total_loss(clip, logits, labels)


@dataclass
class EvalReport:
    accuracy: float
    n_windows: int
    per_fold: dict = field(default_factory=dict)
    mean: float = 0.0
    std: float = 0.0
    confusion: list = field(default_factory=lambda: [[0, 0], [0, 0]])

    def summary(self):
        return f"{format_mean_std(self.mean, self.std)} over {self.n_windows} windows"


def format_mean_std(mean, std):
    return f"{mean:.2f}±{std:.2f}"


def evaluate(model, windows, cfg: TrainConfig, batch_size=64) -> EvalReport:
    """Deterministic eval-mode accuracy of the combined decision."""
    model.eval()
    confusion = np.zeros((2, 2), dtype=int)
    with T.no_grad():
        for i in range(0, len(windows), batch_size):
            batch = batch_arrays(windows[i:i + batch_size])
            eeg, a1, a2, labels = batch
            z_e, z_a1, z_a2 = model(Tensor(eeg), Tensor(a1), Tensor(a2))
            logits = combined_logits(model, z_e, z_a1, z_a2, cfg)
            pred = align.decide(logits.data)
            for y, p in zip(labels, pred):
                confusion[y, p] += 1
    model.train()
    correct = int(confusion[0, 0] + confusion[1, 1])
    total = int(confusion.sum())
    acc = 100.0 * correct / max(total, 1)
    return EvalReport(accuracy=acc, n_windows=total, mean=acc, std=0.0,
                      confusion=confusion.tolist())


PLATEAU_FRACTION = 0.95
SCREEN_WINDOWS = 96
SCREEN_CANDIDATES = 8
SCREEN_SEED_STRIDE = 997


def plateau_loss(batch_size):
    """Loss of a model whose similarity rows are uniform: the contrastive
    term contributes B*log(B) and the decision CE log(2) at chance."""
    return batch_size * math.log(batch_size) + math.log(2)


def _rdm_upper(m):
    """Upper triangle of the row-wise cosine similarity matrix (RSA vector)."""
    m = m - m.mean(axis=1, keepdims=True)
    m = m / np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-12)
    sims = m @ m.T
    return sims[np.triu_indices(len(sims), 1)]


def screen_init_seeds(windows, cfg: TrainConfig, seed, n_candidates=SCREEN_CANDIDATES):
    """Rank candidate model seeds by envelope alignment at initialization.

    Random initializations whose audio encoder carries no attended-envelope
    information into the embedding space reliably fall into the contrastive
    uniform-softmax basin, or leave it by memorizing windows instead of
    aligning content. Initializations that start with a positive
    representational correlation between audio-embedding similarities and
    attended-envelope similarities train to generalizing solutions, and
    more quickly the higher the correlation. This scores each candidate
    seed with that correlation on up to SCREEN_WINDOWS training windows
    and returns (seeds, scores) sorted best first.
    """
    if not windows:
        return [seed], [0.0]
    eeg, a1, a2, labels = batch_arrays(windows[:SCREEN_WINDOWS])
    att = np.where(labels[:, None, None] == 0, a1, a2)
    fs_a = att.shape[-1] / cfg.window_s
    env = np.stack([
        dsp.envelope(dsp.Signal(fs_a, w[None, :])).data[0]
        for w in att[:, 0, :].astype(np.float64)
    ])
    env_rdm = _rdm_upper(env)
    ranked = []
    for r in range(n_candidates):
        cand = seed + SCREEN_SEED_STRIDE * r
        model = SincAlignNet(cfg.model_config(), seed=cand)
        model.eval()
        with T.no_grad():
            z_a = model.audio_enc(Tensor(att)).data
        T.clear_tape()
        score = float(np.corrcoef(_rdm_upper(z_a), env_rdm)[0, 1])
        if not np.isfinite(score):
            score = -1.0
        ranked.append((-score, cand))
    ranked.sort()
    seeds = [cand for _, cand in ranked]
    scores = [-neg for neg, _ in ranked]
    log.info("init screen: best seed %d (alignment %.4f) of %d candidates",
             seeds[0], scores[0], n_candidates)
    return seeds, scores


def train_one(windows, cfg: TrainConfig, seed=None, log_every=0):
    """Train a fresh model on a list of windows; returns (model, final_loss).

    The initialization is chosen by screen_init_seeds: candidates without
    envelope information in the initial audio embeddings land in a
    near-zero-gradient basin where the contrastive loss stays pinned at its
    uniform-softmax value B*log(B), or escape it by memorizing windows. As
    a fallback, if the epoch-mean loss has not dropped clearly below that
    plateau after a patience window, the model and optimizer are
    reinitialized from the next-ranked candidate within the same epoch
    budget.
    """
    seed = cfg.seed if seed is None else seed
    candidates, _ = screen_init_seeds(windows, cfg, seed)
    model = SincAlignNet(cfg.model_config(), seed=candidates[0])
    opt = Adam(model, lr=cfg.lr)
    rng = np.random.default_rng(seed + 7)
    last_good = copy.deepcopy(model.state_dict())
    final_loss = float("nan")
    n = len(windows)
    patience = max(5, cfg.epochs // 6)
    plateau_threshold = PLATEAU_FRACTION * plateau_loss(cfg.batch_size)
    restarts = 0
    epochs_since_init = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = batch_arrays([windows[j] for j in idx])
            T.clear_tape()
            model.zero_grad()
            loss = batch_loss(model, batch, cfg)
            if not np.isfinite(loss.item()):
                log.error("loss diverged at epoch %d; restoring last good state", epoch)
                model.load_state_dict(last_good)
                T.clear_tape()
                return model, final_loss
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
        T.clear_tape()
        last_good = copy.deepcopy(model.state_dict())
        if epoch_losses:
            final_loss = float(np.mean(epoch_losses))
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d/%d mean loss %.4f", epoch + 1, cfg.epochs, final_loss)
        epochs_since_init += 1
        if (not cfg.no_contrastive and epochs_since_init >= patience
                and epoch < cfg.epochs - 1 and epoch_losses
                and final_loss > plateau_threshold):
            restarts += 1
            next_seed = candidates[restarts % len(candidates)]
            log.info(
                "loss %.2f still at the contrastive plateau after %d epochs; "
                "reinitializing from seed %d (restart %d)",
                final_loss, epochs_since_init, next_seed, restarts)
            model = SincAlignNet(cfg.model_config(), seed=next_seed)
            opt = Adam(model, lr=cfg.lr)
            last_good = copy.deepcopy(model.state_dict())
            epochs_since_init = 0
    return model, final_loss


def train(trials, folds, cfg: TrainConfig, out_dir=None, log_every=0):
    """Train/evaluate per fold; returns (EvalReport, checkpoint paths)."""
    by_id = {t.trial_id: t for t in trials}
    fold_accs, paths = {}, []
    total_confusion = np.zeros((2, 2), dtype=int)
    total_windows = 0
    with T.precision(cfg.precision):
        for k, fold in enumerate(folds):
            check_story_leakage(fold, trials)
            train_w = make_windows([by_id[i] for i in fold.train_trials],
                                   cfg.window_s, seed=cfg.seed + 11 * k)
            test_w = make_windows([by_id[i] for i in fold.test_trials],
                                  cfg.window_s, seed=cfg.seed + 11 * k + 5)
            t0 = time.time()
            model, final_loss = train_one(train_w, cfg, seed=cfg.seed + k, log_every=log_every)
            report = evaluate(model, test_w, cfg)
            fold_accs[fold.name] = report.accuracy
            total_confusion += np.array(report.confusion)
            total_windows += report.n_windows
            log.info("%s: acc %.2f%% on %d windows (loss %.4f, %.1fs)",
                     fold.name, report.accuracy, report.n_windows, final_loss,
                     time.time() - t0)
            if out_dir is not None:
                path = save_checkpoint(
                    f"{out_dir}/{fold.name}.ckpt", model, config={
                        "model": cfg.model_config(), "train": asdict(cfg),
                        "fold": fold.name,
                    }, rng_seed=cfg.seed + k)
                paths.append(path)
    accs = np.array(list(fold_accs.values()))
    correct = total_confusion[0, 0] + total_confusion[1, 1]
    report = EvalReport(
        accuracy=100.0 * correct / max(total_windows, 1),
        n_windows=total_windows, per_fold=fold_accs,
        mean=float(accs.mean()), std=float(accs.std()),
        confusion=total_confusion.tolist(),
    )
    return report, paths


def sweep_windows(trials, folds, cfg: TrainConfig, lengths=(0.5, 1.0, 1.5, 2.0, 2.5)):
    """Train/evaluate per decision-window length; machine-readable rows."""
    rows = []
    for length in lengths:
        d = asdict(cfg)
        d["window_s"] = length
        report, _ = train(trials, folds, TrainConfig(**d))
        rows.append({
            "length_s": length,
            "mean_acc": round(report.mean, 2),
            "std_acc": round(report.std, 2),
            "n_windows": report.n_windows,
        })
    return rows


ABLATION_CONDITIONS = ("full", "no_edi", "no_eaci", "no_contrastive")


def ablation_suite(trials, folds, cfg: TrainConfig):
    """Four runs with shared seed/data; deltas reported against the full model."""
    results = {}
    for condition in ABLATION_CONDITIONS:
        d = asdict(cfg)
        d.update(no_edi=False, no_eaci=False, no_contrastive=False)
        if condition != "full":
            d[condition] = True
        report, _ = train(trials, folds, TrainConfig(**d))
        results[condition] = report.mean
    full = results["full"]
    return [{"condition": c, "accuracy": round(results[c], 2),
             "delta": round(results[c] - full, 2)} for c in ABLATION_CONDITIONS]
