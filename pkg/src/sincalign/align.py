"""Contrastive EEG-audio alignment and the dual inference paths.

Training pulls each EEG embedding toward its attended-audio embedding with
a temperature-scaled softmax over the batch; inference sums a cosine
similarity score (EACI) and a small classifier head on the EEG embedding
(EDI) and takes the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Dropout, Linear, Module
from .tensor import Tensor

NORM_FLOOR = 1e-12
DEFAULT_TAU = 0.07


class EdiHead(Module):
    """128 -> 64 -> 2 MLP emitting raw logits."""

    def __init__(self, rng, in_dim=128, hidden=64, dropout_p=0.1, dropout_seed=None):
        super().__init__()
        self.linear1 = Linear(in_dim, hidden, rng)
        self.drop = Dropout(dropout_p, seed=dropout_seed)
        self.linear2 = Linear(hidden, 2, rng)

    def __call__(self, z):
        return self.linear2(self.drop(T.gelu(self.linear1(z))))


def _normalize_rows(z, opname):
    norms = T.l2norm(z, keepdims=True)
    if np.any(norms.data < NORM_FLOOR):
        raise ValueError(f"{opname}: embedding with near-zero norm")
    return z / norms


def cosine_sim(a, b):
    """Cosine similarity over the last axis; batched when inputs are 2-d."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    an = _normalize_rows(a, "cosine_sim")
    bn = _normalize_rows(b, "cosine_sim")
    return T.tsum(an * bn, axis=-1)


def similarity_matrix(z_e, z_a):
    """B x B cosine similarities; row i = EEG i against every audio j."""
    en = _normalize_rows(z_e, "similarity_matrix")
    an = _normalize_rows(z_a, "similarity_matrix")
    return T.matmul(en, T.transpose(an))


def clip_loss(z_e, z_a_pos, tau=DEFAULT_TAU):
    """Contrastive loss, summed (not averaged) over the batch.

    -sum_i log softmax_j(sim(E_i, A_j)/tau)[i]; one-directional EEG->audio.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    b = z_e.shape[0]
    if b < 2:
        raise ValueError(f"contrastive loss needs batch >= 2, got {b}")
    sims = similarity_matrix(z_e, z_a_pos)
    if not np.all(np.isfinite(sims.data)):
        raise FloatingPointError("non-finite similarity in contrastive loss")
    logits = sims * (1.0 / tau)
    row_max = T.tmax(logits, axis=-1, keepdims=True)
    lse = T.log(T.tsum(T.exp(logits - row_max), axis=-1)) + T.reshape(row_max, (b,))
    eye = np.eye(b)
    diag = T.tsum(logits * eye, axis=-1)
    return T.tsum(lse - diag)


def eaci(z_e, z_a1, z_a2):
    """[sim(E, A1), sim(E, A2)]; (2,) for vectors, (B, 2) for batches."""
    s1 = cosine_sim(z_e, z_a1)
    s2 = cosine_sim(z_e, z_a2)
    if s1.ndim == 0:
        return T.concat([T.reshape(s1, (1,)), T.reshape(s2, (1,))])
    b = s1.shape[0]
    return T.concat([T.reshape(s1, (b, 1)), T.reshape(s2, (b, 1))], axis=1)


def edi(z_e, head: EdiHead):
    """Likelihoods [p1, p2] from the EEG-only classifier head.

    The MLP output is softmaxed so both decision paths contribute on the
    same bounded scale: probabilities here, cosine similarities in [-1, 1]
    from the correlation path.
    """
    if z_e.shape[-1] != 128:
        raise T.ShapeError(f"EDI expects 128-dim embeddings, got {z_e.shape}")
    return T.softmax(head(z_e))


@dataclass
class InferenceOutput:
    eaci: np.ndarray
    edi: np.ndarray
    combined: np.ndarray
    predicted: np.ndarray


def decide(combined):
    """Argmax with exact ties broken toward index 0."""
    c = np.asarray(combined)
    return np.where(c[..., 0] >= c[..., 1], 0, 1)


def combine(edi_scores, eaci_scores):
    """Elementwise sum of the two decision paths plus the argmax decision."""
    e = edi_scores.data if isinstance(edi_scores, Tensor) else np.asarray(edi_scores)
    a = eaci_scores.data if isinstance(eaci_scores, Tensor) else np.asarray(eaci_scores)
    combined = e + a
    return InferenceOutput(eaci=a, edi=e, combined=combined, predicted=decide(combined))


def cross_entropy(logits, labels):
    """Mean -log softmax(logits)[label] over the batch."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise T.ShapeError(f"labels shape {labels.shape} vs logits {logits.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError(f"labels must be 0/1, got values {np.unique(labels)}")
    b = logits.shape[0]
    row_max = T.tmax(logits, axis=-1, keepdims=True)
    lse = T.log(T.tsum(T.exp(logits - row_max), axis=-1)) + T.reshape(row_max, (b,))
    onehot = np.eye(logits.shape[-1])[labels]
    picked = T.tsum(logits * onehot, axis=-1)
    return T.tmean(lse - picked)


def total_loss(clip, combined_logits, labels):
    """Contrastive term plus CE on combined logits, unit weighting.
    clip may be None (contrastive ablation)."""
    ce = cross_entropy(combined_logits, labels)
    return ce if clip is None else clip + ce
