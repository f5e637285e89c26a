"""EEG-audio auditory attention decoding with learnable sinc filterbanks,
contrastive alignment, and dual inference paths."""

from . import align, analysis, data, dsp, encoder, nn, sincnet, tensor, train
from .tensor import DomainError, ShapeError, Tensor, no_grad, precision

__version__ = "1.0.0"

__all__ = [
    "align", "analysis", "data", "dsp", "encoder", "nn", "sincnet",
    "tensor", "train", "Tensor", "ShapeError", "DomainError",
    "no_grad", "precision", "__version__",
]
