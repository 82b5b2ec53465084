"""Desk-scale laboratory for contrastive sentence-embedding learning with
multimodal grounding: verified objectives, a compiled training kernel with a
pure-Python fallback, synthetic grounded corpora and an experiment runner."""

__version__ = "0.1.0"

from .backend import available_backends, backend_name, get_backend
from .data import MiniBatch, SentenceRecord, StsPair
from .model import Dims, DropoutMask, ModelParams, embed_for_eval, tokenize
from .objectives import (BatchLossResult, LossConfig, batch_loss_and_grads,
                         combined_loss, multimodal_batch_loss,
                         simcse_batch_loss)

__all__ = [
    "available_backends", "backend_name", "get_backend",
    "MiniBatch", "SentenceRecord", "StsPair",
    "Dims", "DropoutMask", "ModelParams", "embed_for_eval", "tokenize",
    "BatchLossResult", "LossConfig", "batch_loss_and_grads",
    "combined_loss", "multimodal_batch_loss", "simcse_batch_loss",
    "__version__",
]
