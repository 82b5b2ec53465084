"""The contrastive losses over a mini-batch, with exact analytic gradients.

Three public loss functions mirror the training objective:

* :func:`simcse_batch_loss` - dropout-noise contrastive loss on the textual
  head outputs (in-batch negatives, cosine/temperature logits).
* :func:`multimodal_batch_loss` - sentence-image contrastive loss in the
  grounded space; each instance contributes one NLL term per dropout view
  (two total), with the paired image as target and all other in-batch images
  as negatives.
* :func:`combined_loss` - mean over the batch of l_text + mm_weight * l_mm.

:func:`batch_loss_and_grads` runs the full pipeline (pooling, dropout views,
heads, losses, hand-derived backward) through the active kernel backend and
accumulates gradients into ``params.grads``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend as _backend
from .data import MiniBatch
from .linalg import (DegenerateInputError, DimensionMismatchError, as_matrix,
                     l2_normalize_rows, log_sum_exp, softmax_nll)
from .model import ModelParams, mask_block_scales

_UNIT_ROW_TOL = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Temperatures and the multimodal trade-off weight."""

    tau: float = 0.05
    tau_mm: float = 0.05
    mm_weight: float = 0.01

    def __post_init__(self):
        if self.tau <= 0 or self.tau_mm <= 0:
            raise ValueError("temperatures must be positive")
        if self.mm_weight < 0:
            raise ValueError("mm_weight must be non-negative")


@dataclass(frozen=True)
class BatchLossResult:
    """Per-instance losses and their combined batch mean."""

    textual: np.ndarray               # (N,)
    multimodal: np.ndarray | None     # (N,) or None for text-only batches
    mean_total: float


def simcse_batch_loss(view_a, view_b, tau: float) -> np.ndarray:
    """Per-instance dropout-noise contrastive loss.

    Row i of the logit matrix holds cos(view_a[i], view_b[j])/tau; the loss
    is the softmax NLL with target j = i.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    a = as_matrix(view_a)
    b = as_matrix(view_b, rows=a.shape[0], cols=a.shape[1])
    an = l2_normalize_rows(a)
    bn = l2_normalize_rows(b)
    logits = (an @ bn.T) / tau
    return np.array([softmax_nll(logits[i], i) for i in range(a.shape[0])])


def multimodal_batch_loss(text_a, text_b, image_emb, tau_mm: float) -> np.ndarray:
    """Per-instance grounded-space contrastive loss, summed over both views.

    All three inputs must be row-wise unit-norm (the shared-space contract);
    cosine similarity then reduces to a dot product.
    """
    if tau_mm <= 0:
        raise ValueError("tau_mm must be positive")
    sa = as_matrix(text_a)
    n, ds = sa.shape
    sb = as_matrix(text_b, rows=n, cols=ds)
    v = as_matrix(image_emb, rows=n, cols=ds)
    for name, m in (("text_a", sa), ("text_b", sb), ("image_emb", v)):
        norms = np.linalg.norm(m, axis=1)
        if np.any(np.abs(norms - 1.0) > _UNIT_ROW_TOL):
            raise DegenerateInputError(
                f"{name} rows must be unit-norm (tolerance {_UNIT_ROW_TOL})")
    logits_a = (sa @ v.T) / tau_mm
    logits_b = (sb @ v.T) / tau_mm
    return np.array([softmax_nll(logits_a[i], i) + softmax_nll(logits_b[i], i)
                     for i in range(n)])


def combined_loss(textual, multimodal, mm_weight: float) -> float:
    """Mean over the batch of l_text_i + mm_weight * l_mm_i; an empty
    multimodal list (text-only batch) is treated as zeros."""
    if mm_weight < 0:
        raise ValueError("mm_weight must be non-negative")
    lt = np.asarray(textual, dtype=np.float64)
    if lt.ndim != 1 or lt.size == 0:
        raise DegenerateInputError("textual losses must be a non-empty 1-d list")
    lm = np.asarray(multimodal, dtype=np.float64)
    if lm.size == 0:
        return float(lt.mean())
    if lm.shape != lt.shape:
        raise DimensionMismatchError(
            f"loss list length mismatch: {lt.shape[0]} vs {lm.shape[0]}")
    return float((lt + mm_weight * lm).mean())


def _pack_tokens(sentences: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    n = len(sentences)
    lengths = np.array([len(s) for s in sentences], dtype=np.int32)
    if np.any(lengths == 0):
        raise DegenerateInputError("batch contains an empty token list")
    tokens = np.zeros((n, int(lengths.max())), dtype=np.int32)
    for i, sent in enumerate(sentences):
        tokens[i, :len(sent)] = sent
    return tokens, lengths


def batch_loss_and_grads(batch: MiniBatch, params: ModelParams, cfg: LossConfig,
                         *, seed: int, step: int, keep_prob: float,
                         backend=None, want_grads: bool = True) -> BatchLossResult:
    """Forward + backward for one homogeneous batch.

    Dropout masks for the two views are a pure function of (seed, step), so
    repeated calls with the same arguments are bitwise identical. Gradients
    of the mean combined loss are accumulated into ``params.grads`` for every
    parameter reachable from the loss; with ``mm_weight == 0`` or a text-only
    batch the multimodal branch is skipped entirely and both shared heads
    keep exactly-zero gradients.
    """
    if len(batch.sentences) == 0:
        raise DegenerateInputError("empty batch")
    kernel = backend if backend is not None else _backend.get_backend()
    tokens, lengths = _pack_tokens(batch.sentences)
    n = tokens.shape[0]
    d = params.dims.embed_dim

    scales = mask_block_scales(seed, step, n, d, keep_prob)
    images = None
    if batch.kind == "multimodal" and cfg.mm_weight > 0:
        if batch.image_features is None:
            raise ValueError("multimodal batch is missing image features")
        images = as_matrix(batch.image_features, rows=n,
                           cols=params.dims.image_dim)

    grad_args = {}
    if want_grads:
        grad_args = {f"g_{name}": params.grads[name]
                     for name in params.grads}

    loss_text, loss_mm = kernel.batch_forward_backward(
        tokens, lengths, scales[0], scales[1],
        params.embed, params.w_text, params.b_text,
        params.w_shared_text, params.b_shared_text,
        params.w_shared_image, params.b_shared_image,
        images, cfg.tau, cfg.tau_mm, cfg.mm_weight, want_grads,
        **grad_args)

    loss_text = np.asarray(loss_text)
    loss_mm = None if loss_mm is None else np.asarray(loss_mm)
    mean_total = combined_loss(
        loss_text, loss_mm if loss_mm is not None else [], cfg.mm_weight)
    return BatchLossResult(loss_text, loss_mm, mean_total)
