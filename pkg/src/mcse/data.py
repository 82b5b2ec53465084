"""Corpus ingestion, caption sampling, batch planning and the ablation hooks.

File formats (all UTF-8 text):

* sentence corpus   one sentence per line; blank lines skipped
* captions          ``image_id<TAB>caption``, multiple lines per image
* image features    first line is the feature dimension, then one record per
                    line: ``image_id<TAB>v1,v2,...``
* STS pairs         ``sent_a<TAB>sent_b<TAB>gold[<TAB>subset_tag]`` with the
                    gold score in [0, 5]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import DegenerateInputError
from .model import stable_hash64

# Domain tags for seed derivation (keep streams independent per purpose).
_CAPTION_DOMAIN = 0x63617074  # "capt"
_PLAN_DOMAIN = 0x706C616E     # "plan"
_SHUF_DOMAIN = 0x73687566     # "shuf"
_LIMIT_DOMAIN = 0x6C696D74    # "limt"

TEXT_ONLY = "text_only"
MULTIMODAL = "multimodal"


class DataFormatError(ValueError):
    """A corpus file violates its declared format."""


@dataclass(frozen=True)
class SentenceRecord:
    id: str
    text: str


@dataclass(frozen=True)
class CaptionGroup:
    image_id: str
    captions: tuple[str, ...]


@dataclass
class MiniBatch:
    """A homogeneous batch: either text-only sentences or sentence-image
    pairs. ``image_features`` rows are aligned with ``image_ids`` and are
    materialized by the batch builder so the loss never touches the store."""

    kind: str                                  # TEXT_ONLY or MULTIMODAL
    sentences: list[list[int]]                 # token-id lists
    image_ids: list[str] | None = None
    image_features: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (TEXT_ONLY, MULTIMODAL):
            raise ValueError(f"unknown batch kind {self.kind!r}")
        if self.kind == MULTIMODAL:
            if self.image_ids is None or len(self.image_ids) != len(self.sentences):
                raise ValueError("multimodal batch needs one image per sentence")
        elif self.image_ids is not None:
            raise ValueError("text-only batch must not carry image ids")


@dataclass(frozen=True)
class PlannedBatch:
    """One slot in the training plan: a source kind plus dataset indices."""

    kind: str
    indices: np.ndarray


def _rng(seed: int, domain: int, extra: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        key=((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) | domain, counter=extra))


def load_sentence_corpus(path) -> list[SentenceRecord]:
    """One sentence per line; ids are 1-based line numbers. Blank lines are
    skipped; a file with no usable lines is an error."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if text:
                records.append(SentenceRecord(id=str(lineno), text=text))
    if not records:
        raise DataFormatError(f"{path}: no usable sentences")
    return records


def write_sentence_corpus(path, sentences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for text in sentences:
            fh.write(_tab_safe(text) + "\n")


def load_caption_groups(path) -> list[CaptionGroup]:
    """Tab-separated ``image_id<TAB>caption`` lines, grouped by image in
    order of first appearance."""
    order: list[str] = []
    grouped: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1].strip():
                raise DataFormatError(f"{path}:{lineno}: expected 'image_id<TAB>caption'")
            image_id, caption = parts[0], parts[1].strip()
            if image_id not in grouped:
                grouped[image_id] = []
                order.append(image_id)
            grouped[image_id].append(caption)
    if not order:
        raise DataFormatError(f"{path}: no caption records")
    return [CaptionGroup(i, tuple(grouped[i])) for i in order]


def write_caption_groups(path, groups) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for group in groups:
            for caption in group.captions:
                fh.write(f"{group.image_id}\t{_tab_safe(caption)}\n")


def load_image_features(path) -> tuple[dict[str, np.ndarray], int]:
    """Feature file -> (id -> read-only float64 vector, feature dim)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            dim = int(header)
        except ValueError:
            raise DataFormatError(
                f"{path}: header must declare the feature dimension") from None
        if dim < 1:
            raise DataFormatError(f"{path}: feature dimension must be positive")
        feats: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 'image_id<TAB>v1,v2,...'")
            image_id, payload = parts
            vec = np.array([float(tok) for tok in payload.split(",")],
                           dtype=np.float64)
            if vec.shape[0] != dim:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {vec.shape[0]}")
            if not np.all(np.isfinite(vec)):
                raise DataFormatError(f"{path}:{lineno}: non-finite feature value")
            vec.flags.writeable = False   # frozen during training, enforced
            feats[image_id] = vec
    if not feats:
        raise DataFormatError(f"{path}: no feature records")
    return feats, dim


def write_image_features(path, features: dict[str, np.ndarray], dim: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{dim}\n")
        for image_id, vec in features.items():
            payload = ",".join(repr(float(x)) for x in vec)
            fh.write(f"{image_id}\t{payload}\n")


def load_multimodal_dataset(captions_path, features_path,
                            seed: int) -> list[tuple[SentenceRecord, str]]:
    """One (caption, image_id) pair per image: the caption is sampled
    uniformly from the image's group by a generator seeded from
    (seed, image_id), so the selection is deterministic per seed."""
    groups = load_caption_groups(captions_path)
    features, _dim = load_image_features(features_path)
    pairs = []
    for group in groups:
        if group.image_id not in features:
            raise DataFormatError(
                f"image {group.image_id!r} has captions but no feature record")
        if not group.captions:
            raise DataFormatError(f"image {group.image_id!r} has no captions")
        rng = _rng(seed, _CAPTION_DOMAIN, extra=stable_hash64(group.image_id))
        choice = int(rng.integers(len(group.captions)))
        record = SentenceRecord(id=group.image_id, text=group.captions[choice])
        pairs.append((record, group.image_id))
    return pairs


def plan_batches(text_corpus_size: int, multimodal_size: int, batch_size: int,
                 epochs: int, seed: int) -> list[PlannedBatch]:
    """Deterministic training plan over both sources.

    Per epoch, each source is shuffled without replacement and chunked into
    batches (final partial batch kept); the epoch's batch slots are then
    shuffled together, so the chance a slot is multimodal is about
    B/(A+B). The whole plan is a pure function of the seed.
    """
    if text_corpus_size < 0 or multimodal_size < 0:
        raise ValueError("corpus sizes must be non-negative")
    if text_corpus_size + multimodal_size == 0:
        raise DegenerateInputError("both corpora are empty")
    if batch_size < 1 or epochs < 1:
        raise ValueError("batch_size and epochs must be >= 1")

    rng = _rng(seed, _PLAN_DOMAIN)
    plan: list[PlannedBatch] = []
    for _epoch in range(epochs):
        epoch_batches: list[PlannedBatch] = []
        for kind, size in ((TEXT_ONLY, text_corpus_size),
                           (MULTIMODAL, multimodal_size)):
            if size == 0:
                continue
            order = rng.permutation(size)
            for start in range(0, size, batch_size):
                epoch_batches.append(
                    PlannedBatch(kind, order[start:start + batch_size]))
        slot_order = rng.permutation(len(epoch_batches))
        plan.extend(epoch_batches[i] for i in slot_order)
    return plan


def shuffle_image_ablation(pairs, seed: int) -> list[tuple[SentenceRecord, str]]:
    """Destroy the sentence-image correspondence: permute the image ids over
    the whole dataset while leaving the sentences (and their order) intact."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise DegenerateInputError("need at least 2 pairs to shuffle")
    rng = _rng(seed, _SHUF_DOMAIN)
    perm = rng.permutation(len(pairs))
    return [(pairs[i][0], pairs[int(perm[i])][1]) for i in range(len(pairs))]


def limit_training_samples(dataset, n: int, seed: int) -> list:
    """Uniform sample without replacement of size n, order re-shuffled."""
    dataset = list(dataset)
    if not 1 <= n <= len(dataset):
        raise ValueError(f"sample size {n} out of range [1, {len(dataset)}]")
    rng = _rng(seed, _LIMIT_DOMAIN)
    picked = rng.permutation(len(dataset))[:n]
    return [dataset[int(i)] for i in picked]


@dataclass(frozen=True)
class StsPair:
    """Two sentences with a gold similarity score in [0, 5]."""

    sent_a: str
    sent_b: str
    gold: float
    subset_tag: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.gold <= 5.0:
            raise DataFormatError(f"gold score {self.gold} outside [0, 5]")


def load_sts_file(path) -> list[StsPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise DataFormatError(
                    f"{path}:{lineno}: expected 'sent_a<TAB>sent_b<TAB>gold[<TAB>tag]'")
            try:
                gold = float(parts[2])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad gold score") from None
            tag = parts[3] if len(parts) == 4 else None
            try:
                pairs.append(StsPair(parts[0], parts[1], gold, tag))
            except DataFormatError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not pairs:
        raise DataFormatError(f"{path}: no pairs")
    return pairs


def write_sts_file(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            cols = [_tab_safe(p.sent_a), _tab_safe(p.sent_b), repr(float(p.gold))]
            if p.subset_tag is not None:
                cols.append(p.subset_tag)
            fh.write("\t".join(cols) + "\n")


def _tab_safe(text: str) -> str:
    return " ".join(str(text).split("\t")).strip()
