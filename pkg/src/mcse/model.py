"""Toy trainable encoder and its parameters.

The encoder is an embedding table with mean pooling: cheap enough to verify
against finite differences, but still a differentiable text encoder with
dropout-noise views. Three single-layer tanh projection heads sit on top:

* ``textual``       d -> d, used by the dropout-noise contrastive objective
* ``shared_text``   d -> shared_dim, output L2-normalized
* ``shared_image``  image_dim -> shared_dim, output L2-normalized

The two ``shared_*`` heads map sentences and image features into the common
grounded space. Image features themselves are frozen inputs, never trained.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .linalg import (DegenerateInputError, DimensionMismatchError,
                     as_vector, l2_normalize)

HEAD_TEXTUAL = "textual"
HEAD_SHARED_TEXT = "shared_text"
HEAD_SHARED_IMAGE = "shared_image"

# Domain tags mixed into Philox keys so independent random streams never
# collide across uses of the same run seed.
_INIT_DOMAIN = 0x696E6974  # "init"
_MASK_DOMAIN = 0x6D61736B  # "mask"

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

PARAM_NAMES = ("embed", "w_text", "b_text", "w_shared_text", "b_shared_text",
               "w_shared_image", "b_shared_image")


@dataclass(frozen=True)
class Dims:
    """Model dimensions. Defaults are desk-scale stand-ins for the usual
    768 / 256 / 2048 encoder sizes."""

    embed_dim: int = 32
    shared_dim: int = 16
    image_dim: int = 48
    vocab_size: int = 4096

    def __post_init__(self):
        for name in ("embed_dim", "shared_dim", "image_dim", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def tokenize(text: str, vocab_size: int) -> list[int]:
    """Lowercase, split on whitespace/punctuation, hash each token into
    ``vocab_size`` buckets. Deterministic across processes (no salted hash)."""
    if vocab_size < 1:
        raise ValueError("vocab_size must be positive")
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        raise DegenerateInputError("cannot tokenize empty or whitespace-only text")
    return [_stable_bucket(tok, vocab_size) for tok in tokens]


def _stable_bucket(token: str, vocab_size: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab_size


def stable_hash64(text: str) -> int:
    """Platform-stable 64-bit hash of a string (for seed derivation)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class DropoutMask:
    """One dropout view: kept coordinates are scaled by 1/keep_prob so the
    masked vector is unbiased (inverted dropout)."""

    keep_flags: np.ndarray  # (dim,) bool
    keep_prob: float

    def __post_init__(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must be in (0, 1]")
        flags = np.asarray(self.keep_flags, dtype=bool)
        object.__setattr__(self, "keep_flags", flags)

    @property
    def scale(self) -> np.ndarray:
        return self.keep_flags.astype(np.float64) / self.keep_prob

    @classmethod
    def full_keep(cls, dim: int) -> "DropoutMask":
        return cls(np.ones(dim, dtype=bool), 1.0)

    @classmethod
    def derive(cls, seed: int, instance_id: int, pass_id: int, dim: int,
               keep_prob: float, batch_size: int) -> "DropoutMask":
        """Recover the mask used for one encoding pass during training.

        Training draws masks in per-step blocks (see :func:`mask_block_scales`);
        an instance is identified by (step, row) with instance_id =
        step * batch_size + row and pass_id in {0, 1} for the two views.
        """
        step, row = divmod(instance_id, batch_size)
        flags = _mask_block_flags(seed, step, batch_size, dim, keep_prob)
        return cls(flags[pass_id, row], keep_prob)


def _philox(seed: int, domain: int, counter: int = 0) -> np.random.Generator:
    key = ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) | (domain & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _mask_block_flags(seed: int, step: int, n: int, dim: int,
                      keep_prob: float) -> np.ndarray:
    rng = _philox(seed, _MASK_DOMAIN, counter=step)
    return rng.random((2, n, dim)) < keep_prob


def mask_block_scales(seed: int, step: int, n: int, dim: int,
                      keep_prob: float) -> np.ndarray:
    """Inverted-dropout scale factors for both views of one batch: (2, n, dim)
    float64 with entries 0 or 1/keep_prob. Pure function of its arguments."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must be in (0, 1]")
    flags = _mask_block_flags(seed, step, n, dim, keep_prob)
    return flags.astype(np.float64) / keep_prob


@dataclass
class ModelParams:
    """All trainable arrays plus a same-shaped gradient slot per array.

    ``embed`` is (vocab_size, embed_dim); each head is a (weight, bias) pair.
    Gradient slots are accumulated into by the batch loss and must be zeroed
    between optimizer steps.
    """

    dims: Dims
    embed: np.ndarray
    w_text: np.ndarray
    b_text: np.ndarray
    w_shared_text: np.ndarray
    b_shared_text: np.ndarray
    w_shared_image: np.ndarray
    b_shared_image: np.ndarray
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        d, ds, dv, v = (self.dims.embed_dim, self.dims.shared_dim,
                        self.dims.image_dim, self.dims.vocab_size)
        expected = {
            "embed": (v, d),
            "w_text": (d, d), "b_text": (d,),
            "w_shared_text": (ds, d), "b_shared_text": (ds,),
            "w_shared_image": (ds, dv), "b_shared_image": (ds,),
        }
        for name, shape in expected.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise DimensionMismatchError(
                    f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DegenerateInputError(f"{name} contains non-finite entries")
            setattr(self, name, arr)
        if not self.grads:
            self.grads = {name: np.zeros_like(getattr(self, name))
                          for name in PARAM_NAMES}

    @classmethod
    def init(cls, dims: Dims, seed: int) -> "ModelParams":
        """Uniform [-0.1, 0.1] initialization, a pure function of the seed."""
        rng = _philox(seed, _INIT_DOMAIN)
        d, ds, dv, v = (dims.embed_dim, dims.shared_dim, dims.image_dim,
                        dims.vocab_size)
        shapes = [(v, d), (d, d), (d,), (ds, d), (ds,), (ds, dv), (ds,)]
        arrays = [rng.uniform(-0.1, 0.1, size=s) for s in shapes]
        return cls(dims, *arrays)

    def named_values(self):
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ModelParams":
        arrays = [getattr(self, name).copy() for name in PARAM_NAMES]
        out = ModelParams(self.dims, *arrays)
        for name in PARAM_NAMES:
            out.grads[name][:] = self.grads[name]
        return out

    def allclose(self, other: "ModelParams", rtol=0.0, atol=0.0) -> bool:
        return all(np.allclose(v, getattr(other, n), rtol=rtol, atol=atol)
                   for n, v in self.named_values())


@dataclass(frozen=True)
class ImageFeature:
    """Precomputed image feature vector; fixed during training."""

    image_id: str
    vector: np.ndarray


def _validate_token_ids(token_ids, vocab_size: int) -> np.ndarray:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise DegenerateInputError("token id list must be non-empty and 1-d")
    if np.any(ids < 0) or np.any(ids >= vocab_size):
        raise IndexError("token id out of vocabulary range")
    return ids


def encode_sentence(token_ids, params: ModelParams,
                    mask: DropoutMask) -> np.ndarray:
    """Mean-pool the embedding rows of the tokens, then apply one dropout view.

    Same (token_ids, params, mask) always yields a bitwise-identical vector.
    """
    ids = _validate_token_ids(token_ids, params.dims.vocab_size)
    if mask.keep_flags.shape[0] != params.dims.embed_dim:
        raise DimensionMismatchError("dropout mask dim != embed_dim")
    pooled = params.embed[ids].mean(axis=0)
    return pooled * mask.scale


def project(params: ModelParams, head: str, x) -> np.ndarray:
    """Apply one projection head: tanh(Wx + b), L2-normalized for the two
    shared-space heads."""
    if head == HEAD_TEXTUAL:
        w, b = params.w_text, params.b_text
    elif head == HEAD_SHARED_TEXT:
        w, b = params.w_shared_text, params.b_shared_text
    elif head == HEAD_SHARED_IMAGE:
        w, b = params.w_shared_image, params.b_shared_image
    else:
        raise ValueError(f"unknown head {head!r}")
    v = as_vector(x, dim=w.shape[1])
    y = np.tanh(w @ v + b)
    if head == HEAD_TEXTUAL:
        return y
    return l2_normalize(y)


def embed_for_eval(token_ids, params: ModelParams) -> np.ndarray:
    """Evaluation embedding: dropout disabled and no projection head, i.e. a
    pure function of (token_ids, embed table)."""
    ids = _validate_token_ids(token_ids, params.dims.vocab_size)
    return params.embed[ids].mean(axis=0)
