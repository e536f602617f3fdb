"""Spatial (patch ViT) and temporal (ProbSparse) encoder stacks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, DotProductCounter, ProbSparseConfig, multi_head_self_attention
from .errors import ConfigurationError
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor


@dataclass(frozen=True)
class No2Series:
    """Daily concentrations (ug/m3) on strictly increasing integer day indices."""

    values: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        stamps = np.asarray(self.timestamps, dtype=np.int64)
        if values.ndim != 1 or values.size < 1 or stamps.shape != values.shape:
            raise ConfigurationError("series needs matching 1-D values and timestamps, L >= 1")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ConfigurationError("concentrations must be finite and non-negative")
        if np.any(np.diff(stamps) <= 0):
            raise ConfigurationError("timestamps must be strictly increasing")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", stamps)

    def __len__(self):
        return self.values.size


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """Split ``(..., H, W, 1)`` images into ``(..., N, P*P)`` row-major patch tokens."""
    images = np.asarray(images, dtype=np.float64)
    *lead, h, w, c = images.shape
    if c != 1:
        raise ConfigurationError(f"expected a single channel, got {c}")
    if patch < 1 or h % patch or w % patch:
        raise ConfigurationError(f"image {h}x{w} is not divisible into {patch}x{patch} patches")
    gh, gw = h // patch, w // patch
    x = images.reshape(*lead, gh, patch, gw, patch)
    x = np.moveaxis(x, -3, -2)  # (..., gh, gw, P, P)
    return x.reshape(*lead, gh * gw, patch * patch)


def patch_embed(images, patch: int, embed: Linear) -> Tensor:
    tokens = patchify(images.data if isinstance(images, Tensor) else images, patch)
    return embed(T._wrap(tokens))


def sinusoidal_positions(n: int, d_model: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((n, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def add_positions(x: Tensor, enabled: bool = True) -> Tensor:
    if not enabled:
        return x
    pe = sinusoidal_positions(x.shape[-2], x.shape[-1])
    return x + T._wrap(np.broadcast_to(pe, x.shape).copy())


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng, sparse: ProbSparseConfig | None = None):
        self._cfg = AttentionConfig(d_model, n_heads)
        self._sparse = sparse
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor, counter: DotProductCounter | None = None) -> Tensor:
        return multi_head_self_attention(
            x,
            self.q.weight,
            self.k.weight,
            self.v.weight,
            self.o.weight,
            self._cfg.n_heads,
            biases=(self.q.bias, self.k.bias, self.v.bias, self.o.bias),
            sparse=self._sparse,
            counter=counter,
        )

    @staticmethod
    def count(d_model: int) -> int:
        return 4 * Linear.count(d_model, d_model)


class FeedForward(Module):
    def __init__(self, d_model: int, hidden: int, rng):
        self.fc1 = Linear(d_model, hidden, rng)
        self.fc2 = Linear(hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))

    @staticmethod
    def count(d_model: int, hidden: int) -> int:
        return Linear.count(d_model, hidden) + Linear.count(hidden, d_model)


class EncoderBlock(Module):
    """Pre-layernorm block: ``x + MHSA(LN(x))`` then ``x + FFN(LN(x))``."""

    def __init__(self, d_model: int, n_heads: int, hidden: int, rng, sparse: ProbSparseConfig | None = None):
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng, sparse)
        self.ln2 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))

    @staticmethod
    def count(d_model: int, hidden: int) -> int:
        return 2 * LayerNorm.count(d_model) + MultiHeadAttention.count(d_model) + FeedForward.count(d_model, hidden)


class ViTEncoder(Module):
    """Patch embedding + sinusoidal positions + dense pre-LN blocks + final norm; returns all tokens."""

    def __init__(self, image_size: int, patch: int, d_model: int, n_heads: int, n_blocks: int, hidden: int, rng):
        if image_size % patch:
            raise ConfigurationError(f"image size {image_size} not divisible by patch {patch}")
        self._patch = patch
        self.use_positions = True
        self.embed = Linear(patch * patch, d_model, rng)
        self.blocks = [EncoderBlock(d_model, n_heads, hidden, rng) for _ in range(n_blocks)]
        self.norm = LayerNorm(d_model)

    def __call__(self, images) -> Tensor:
        x = add_positions(patch_embed(images, self._patch, self.embed), self.use_positions)
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    @staticmethod
    def count(patch: int, d_model: int, n_blocks: int, hidden: int) -> int:
        return (Linear.count(patch * patch, d_model) + n_blocks * EncoderBlock.count(d_model, hidden)
                + LayerNorm.count(d_model))


class SeriesEncoder(Module):
    """Scalar value embedding + positions + ProbSparse pre-LN blocks + final norm."""

    def __init__(self, d_model: int, n_heads: int, n_blocks: int, hidden: int, rng, sparse: ProbSparseConfig):
        self.embed = Linear(1, d_model, rng)
        self.blocks = [EncoderBlock(d_model, n_heads, hidden, rng, sparse) for _ in range(n_blocks)]
        self.norm = LayerNorm(d_model)

    def __call__(self, series) -> Tensor:
        """``series`` is ``(..., L)`` normalized values."""
        values = series.data if isinstance(series, Tensor) else np.asarray(series, dtype=np.float64)
        x = add_positions(self.embed(T._wrap(values[..., None])))
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    @staticmethod
    def count(d_model: int, n_blocks: int, hidden: int) -> int:
        return Linear.count(1, d_model) + n_blocks * EncoderBlock.count(d_model, hidden) + LayerNorm.count(d_model)


def vit_encode(images, encoder: ViTEncoder) -> Tensor:
    return encoder(images)


def series_encode(series, encoder: SeriesEncoder) -> Tensor:
    if isinstance(series, No2Series):
        series = series.values
    return encoder(series)
