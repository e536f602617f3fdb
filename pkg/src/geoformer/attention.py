"""Dense, multi-head and ProbSparse attention kernels.

Kernels accept tensors with arbitrary identical leading (batch, head) axes;
the last two axes are ``(tokens, features)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

PAPER_EQ3 = "paper-eq3"
INFORMER_MAX_MEAN = "informer-max-mean"
VARIANTS = (PAPER_EQ3, INFORMER_MAX_MEAN)

# log(np.finfo(np.float64).max)
_LOG_FLOAT_MAX = 709.782712893384


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int

    def __post_init__(self):
        if self.n_heads < 1 or self.d_model < 1 or self.d_model % self.n_heads:
            raise ConfigurationError(
                f"d_model={self.d_model} must be a positive multiple of n_heads={self.n_heads}"
            )

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class ProbSparseConfig:
    """Sparsity settings.

    ``sampling_factor`` is the ``c`` in ``u = min(L_Q, ceil(c ln L_Q))``. The
    measurement is evaluated against ``min(L_K, ceil(key_sample_factor * c * ln L_K))``
    keys drawn without replacement from a generator seeded by ``(seed, L_K)``.
    """

    sampling_factor: float = 5.0
    measurement_variant: str = PAPER_EQ3
    key_sample_factor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sampling_factor <= 0 or self.key_sample_factor <= 0:
            raise ConfigurationError("sampling factors must be positive")
        if self.measurement_variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown measurement variant {self.measurement_variant!r}; expected {VARIANTS}"
            )

    def n_top(self, n_queries: int) -> int:
        return n_top_queries(n_queries, self.sampling_factor)

    def n_sampled_keys(self, n_keys: int) -> int:
        if n_keys < 1:
            raise ConfigurationError("need at least one key")
        if n_keys == 1:
            return 1
        want = math.ceil(self.key_sample_factor * self.sampling_factor * math.log(n_keys))
        return max(1, min(n_keys, want))

    def sampled_keys(self, n_keys: int) -> np.ndarray:
        k = self.n_sampled_keys(n_keys)
        if k == n_keys:
            return np.arange(n_keys)
        rng = np.random.default_rng([self.seed, n_keys])
        return np.sort(rng.choice(n_keys, size=k, replace=False))


class DotProductCounter:
    """Tally of query-key dot products executed by the kernels it is passed to."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


class Measurement(NamedTuple):
    values: np.ndarray
    saturated: np.ndarray


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.ndim < 2 or q.ndim != k.ndim or k.ndim != v.ndim:
        raise DimensionError(f"attention: ranks differ, Q{q.shape} K{k.shape} V{v.shape}")
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]:
        raise DimensionError(f"attention: batch axes differ, Q{q.shape} K{k.shape} V{v.shape}")
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: query width {q.shape} vs key width {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: {k.shape[-2]} keys but {v.shape[-2]} values")


def _pairs(shape: tuple[int, ...], n_q: int, n_k: int) -> int:
    return int(np.prod(shape[:-2], dtype=np.int64)) * n_q * n_k


def dense_attention(q: Tensor, k: Tensor, v: Tensor, counter: DotProductCounter | None = None) -> Tensor:
    """``softmax(Q K^T / sqrt(d_k)) V``."""
    _check_qkv(q, k, v)
    if counter is not None:
        counter.add(_pairs(q.shape, q.shape[-2], k.shape[-2]))
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    return T.matmul(T.softmax_rows(scores), v)


def sparsity_measurement(scores: np.ndarray, variant: str = PAPER_EQ3) -> Measurement:
    """Per-query diversity score over the last axis of already-scaled ``scores``.

    ``paper-eq3``: ``ln sum_j e^x - mean_j e^x``. ``informer-max-mean``:
    ``max_j x - mean_j x``. When the exponential mean of a row overflows float64
    the row's value saturates to ``-finfo.max`` and ``saturated`` is set.
    """
    x = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DimensionError("sparsity_measurement: scores must be finite")
    shift = np.max(x, axis=-1)
    if variant == INFORMER_MAX_MEAN:
        return Measurement(shift - np.mean(x, axis=-1), np.zeros(shift.shape, dtype=bool))
    if variant != PAPER_EQ3:
        raise ConfigurationError(f"unknown measurement variant {variant!r}")
    e = np.exp(x - shift[..., None])
    lse = shift + np.log(np.sum(e, axis=-1))
    log_mean = shift + np.log(np.mean(e, axis=-1))
    saturated = log_mean > _LOG_FLOAT_MAX
    safe = np.where(saturated, 0.0, log_mean)
    values = np.where(saturated, -np.finfo(np.float64).max, lse - np.exp(safe))
    return Measurement(values, saturated)


def n_top_queries(n_queries: int, factor: float = 5.0) -> int:
    if n_queries < 1:
        raise ConfigurationError("need at least one query")
    if n_queries == 1:
        return 1
    return min(n_queries, math.ceil(factor * math.log(n_queries)))


def top_u_queries(measurement, factor: float = 5.0) -> np.ndarray:
    """Indices (ascending) of the ``u`` largest measurements along the last axis.

    Ties are resolved in favour of the lower index.
    """
    m = np.asarray(measurement, dtype=np.float64)
    u = n_top_queries(m.shape[-1], factor)
    order = np.argsort(-m, axis=-1, kind="stable")[..., :u]
    return np.sort(order, axis=-1)


def probsparse_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    cfg: ProbSparseConfig = ProbSparseConfig(),
    counter: DotProductCounter | None = None,
) -> Tensor:
    """Full attention for the top-u queries, mean of V for the remaining rows.

    Selection is computed on detached values, so no gradient flows through it.
    """
    _check_qkv(q, k, v)
    n_q, n_k, d = q.shape[-2], k.shape[-2], q.shape[-1]
    keys = cfg.sampled_keys(n_k)
    if counter is not None:
        counter.add(_pairs(q.shape, n_q, keys.size))
    sample = np.swapaxes(k.data[..., keys, :], -1, -2)
    scores = (q.data @ sample) / math.sqrt(d)
    measure = sparsity_measurement(scores, cfg.measurement_variant).values
    top = top_u_queries(measure, cfg.sampling_factor)

    active = dense_attention(T.gather_rows(q, top), k, v, counter)
    lazy = T.expand(T.mean(v, axis=-2, keepdims=True), q.shape[:-1] + v.shape[-1:])
    return T.scatter_rows(lazy, active, top)


def count_dot_products(n_queries: int, n_keys: int, cfg: ProbSparseConfig | None = None) -> int:
    """Query-key products executed by :func:`probsparse_attention` (dense when ``cfg`` is None)."""
    if n_queries < 1 or n_keys < 1:
        raise ConfigurationError("lengths must be positive")
    if cfg is None:
        return n_queries * n_keys
    return n_queries * cfg.n_sampled_keys(n_keys) + cfg.n_top(n_queries) * n_keys


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """``(..., N, d_model) -> (..., H, N, d_k)``."""
    *lead, n, d = x.shape
    x = T.reshape(x, (*lead, n, n_heads, d // n_heads))
    return T.swapaxes(x, -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    """``(..., H, N, d_k) -> (..., N, H * d_k)``."""
    x = T.swapaxes(x, -2, -3)
    *lead, n, h, dk = x.shape
    return T.reshape(x, (*lead, n, h * dk))


def multi_head_self_attention(
    e: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    w_o: Tensor,
    n_heads: int,
    biases: tuple[Tensor | None, Tensor | None, Tensor | None, Tensor | None] = (None,) * 4,
    sparse: ProbSparseConfig | None = None,
    counter: DotProductCounter | None = None,
) -> Tensor:
    """Project ``E`` per head, attend (dense or ProbSparse), concatenate, project.

    Each ``w_*`` is ``d_model x d_model``; columns ``h*d_k:(h+1)*d_k`` belong
    to head ``h``.
    """
    cfg = AttentionConfig(e.shape[-1], n_heads)
    b_q, b_k, b_v, b_o = biases
    q = split_heads(T.linear(e, w_q, b_q), cfg.n_heads)
    k = split_heads(T.linear(e, w_k, b_k), cfg.n_heads)
    v = split_heads(T.linear(e, w_v, b_v), cfg.n_heads)
    if sparse is None:
        heads = dense_attention(q, k, v, counter)
    else:
        heads = probsparse_attention(q, k, v, sparse, counter)
    return T.linear(merge_heads(heads), w_o, b_o)
