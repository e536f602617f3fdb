"""Finite-difference gradient suite over every differentiable op and the tiny model.

Each check builds seeded inputs in [-2, 2] (positive for ``ln``), reduces the
op output to a scalar with a fixed random weighting, and compares the
backward() gradient of all inputs (concatenated) with central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import ProbSparseConfig, dense_attention, multi_head_self_attention, probsparse_attention
from .encoders import EncoderBlock, SeriesEncoder, ViTEncoder
from .model import TINY_CONFIG, CrossAttention, GeoFormer, RegressionHead
from .tensor import Tensor
from .training import mse_loss


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    n_coords: int
    seconds: float


def gradient_error(fn: Callable[[], Tensor], inputs: list[Tensor], seed: int = 0) -> tuple[float, int]:
    """Relative error between analytic and numeric gradients of ``sum(w * fn())``."""
    probe = fn()
    weights = np.random.default_rng([seed, 99]).uniform(-1.0, 1.0, probe.shape)

    def objective() -> Tensor:
        out = fn()
        return T.sum(T.mul(out, T._wrap(weights))) if out.ndim else out

    for x in inputs:
        x.grad = None
    objective().backward()
    analytic = np.concatenate([(x.grad if x.grad is not None else np.zeros(x.shape)).ravel() for x in inputs])

    numeric = []
    for x in inputs:
        original = x.data

        def f(t, x=x):
            x.data = t.data
            return objective()

        try:
            numeric.append(T.finite_diff_grad(f, original).ravel())
        finally:
            x.data = original
    return T.relative_error(analytic, np.concatenate(numeric)), analytic.size


def _leaf(rng, *shape, low=-2.0, high=2.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _cases(seed: int):
    """Yield ``(name, fn, inputs)`` triples."""
    rng = np.random.default_rng(seed)
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    yield "matmul", lambda: T.matmul(a, b), [a, b]
    x, y = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
    yield "add", lambda: T.add(x, y), [x, y]
    yield "mul", lambda: T.mul(x, y), [x, y]
    s = _leaf(rng)
    yield "scalar_mul", lambda: T.mul(x, s), [x, s]
    yield "scale", lambda: T.scale(x, -1.7), [x]
    yield "exp", lambda: T.exp(x), [x]
    p = _leaf(rng, 2, 3, low=0.5, high=2.0)
    yield "ln", lambda: T.ln(p), [p]
    yield "square", lambda: T.square(x), [x]
    yield "gelu", lambda: T.gelu(x), [x]
    yield "sum_mean", lambda: T.add(T.sum(x, axis=0), T.mean(x, axis=0)), [x]
    yield "reshape_transpose", lambda: T.transpose(T.reshape(x, (3, 2)), (1, 0)), [x]
    r = _leaf(rng, 1, 3)
    yield "expand", lambda: T.expand(r, (4, 3)), [r]
    z = _leaf(rng, 3, 5)
    yield "softmax_rows", lambda: T.softmax_rows(z), [z]
    g, bb = _leaf(rng, 5), _leaf(rng, 5)
    yield "layernorm", lambda: T.layernorm(z, g, bb), [z, g, bb]
    w, bias = _leaf(rng, 5, 2), _leaf(rng, 2)
    yield "linear", lambda: T.linear(z, w, bias), [z, w, bias]
    base, rows = _leaf(rng, 2, 4, 3), _leaf(rng, 2, 2, 3)
    idx = np.array([[0, 2], [3, 1]])
    yield "gather_scatter", lambda: T.scatter_rows(base, T.gather_rows(rows, np.array([[1, 0], [0, 1]])), idx), [base, rows]

    q, k, v = _leaf(rng, 3, 4), _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    yield "dense_attention", lambda: dense_attention(q, k, v), [q, k, v]
    e = _leaf(rng, 3, 4)
    ws = [_leaf(rng, 4, 4) for _ in range(4)]
    yield "multi_head_self_attention", lambda: multi_head_self_attention(e, *ws, n_heads=2), [e, *ws]
    qs, ks, vs = _leaf(rng, 24, 4), _leaf(rng, 24, 4), _leaf(rng, 24, 3)
    yield "probsparse_attention", lambda: probsparse_attention(qs, ks, vs, ProbSparseConfig()), [qs, ks, vs]

    mrng = np.random.default_rng([seed, 1])
    block = EncoderBlock(8, 2, 32, mrng)
    tokens = _leaf(rng, 4, 8)
    yield "encoder_block", lambda: block(tokens), [tokens, *block.parameters()]
    vit = ViTEncoder(8, 4, 8, 2, 1, 32, mrng)
    image = rng.uniform(-2, 2, (8, 8, 1))
    yield "vit_encode", lambda: vit(image), vit.parameters()
    ser = SeriesEncoder(8, 2, 1, 32, mrng, ProbSparseConfig())
    hist = rng.uniform(-2, 2, 4)
    yield "series_encode", lambda: ser(hist), ser.parameters()
    cam = CrossAttention(8, mrng)
    temporal, spatial = _leaf(rng, 3, 8), _leaf(rng, 4, 8)
    yield "cross_attend", lambda: cam(temporal, spatial), [temporal, spatial, *cam.parameters()]
    head = RegressionHead(8, 8, mrng)
    feat = _leaf(rng, 8)
    yield "regress_head", lambda: head(feat), [feat, *head.parameters()]
    pred = _leaf(rng, 5)
    target = rng.uniform(-2, 2, 5)
    yield "mse_loss", lambda: mse_loss(pred, target), [pred]

    model = GeoFormer(TINY_CONFIG)
    images = rng.uniform(-2, 2, (2, 8, 8, 1))
    histories = rng.uniform(-2, 2, (2, TINY_CONFIG.history))
    yield "geoformer_tiny", lambda: model(images, histories), model.parameters()


def run_suite(seed: int = 42) -> list[CheckResult]:
    results = []
    for name, fn, inputs in _cases(seed):
        start = time.perf_counter()
        err, n = gradient_error(fn, inputs, seed)
        results.append(CheckResult(name, err, n, time.perf_counter() - start))
    return results
