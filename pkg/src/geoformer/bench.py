"""Dense vs ProbSparse attention cost over a sweep of sequence lengths."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import (
    PAPER_EQ3,
    DotProductCounter,
    ProbSparseConfig,
    count_dot_products,
    dense_attention,
    probsparse_attention,
)
from .errors import ContractError
from .tensor import _wrap

DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096)


@dataclass(frozen=True)
class BenchRow:
    length: int
    dense_dots: int
    sparse_dots: int
    dense_ms: float
    sparse_ms: float


def _timed(fn):
    start = time.perf_counter()
    fn()
    return (time.perf_counter() - start) * 1e3


def run_bench(lengths=DEFAULT_LENGTHS, variant: str = PAPER_EQ3, seed: int = 42, d_k: int = 32) -> list[BenchRow]:
    """Run both kernels once per length; dot counts come from instrumentation."""
    cfg = ProbSparseConfig(measurement_variant=variant, seed=seed)
    rows = []
    for n in lengths:
        rng = np.random.default_rng([seed, n])
        q, k, v = (_wrap(rng.normal(size=(n, d_k))) for _ in range(3))
        dense, sparse = DotProductCounter(), DotProductCounter()
        dense_ms = _timed(lambda: dense_attention(q, k, v, dense))
        sparse_ms = _timed(lambda: probsparse_attention(q, k, v, cfg, sparse))
        if dense.count != count_dot_products(n, n) or sparse.count != count_dot_products(n, n, cfg):
            raise ContractError(f"instrumented dot counts disagree with the analytic counter at L={n}")
        rows.append(BenchRow(n, dense.count, sparse.count, dense_ms, sparse_ms))
    return rows


def loglog_slope(lengths, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(lengths)``."""
    return float(np.polyfit(np.log(np.asarray(lengths, float)), np.log(np.asarray(values, float)), 1)[0])


def format_csv(rows: list[BenchRow]) -> str:
    lines = ["length,dense_dots,sparse_dots,dense_ms,sparse_ms"]
    lines += [f"{r.length},{r.dense_dots},{r.sparse_dots},{r.dense_ms:.3f},{r.sparse_ms:.3f}" for r in rows]
    if len(rows) >= 2:
        ls = [r.length for r in rows]
        slopes = [loglog_slope(ls, [getattr(r, c) for r in rows]) for c in ("dense_dots", "sparse_dots", "dense_ms", "sparse_ms")]
        lines.append("slope," + ",".join(f"{s:.4f}" for s in slopes))
    return "\n".join(lines) + "\n"
