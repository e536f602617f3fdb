"""
How many dot products does ProbSparse attention save?
=====================================================

Dense attention scores every query against every key. The sparse variant
scores each query against a small key sample, keeps the u most "peaked"
queries and only runs full attention for those.
"""

from geoformer.attention import ProbSparseConfig, count_dot_products
from geoformer.bench import format_csv, run_bench

cfg = ProbSparseConfig()
for n in (32, 256, 4096):
    print(f"L={n:5d}  u={cfg.n_top(n):3d}  sampled keys={cfg.n_sampled_keys(n):3d}  "
          f"dense={count_dot_products(n, n):9d}  sparse={count_dot_products(n, n, cfg):7d}")

# the benchmark instruments both kernels and fits log-log slopes
print()
print(format_csv(run_bench((256, 512, 1024, 2048))), end="")
