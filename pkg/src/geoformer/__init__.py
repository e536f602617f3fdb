"""Spatio-temporal transformer for surface NO2 regression, built on a small numpy autograd core."""

from .attention import (
    AttentionConfig,
    DotProductCounter,
    ProbSparseConfig,
    count_dot_products,
    dense_attention,
    multi_head_self_attention,
    probsparse_attention,
    sparsity_measurement,
    top_u_queries,
)
from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    DomainError,
    GeoFormerError,
    NonFiniteLossError,
)
from .model import GeoFormer, GeoFormerConfig, NormStats, load_checkpoint, save_checkpoint
from .tensor import Tensor, backward, finite_diff_grad

__version__ = "0.1.0"
