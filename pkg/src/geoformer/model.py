"""Cross-attention fusion, regression head, the assembled model and checkpoints."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import serialization
from . import tensor as T
from .attention import ProbSparseConfig, dense_attention
from .encoders import SeriesEncoder, ViTEncoder
from .errors import ConfigurationError, ContractError
from .nn import Linear, Module
from .tensor import Tensor

CHECKPOINT_FORMAT = "geoformer-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GeoFormerConfig:
    image_size: int = 64
    patch_size: int = 8
    d_model: int = 64
    n_heads: int = 4
    spatial_blocks: int = 2
    temporal_blocks: int = 2
    history: int = 32
    ff_mult: int = 4
    head_hidden: int = 64
    cam_layers: int = 1
    cam_heads: int = 1
    sampling_factor: float = 5.0
    measurement_variant: str = "paper-eq3"
    key_sample_factor: float = 1.0
    init_seed: int = 42

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigurationError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.d_model % self.n_heads:
            raise ConfigurationError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.cam_layers != 1 or self.cam_heads != 1:
            raise ConfigurationError("only a single one-head cross-attention layer is implemented")
        if min(self.spatial_blocks, self.temporal_blocks) < 0 or self.history < 1:
            raise ConfigurationError("block counts must be >= 0 and history >= 1")
        self.sparse()  # validates variant and factors

    @classmethod
    def from_dict(cls, d: dict) -> GeoFormerConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model settings: {sorted(unknown)}")
        return cls(**d)

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def ff_hidden(self) -> int:
        return self.ff_mult * self.d_model

    def sparse(self) -> ProbSparseConfig:
        return ProbSparseConfig(self.sampling_factor, self.measurement_variant, self.key_sample_factor)

    def param_count(self) -> int:
        """Closed-form parameter count, independent of any instantiated tensors."""
        d, hid = self.d_model, self.ff_hidden
        return (
            ViTEncoder.count(self.patch_size, d, self.spatial_blocks, hid)
            + SeriesEncoder.count(d, self.temporal_blocks, hid)
            + CrossAttention.count(d)
            + RegressionHead.count(d, self.head_hidden)
        )


TINY_CONFIG = GeoFormerConfig(
    image_size=8, patch_size=4, d_model=8, n_heads=2, spatial_blocks=1, temporal_blocks=1,
    history=4, head_hidden=8,
)


@dataclass(frozen=True)
class NormStats:
    pixel_mean: float = 0.0
    pixel_std: float = 1.0
    conc_mean: float = 0.0
    conc_std: float = 1.0

    def images(self, raw):
        return (np.asarray(raw, dtype=np.float64) - self.pixel_mean) / self.pixel_std

    def conc(self, raw):
        return (np.asarray(raw, dtype=np.float64) - self.conc_mean) / self.conc_std

    def denorm_conc(self, normalized):
        return np.asarray(normalized, dtype=np.float64) * self.conc_std + self.conc_mean


@dataclass(frozen=True)
class Prediction:
    value: float
    timestamp: int


class CrossAttention(Module):
    """Temporal tokens query spatial tokens; the attended sequence is mean-pooled."""

    def __init__(self, d_model: int, rng):
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng)

    def __call__(self, temporal: Tensor, spatial: Tensor) -> Tensor:
        return cross_attend(temporal, spatial, self)

    @staticmethod
    def count(d_model: int) -> int:
        return 4 * Linear.count(d_model, d_model)


def cross_attend(temporal: Tensor, spatial: Tensor, cam: CrossAttention) -> Tensor:
    """``(..., L, d), (..., N, d) -> (..., d)``."""
    if temporal.shape[-1] != spatial.shape[-1] or temporal.shape[:-2] != spatial.shape[:-2]:
        raise ConfigurationError(
            f"cross_attend: temporal {temporal.shape} and spatial {spatial.shape} disagree"
        )
    fused = dense_attention(cam.q(temporal), cam.k(spatial), cam.v(spatial))
    return T.mean(cam.o(fused), axis=-2)


class RegressionHead(Module):
    def __init__(self, d_model: int, hidden: int, rng):
        self.fc1 = Linear(d_model, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def __call__(self, feature: Tensor) -> Tensor:
        return regress_head(feature, self)

    @staticmethod
    def count(d_model: int, hidden: int) -> int:
        return Linear.count(d_model, hidden) + Linear.count(hidden, 1)


def regress_head(feature: Tensor, head: RegressionHead) -> Tensor:
    """``(..., d) -> (...)``: affine, GELU, affine to one unit."""
    out = head.fc2(T.gelu(head.fc1(feature)))
    return T.reshape(out, out.shape[:-1])


class GeoFormer(Module):
    def __init__(self, config: GeoFormerConfig = GeoFormerConfig(), stats: NormStats = NormStats()):
        rng = np.random.default_rng(config.init_seed)
        c = config
        self._config = config
        self._stats = stats
        self.vit = ViTEncoder(c.image_size, c.patch_size, c.d_model, c.n_heads, c.spatial_blocks, c.ff_hidden, rng)
        self.series = SeriesEncoder(c.d_model, c.n_heads, c.temporal_blocks, c.ff_hidden, rng, c.sparse())
        self.cam = CrossAttention(c.d_model, rng)
        self.head = RegressionHead(c.d_model, c.head_hidden, rng)

    @property
    def config(self) -> GeoFormerConfig:
        return self._config

    @property
    def stats(self) -> NormStats:
        return self._stats

    @stats.setter
    def stats(self, value: NormStats) -> None:
        self._stats = value

    def __call__(self, images, histories) -> Tensor:
        """Normalized ``(B, H, W, 1)`` images and ``(B, L)`` histories to normalized ``(B,)``."""
        spatial = self.vit(images)
        temporal = self.series(histories)
        return self.head(self.cam(temporal, spatial))

    def predict(self, raw_images, raw_histories) -> np.ndarray:
        """Raw-unit batch prediction in ug/m3."""
        out = self(self._stats.images(raw_images), self._stats.conc(raw_histories))
        return self._stats.denorm_conc(out.data)


def forward(image, series, model: GeoFormer, timestamp: int = 0) -> Prediction:
    """Single-sample prediction from raw image ``(H, W, 1)`` and raw history ``(L,)``."""
    values = series.values if hasattr(series, "values") else series
    out = model.predict(np.asarray(image)[None], np.asarray(values, dtype=np.float64)[None])
    return Prediction(float(out[0]), timestamp)


def predict_autoregressive(model: GeoFormer, images, seed_history, start_day: int = 0) -> list[Prediction]:
    """Roll forward over ``images``, feeding each prediction back into the history window."""
    window = list(np.asarray(seed_history, dtype=np.float64))
    preds = []
    for i, image in enumerate(images):
        p = forward(image, np.asarray(window[-model.config.history:]), model, start_day + i)
        preds.append(p)
        window.append(max(p.value, 0.0))
    return preds


def param_count(model: Module) -> int:
    return model.param_count()


def serialized_size_bytes(model: Module) -> int:
    """Bytes occupied by the model's parameter containers on disk."""
    return sum(serialization.container_size(p.shape) for p in model.parameters())


def _param_filename(name: str) -> str:
    return f"{name}.gft1"


def save_checkpoint(model: GeoFormer, path, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus one GFT1 container per parameter under ``path/params``."""
    root = Path(path)
    (root / "params").mkdir(parents=True, exist_ok=True)
    index = []
    for name, p in model.named_parameters():
        rel = f"params/{_param_filename(name)}"
        serialization.save(root / rel, p.data)
        index.append({"name": name, "shape": list(p.shape), "path": rel})
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "stats": asdict(model.stats),
        "param_count": model.param_count(),
        "size_bytes": serialized_size_bytes(model),
        "params": index,
    }
    if extra:
        manifest.update(extra)
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2) + "\n")
    os.replace(tmp, root / "manifest.json")
    return root


def read_manifest(path) -> dict:
    manifest = json.loads((Path(path) / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"{path} is not a GeoFormer checkpoint")
    return manifest


def load_checkpoint(path) -> GeoFormer:
    root = Path(path)
    manifest = read_manifest(root)
    model = GeoFormer(GeoFormerConfig.from_dict(manifest["config"]), NormStats(**manifest["stats"]))
    params = dict(model.named_parameters())
    entries = {e["name"]: e for e in manifest["params"]}
    if set(entries) != set(params):
        raise ContractError("checkpoint parameter index does not match the model layout")
    for name, p in params.items():
        arr = serialization.load(root / entries[name]["path"])
        if arr.shape != p.shape:
            raise ContractError(f"{name}: stored shape {arr.shape} != expected {p.shape}")
        p.data = arr.astype(np.float64)
    return model


def checkpoint_param_bytes(path) -> int:
    """Byte length of every parameter container listed in a checkpoint manifest."""
    root = Path(path)
    return sum(serialization.file_size(root / e["path"]) for e in read_manifest(root)["params"])
