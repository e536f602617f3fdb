"""Synthetic station dataset: AR(1) concentration series, Gaussian-plume rasters,
rolling mosaics, centre crop + resize, GFT1 serialization and station-held-out splits.

Every random draw comes from ``numpy.random.default_rng`` (PCG64) seeded by a
tuple ``(seed, purpose, station index[, day])`` so each piece is reproducible
in isolation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import serialization
from .encoders import No2Series
from .errors import ConfigurationError
from .model import NormStats

SCHEMA_VERSION = 1
RASTER_SIZE = 128
CROP_SIZE = 96
IMAGE_SIZE = 64
MOSAIC_WINDOW = 10
PLUME_GAIN = 0.1  # raster units per ug/m3 at the plume peak
BACKGROUND_LEVEL = 1.0
BACKGROUND_NOISE = 0.25

_SERIES, _RASTER, _STATIONS, _SPLIT = 1, 2, 3, 4


@dataclass(frozen=True)
class Station:
    id: str
    index: int
    lat: float
    lon: float
    base: float
    seasonal_amp: float
    phase: float
    ar_coef: float
    ar_std: float
    noise_std: float
    plume_width: float
    plume_dx: float
    plume_dy: float

    def __post_init__(self):
        if not 0.0 <= self.ar_coef < 1.0:
            raise ConfigurationError(f"{self.id}: AR coefficient {self.ar_coef} outside [0, 1)")
        if self.base <= 0:
            raise ConfigurationError(f"{self.id}: base level must be positive")
        if self.plume_width <= 0:
            raise ConfigurationError(f"{self.id}: plume width must be positive")


def make_stations(n: int, seed: int) -> list[Station]:
    rng = np.random.default_rng([seed, _STATIONS])
    stations = []
    for i in range(n):
        stations.append(
            Station(
                id=f"S{i:02d}",
                index=i,
                lat=round(float(rng.uniform(36.0, 60.0)), 4),
                lon=round(float(rng.uniform(-10.0, 25.0)), 4),
                base=float(rng.uniform(15.0, 45.0)),
                seasonal_amp=float(rng.uniform(3.0, 10.0)),
                phase=float(rng.uniform(0.0, 2.0 * math.pi)),
                ar_coef=float(rng.uniform(0.6, 0.9)),
                ar_std=float(rng.uniform(3.0, 6.0)),
                noise_std=float(rng.uniform(0.5, 1.5)),
                plume_width=float(rng.uniform(6.0, 14.0)),
                plume_dx=float(rng.uniform(-6.0, 6.0)),
                plume_dy=float(rng.uniform(-6.0, 6.0)),
            )
        )
    return stations


def generate_station_series(station: Station, n_days: int, seed: int) -> No2Series:
    """``base + seasonal*sin(2 pi t/365 + phase) + AR(1) + noise``, clipped at 0.

    ``ar_std`` is the AR innovation scale and ``noise_std`` the observation
    noise. Values are rounded to float32 so they survive GFT1 storage unchanged.
    """
    if n_days < 1:
        raise ConfigurationError("n_days must be positive")
    rng = np.random.default_rng([seed, _SERIES, station.index])
    phi = station.ar_coef
    innov = rng.normal(0.0, 1.0, n_days) * station.ar_std
    obs = rng.normal(0.0, 1.0, n_days) * station.noise_std
    resid = np.empty(n_days)
    resid[0] = innov[0] / math.sqrt(1.0 - phi * phi)
    for t in range(1, n_days):
        resid[t] = phi * resid[t - 1] + innov[t]
    t = np.arange(n_days)
    seasonal = station.seasonal_amp * np.sin(2.0 * math.pi * t / 365.0 + station.phase)
    values = np.maximum(station.base + seasonal + resid + obs, 0.0)
    return No2Series(values.astype(np.float32).astype(np.float64), t)


def render_raster(station: Station, day: int, value: float, seed: int) -> np.ndarray:
    """128x128x1 scene: Gaussian plume with peak ``PLUME_GAIN * value`` over noisy background."""
    rng = np.random.default_rng([seed, _RASTER, station.index, day])
    background = BACKGROUND_LEVEL + BACKGROUND_NOISE * rng.normal(size=(RASTER_SIZE, RASTER_SIZE))
    c = (RASTER_SIZE - 1) / 2.0
    yy, xx = np.mgrid[0:RASTER_SIZE, 0:RASTER_SIZE]
    r2 = (yy - c - station.plume_dy) ** 2 + (xx - c - station.plume_dx) ** 2
    plume = PLUME_GAIN * float(value) * np.exp(-r2 / (2.0 * station.plume_width**2))
    return np.maximum(background + plume, 0.0)[..., None]


def rolling_mosaic(rasters) -> np.ndarray:
    """Per-pixel mean composite of a window of daily rasters."""
    stack = np.asarray(rasters, dtype=np.float64)
    if stack.ndim < 1 or stack.shape[0] == 0:
        raise ConfigurationError("mosaic needs at least one raster")
    acc = np.zeros(stack.shape[1:])
    for r in stack:
        acc += r
    return acc / stack.shape[0]


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of ``(H, W, C)`` with corner pixels aligned."""
    h, w = image.shape[:2]

    def axis(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(np.intp), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = image[y0][:, x0] * (1 - fx) + image[y0][:, x1] * fx
    bottom = image[y1][:, x0] * (1 - fx) + image[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def crop_resize(raster: np.ndarray, out: int = IMAGE_SIZE, crop: int = CROP_SIZE) -> np.ndarray:
    """Centre crop to ``crop x crop`` then bilinear resize to ``out x out``."""
    raster = np.asarray(raster, dtype=np.float64)
    h, w = raster.shape[:2]
    if crop > min(h, w):
        raise ConfigurationError(f"crop {crop} larger than raster {h}x{w}")
    top, left = (h - crop) // 2, (w - crop) // 2
    return bilinear_resize(raster[top : top + crop, left : left + crop], out, out)


@dataclass
class Sample:
    station: str
    day: int
    image: np.ndarray  # (64, 64, 1) raw mosaic, float32 precision
    history: No2Series
    target: float


def station_samples(station: Station, series: No2Series, seed: int, history: int, window: int = MOSAIC_WINDOW):
    """Yield one Sample per day ``t >= max(history, window)``."""
    values = series.values
    n_days = values.size
    rasters = [render_raster(station, d, values[d], seed) for d in range(n_days)]
    for t in range(max(history, window), n_days):
        image = crop_resize(rolling_mosaic(rasters[t - window : t])).astype(np.float32)
        hist = No2Series(values[t - history : t], np.arange(t - history, t))
        yield Sample(station.id, t, image, hist, float(values[t]))


def split_stations(stations: list[Station], seed: int, test_fraction: float = 0.2) -> dict[str, str]:
    n = len(stations)
    n_test = min(n - 1, max(1, round(test_fraction * n))) if n > 1 else 0
    order = np.random.default_rng([seed, _SPLIT]).permutation(n)
    test = {stations[i].id for i in order[:n_test]}
    return {s.id: ("test" if s.id in test else "train") for s in stations}


def compute_stats(images, targets) -> NormStats:
    """Population mean/std of pixels and concentrations, accumulated in float64."""
    pix = np.asarray(images, dtype=np.float64)
    conc = np.asarray(targets, dtype=np.float64)
    return NormStats(float(pix.mean()), float(pix.std()), float(conc.mean()), float(conc.std()))


def build_dataset(
    out_dir,
    n_stations: int = 35,
    n_days: int = 450,
    history: int = 32,
    seed: int = 42,
    window: int = MOSAIC_WINDOW,
) -> dict:
    """Generate, split, normalize-stat and write the dataset; returns the manifest."""
    if n_stations < 2:
        raise ConfigurationError("need at least two stations for a train/test split")
    if history < 1 or n_days < history + window:
        raise ConfigurationError(
            f"n_days={n_days} too short for history={history} plus a {window}-day mosaic window"
        )
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    if not os.access(root, os.W_OK):
        raise PermissionError(f"{root} is not writable")

    stations = make_stations(n_stations, seed)
    split = split_stations(stations, seed)
    index = []
    train_images, train_targets = [], []
    for st in stations:
        series = generate_station_series(st, n_days, seed)
        folder = root / "samples" / st.id
        folder.mkdir(parents=True, exist_ok=True)
        for s in station_samples(st, series, seed, history, window):
            img_rel = f"samples/{st.id}/{s.day:04d}.img.gft1"
            hist_rel = f"samples/{st.id}/{s.day:04d}.hist.gft1"
            serialization.save(root / img_rel, s.image)
            serialization.save(root / hist_rel, s.history.values)
            index.append(
                {"station": st.id, "day": s.day, "image_path": img_rel,
                 "history_path": hist_rel, "target": repr(s.target)}
            )
            if split[st.id] == "train":
                train_images.append(s.image)
                train_targets.append(s.target)
    stats = compute_stats(train_images, train_targets)

    manifest = {
        "version": SCHEMA_VERSION,
        "seed": seed,
        "config": {"n_stations": n_stations, "n_days": n_days, "history": history, "window": window,
                   "raster_size": RASTER_SIZE, "crop_size": CROP_SIZE, "image_size": IMAGE_SIZE},
        "generator": {"mosaic": "mean", "bounding_box": f"center-crop-{CROP_SIZE}px",
                      "resize": "bilinear-align-corners", "rng": "numpy-PCG64"},
        "stations": [
            {"id": st.id, "lat": st.lat, "lon": st.lon, "split": split[st.id]} for st in stations
        ],
        "stats": asdict(stats),
        "samples": index,
    }
    write_manifest(root, manifest)
    return manifest


def write_manifest(root, manifest: dict) -> Path:
    path = Path(root) / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=1) + "\n")
    os.replace(tmp, path)
    return path


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    manifest = json.loads(path.read_text())
    if manifest.get("version") != SCHEMA_VERSION:
        raise ConfigurationError(f"{path}: unsupported dataset schema {manifest.get('version')}")
    return manifest


@dataclass
class Dataset:
    """In-memory split: raw float32 images, raw histories and float64 targets."""

    images: np.ndarray
    histories: np.ndarray
    targets: np.ndarray
    stations: list[str]
    days: np.ndarray
    stats: NormStats

    def __len__(self):
        return self.targets.size

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.histories[idx], self.targets[idx],
                       [self.stations[i] for i in idx], self.days[idx], self.stats)

    def sample_id(self, i: int) -> str:
        return f"{self.stations[i]}/day{int(self.days[i])}"


def load_dataset(root, split: str | None = "train") -> Dataset:
    """Load one split (``"train"``, ``"test"``, or ``None`` for all samples)."""
    root = Path(root)
    manifest = read_manifest(root)
    splits = {s["id"]: s["split"] for s in manifest["stations"]}
    if split not in (None, "train", "test"):
        raise ConfigurationError(f"unknown split {split!r}")
    rows = [s for s in manifest["samples"] if split is None or splits[s["station"]] == split]
    if not rows:
        raise ConfigurationError(f"split {split!r} has no samples")
    images = np.stack([serialization.load(root / r["image_path"]) for r in rows])
    histories = np.stack([serialization.load(root / r["history_path"]) for r in rows]).astype(np.float64)
    targets = np.array([float(r["target"]) for r in rows])
    return Dataset(images, histories, targets, [r["station"] for r in rows],
                   np.array([r["day"] for r in rows]), NormStats(**manifest["stats"]))
