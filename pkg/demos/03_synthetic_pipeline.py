"""
Synthetic stations, plumes and mosaics
======================================

Each station gets a seasonal AR(1) concentration series. Every day renders a
noisy raster with a Gaussian plume scaled by that day's value; a sample's
image is the mean of the ten preceding rasters, centre-cropped and resized.
"""

import tempfile

import numpy as np

from geoformer.data import build_dataset, generate_station_series, load_dataset, make_stations

station = make_stations(1, seed=0)[0]
series = generate_station_series(station, 60, seed=0)
print(station.id, "first week:", np.round(series.values[:7], 2))

with tempfile.TemporaryDirectory() as root:
    manifest = build_dataset(root, n_stations=6, n_days=40, history=8, seed=0)
    print("splits:", [(s["id"], s["split"]) for s in manifest["stations"]])
    train = load_dataset(root, "train")
    print("train samples:", len(train), "image shape:", train.images.shape[1:])
    print("normalization (train only):", train.stats)
