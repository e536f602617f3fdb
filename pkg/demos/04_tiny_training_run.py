"""
Overfitting sixteen samples with the tiny model
===============================================

A quick end-to-end check that the fused model, loss and optimizer learn.
"""

import numpy as np

from geoformer.data import Dataset, compute_stats
from geoformer.model import TINY_CONFIG, GeoFormer
from geoformer.training import TrainConfig, evaluate, train

rng = np.random.default_rng(1)
targets = rng.uniform(10, 50, 16)
images = rng.normal(1.0, 0.5, (16, 8, 8, 1)).astype(np.float32)
images[:, :4, :4, 0] += (0.02 * targets[:, None, None]).astype(np.float32)
histories = (targets[:, None] + rng.normal(0, 3, (16, 4))).clip(0).astype(np.float32)
data = Dataset(images, histories, targets, [f"S{i:02d}" for i in range(16)], np.arange(16), compute_stats(images, targets))

model = GeoFormer(TINY_CONFIG)
result = train(model, data, TrainConfig(epochs=500, batch_size=16),
               log=lambda e, l: print(f"epoch {e:4d}  mse {l:.5f}") if e % 100 == 0 else None)
print("final normalized mse", result.losses[-1], "from", result.losses[0])
print(evaluate(model, data).to_json())
