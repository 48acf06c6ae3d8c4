"""Round-trip a small IDX image file and turn it into a separated dataset.

Pass real MNIST files to use them instead of the generated stand-in:

    python demos/idx_subset.py train-images-idx3-ubyte train-labels-idx1-ubyte
"""

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from tauresnet import NetworkConfig, SeedSpec, init_network
from tauresnet.data import load_idx, normalize_features, write_idx
from tauresnet.trainer import TrainConfig, train

if len(sys.argv) == 3:
    images, labels = sys.argv[1:]
else:
    tmp = Path(tempfile.mkdtemp())
    images, labels = tmp / "images.idx", tmp / "labels.idx"
    rng = np.random.default_rng(0)
    write_idx(images, labels, rng.integers(0, 256, (256, 28, 28)), rng.integers(0, 10, 256))

# %%
raw = load_idx(images, labels)
sub = type(raw)(raw.images[:64], raw.labels[:64])
ds = normalize_features(sub, d=10)
print(f"{ds.n} samples, {ds.p} features kept, {len(ds.meta['dropped_features'])} constant pixels dropped")
print(f"delta = {ds.delta:.4f}")

# %%
params = init_network(NetworkConfig(16, 128, ds.p, 10, 1 / 16), SeedSpec(10))
log = train(params, ds, TrainConfig(1e-3, 300))
print(f"one-hot l2 loss {log.initial_loss:.3f} -> {log.final_loss:.3f} in {log.steps_taken} steps")
