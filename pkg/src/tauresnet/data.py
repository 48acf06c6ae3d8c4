"""Datasets satisfying the unit-norm / delta-separation assumption.

Synthetic features are uniform on the sphere with rejection resampling; real
data come from IDX files (the MNIST container) and are standardized, then
projected to the unit sphere.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import as_seed

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
UNIT_NORM_TOL = 1e-12
MAX_REJECTIONS = 100_000


class AssumptionViolation(ValueError):
    """Inputs are not unit-norm or not delta-separated."""


class IdxFormatError(ValueError):
    pass


def pairwise_min_distance(X: np.ndarray) -> float:
    """Exhaustive minimum distance over distinct row pairs (inf when n < 2)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        return float("inf")
    best = np.inf
    for i in range(n - 1):
        diff = X[i + 1:] - X[i]
        best = min(best, float(np.sqrt(np.min(np.sum(diff * diff, axis=1)))))
    return best


@dataclass(frozen=True)
class Dataset:
    """``n`` pairs ``(x_i, y_i)`` with certified separation ``delta``.

    ``features`` is ``(n, p)``, ``targets`` is ``(n, d)``.
    """

    features: np.ndarray
    targets: np.ndarray
    delta: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        Y = np.asarray(self.targets, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] < 1:
            raise ValueError(f"incompatible shapes {X.shape} / {Y.shape}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", Y)
        norms = np.linalg.norm(X, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if bad.size:
            raise AssumptionViolation(f"{bad.size} feature vectors are not unit norm (first index {bad[0]})")
        if X.shape[0] > 1:
            dmin = pairwise_min_distance(X)
            if not self.delta > 0:
                raise AssumptionViolation(f"delta must be positive, got {self.delta}")
            if dmin < self.delta:
                raise AssumptionViolation(f"min pairwise distance {dmin:.6g} < delta {self.delta:.6g}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.targets.shape[1]

    def with_targets(self, targets) -> "Dataset":
        return Dataset(self.features, targets, self.delta, dict(self.meta))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        X = self.features[idx]
        delta = self.delta if len(idx) > 1 else float("inf")
        return Dataset(X, self.targets[idx], delta, dict(self.meta))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([f"x{j}" for j in range(self.p)] + [f"y{j}" for j in range(self.d)])
            for x, y in zip(self.features, self.targets):
                w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def _unit_rows(Z):
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def gen_separated_dataset(n: int, p: int, d: int, delta: float, target_scale: float = 1.0, seed=0) -> Dataset:
    """Unit-sphere features with pairwise distance >= ``delta``, Gaussian targets.

    Points are drawn one at a time; a candidate closer than ``delta`` to an
    accepted point is redrawn. Gives up after ``MAX_REJECTIONS`` redraws.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seed = as_seed(seed)
    rng = seed.child(0).rng()
    X = np.empty((n, p))
    rejected = 0
    k = 0
    while k < n:
        z = rng.standard_normal(p)
        nz = np.linalg.norm(z)
        if nz == 0:
            continue
        x = z / nz
        if k and np.min(np.linalg.norm(X[:k] - x, axis=1)) < delta:
            rejected += 1
            if rejected > MAX_REJECTIONS:
                raise AssumptionViolation(
                    f"could not place point {k + 1} of {n} at separation {delta} "
                    f"after {MAX_REJECTIONS} rejections ({k} points placed)"
                )
            continue
        X[k] = x
        k += 1
    X = _unit_rows(X)
    Y = target_scale * seed.child(1).rng().standard_normal((n, d))
    return Dataset(X, Y, delta if n > 1 else float("inf"), {"source": "synthetic", "seed": str(seed)})


# ---------------------------------------------------------------------------
# IDX

@dataclass(frozen=True)
class RawImages:
    images: np.ndarray  # (n, rows, cols) uint8
    labels: np.ndarray  # (n,) uint8


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    head = 4 + 4 * ndim
    if len(raw) >= 4:
        got = struct.unpack_from(">I", raw)[0]
        if got != magic:
            raise IdxFormatError(f"{path}: magic {got:#010x}, expected {magic:#010x}")
    if len(raw) < head:
        raise IdxFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise IdxFormatError(f"{path}: truncated payload, {len(raw) - head} of {count} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims).copy()


def load_idx(images_path, labels_path) -> RawImages:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return RawImages(images, labels)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def normalize_features(raw, d: int = 10, labels=None) -> Dataset:
    """Standardize each feature over the subset, rescale samples to unit norm.

    ``raw`` is a :class:`RawImages` or an ``(n, p)`` array (then ``labels``
    must be given). Targets are one-hot of dimension ``d``. Constant feature
    columns are dropped and listed in ``meta['dropped_features']``.
    """
    if isinstance(raw, RawImages):
        X = raw.images.reshape(raw.images.shape[0], -1).astype(np.float64)
        labels = raw.labels
    else:
        X = np.asarray(raw, dtype=np.float64)
        if labels is None:
            raise ValueError("labels are required for array input")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= d:
        raise ValueError(f"labels must lie in [0, {d})")
    if X.shape[0] == 1:
        # no spread to standardize against; only the rescale applies
        keep = np.ones(X.shape[1], dtype=bool)
        dropped = []
        Z = X
    else:
        std = X.std(axis=0)
        keep = std > 0
        dropped = np.flatnonzero(~keep).tolist()
        Z = (X[:, keep] - X[:, keep].mean(axis=0)) / std[keep]
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise AssumptionViolation("a sample has zero norm after standardization")
    Z = Z / norms
    Y = np.eye(d)[labels]
    delta = pairwise_min_distance(Z)
    meta = {"source": "idx", "dropped_features": dropped, "kept_features": int(keep.sum())}
    if not np.isfinite(delta):
        meta["delta_undefined"] = True
    return Dataset(Z, Y, delta, meta)
