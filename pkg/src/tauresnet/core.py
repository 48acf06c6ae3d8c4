"""Dense linear-algebra primitives and seeded sampling.

Everything is float64. Random streams come from numpy's counter-based Philox
bit generator keyed by ``(master_seed, stream_labels)`` so a stream never
depends on the order in which other streams were consumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one reproducible random stream."""

    master_seed: int
    stream_labels: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stream_labels", tuple(int(s) for s in self.stream_labels))
        if self.master_seed < 0 or any(s < 0 for s in self.stream_labels):
            raise ValueError("seeds and stream labels must be non-negative")

    def child(self, *labels: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.stream_labels + tuple(labels))

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=self.stream_labels)
        return np.random.Generator(np.random.Philox(ss))

    def __str__(self):
        return ":".join(str(s) for s in (self.master_seed,) + self.stream_labels)

    @classmethod
    def parse(cls, text: str) -> "SeedSpec":
        parts = [int(p) for p in str(text).split(":")]
        return cls(parts[0], tuple(parts[1:]))


def as_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    return SeedSpec(int(seed))


def gaussian_matrix(rows: int, cols: int, variance: float, seed) -> np.ndarray:
    """``rows x cols`` matrix with i.i.d. N(0, variance) entries."""
    if rows < 1 or cols < 1:
        raise ValueError(f"empty shape ({rows}, {cols})")
    if not variance > 0:
        raise ValueError("variance must be positive")
    z = as_seed(seed).rng().standard_normal((rows, cols))
    return z * np.sqrt(variance)


class SpectralNorm(NamedTuple):
    value: float
    converged: bool
    iterations: int

    def __float__(self):
        return float(self.value)


def power_iteration(
    matvec: Callable[[np.ndarray], np.ndarray],
    rmatvec: Callable[[np.ndarray], np.ndarray],
    n: int,
    tol: float = 1e-8,
    max_iter: int = 1000,
    seed=None,
) -> SpectralNorm:
    """Largest singular value of an operator given only ``M v`` and ``M^T u``.

    Iterates on ``M^T M`` and stops once the eigen-residual
    ``||M^T M v - s^2 v||`` drops below ``tol * s^2``.
    """
    rng = as_seed(seed if seed is not None else SeedSpec(0, (0x5EC,))).rng()
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for it in range(1, max_iter + 1):
        w = matvec(v)
        sigma = np.linalg.norm(w) / np.linalg.norm(v)
        if sigma == 0.0:
            return SpectralNorm(0.0, True, it)
        z = rmatvec(w)
        lam = sigma * sigma
        resid = np.linalg.norm(z - lam * v)
        v = z / np.linalg.norm(z)
        if resid <= tol * lam:
            # the Rayleigh quotient of the updated vector is never worse
            sigma = max(sigma, np.linalg.norm(matvec(v)) / np.linalg.norm(v))
            return SpectralNorm(float(sigma), True, it)
    return SpectralNorm(float(sigma), False, max_iter)


def spectral_norm(M: np.ndarray, tol: float = 1e-8, max_iter: int = 1000, seed=None) -> SpectralNorm:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("spectral_norm needs a nonempty 2-D matrix")
    if not np.any(M):
        return SpectralNorm(0.0, True, 0)
    return power_iteration(lambda v: M @ v, lambda u: M.T @ u, M.shape[1], tol, max_iter, seed)


def frobenius_norm(M: np.ndarray) -> float:
    M = np.asarray(M, dtype=np.float64)
    return float(np.sqrt(np.sum(M * M)))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)
