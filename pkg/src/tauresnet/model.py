"""Scaled ResNet (and a plain feedforward baseline) with full forward traces.

ResNet layout, depth ``L``::

    h_0 = relu(A x)
    h_l = relu(h_{l-1} + tau * W_l h_{l-1})     l = 1 .. L-1
    h_L = relu(W_L h_{L-1})
    y   = B h_L

The feedforward baseline replaces every hidden layer by ``relu(W_l h_{l-1})``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import as_seed, gaussian_matrix

ARCHS = ("resnet", "feedforward")


@dataclass(frozen=True)
class NetworkConfig:
    depth: int
    width: int
    input_dim: int
    output_dim: int
    tau: float = 0.0
    arch: str = "resnet"

    def __post_init__(self):
        for name in ("depth", "width", "input_dim", "output_dim"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "tau", float(self.tau))
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        for name in ("width", "input_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.tau >= 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")

    # short aliases matching the usual notation
    @property
    def L(self):
        return self.depth

    @property
    def m(self):
        return self.width

    @property
    def p(self):
        return self.input_dim

    @property
    def d(self):
        return self.output_dim


@dataclass
class NetworkParams:
    """Weights of one network. ``W[l-1]`` holds layer ``l``'s matrix."""

    config: NetworkConfig
    A: np.ndarray
    W: list[np.ndarray]
    B: np.ndarray

    def __post_init__(self):
        c = self.config
        if self.A.shape != (c.m, c.p):
            raise ValueError(f"A has shape {self.A.shape}, expected {(c.m, c.p)}")
        if len(self.W) != c.L:
            raise ValueError(f"expected {c.L} hidden matrices, got {len(self.W)}")
        for l, W in enumerate(self.W, start=1):
            if W.shape != (c.m, c.m):
                raise ValueError(f"W_{l} has shape {W.shape}, expected {(c.m, c.m)}")
        if self.B.shape != (c.d, c.m):
            raise ValueError(f"B has shape {self.B.shape}, expected {(c.d, c.m)}")

    @property
    def tau(self) -> float:
        return self.config.tau

    def with_weights(self, W: Sequence[np.ndarray]) -> "NetworkParams":
        return NetworkParams(self.config, self.A, list(W), self.B)

    def with_config(self, **changes) -> "NetworkParams":
        return NetworkParams(replace(self.config, **changes), self.A, self.W, self.B)

    def perturbed(self, delta: Sequence[np.ndarray]) -> "NetworkParams":
        return self.with_weights([W + dW for W, dW in zip(self.W, delta)])

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, self.A.copy(), [W.copy() for W in self.W], self.B.copy())


@dataclass
class ForwardTrace:
    """Per-layer pre-activations ``g``, activations ``h`` and sign masks ``D``.

    ``g``, ``h`` and ``D`` are ``(L+1, m)`` arrays indexed by layer.
    """

    x: np.ndarray
    g: np.ndarray
    h: np.ndarray
    D: np.ndarray
    y: np.ndarray
    tau: float = 0.0
    arch: str = "resnet"

    @property
    def depth(self) -> int:
        return self.h.shape[0] - 1

    def layer_norms(self) -> np.ndarray:
        return np.linalg.norm(self.h, axis=1)


def init_network(config: NetworkConfig, seed) -> NetworkParams:
    """Gaussian init: A, W_l ~ N(0, 2/m), B ~ N(0, 2/d).

    Stream labels: ``0`` for A, ``l`` for W_l, ``L+1`` for B.
    """
    seed = as_seed(seed)
    m, p, d, L = config.m, config.p, config.d, config.L
    A = gaussian_matrix(m, p, 2.0 / m, seed.child(0))
    W = [gaussian_matrix(m, m, 2.0 / m, seed.child(l)) for l in range(1, L + 1)]
    B = gaussian_matrix(d, m, 2.0 / d, seed.child(L + 1))
    return NetworkParams(config, A, W, B)


def _check_input(params: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != params.config.p:
        raise ValueError(f"input has dim {x.shape[0]}, network expects {params.config.p}")
    return x


def forward_batch(params: NetworkParams, X: np.ndarray, arch: str | None = None):
    """Forward a batch of inputs stored as columns of ``X`` (shape ``(p, n)``).

    Returns ``(g, h, D, Y)`` with ``g, h, D`` of shape ``(L+1, m, n)`` and
    ``Y`` of shape ``(d, n)``.
    """
    cfg = params.config
    arch = arch or cfg.arch
    X = _check_input(params, X)
    L, tau = cfg.L, cfg.tau
    n = X.shape[1]
    g = np.empty((L + 1, cfg.m, n))
    D = np.empty((L + 1, cfg.m, n), dtype=bool)
    h = np.empty((L + 1, cfg.m, n))
    g[0] = params.A @ X
    for l in range(L + 1):
        if l > 0:
            prev = h[l - 1]
            Wh = params.W[l - 1] @ prev
            if arch == "resnet" and l < L:
                g[l] = prev + tau * Wh
            else:
                g[l] = Wh
        D[l] = g[l] >= 0
        h[l] = D[l] * g[l]
    Y = params.B @ h[L]
    return g, h, D, Y


def _trace(params, x, arch):
    x = _check_input(params, x)
    if x.ndim != 1:
        raise ValueError("forward takes a single input vector; use forward_batch for batches")
    g, h, D, Y = forward_batch(params, x[:, None], arch)
    return ForwardTrace(x, g[..., 0], h[..., 0], D[..., 0], Y[:, 0], params.tau, arch)


def forward(params: NetworkParams, x) -> ForwardTrace:
    if params.config.arch != "resnet":
        raise ValueError("forward needs a resnet; use forward_feedforward")
    return _trace(params, x, "resnet")


def forward_feedforward(params: NetworkParams, x) -> ForwardTrace:
    """Baseline: ``h_l = relu(W_l h_{l-1})`` for every ``l >= 1``; tau unused."""
    if params.config.arch != "feedforward":
        raise ValueError("forward_feedforward needs arch='feedforward'")
    return _trace(params, x, "feedforward")


def traces_from_batch(params: NetworkParams, X: np.ndarray) -> list[ForwardTrace]:
    """Per-sample traces for the rows of ``X`` (shape ``(n, p)``)."""
    g, h, D, Y = forward_batch(params, np.asarray(X).T)
    return [
        ForwardTrace(X[i], g[..., i], h[..., i], D[..., i], Y[:, i], params.tau, params.config.arch)
        for i in range(X.shape[0])
    ]


def extract_masks(trace: ForwardTrace, layers: range) -> list[np.ndarray]:
    L = trace.depth
    layers = list(layers)
    bad = [l for l in layers if not 0 <= l <= L]
    if bad:
        raise IndexError(f"layers {bad} outside [0, {L}]")
    return [trace.D[l].copy() for l in layers]


# ---------------------------------------------------------------------------
# binary snapshots

MAGIC = b"RSLB1"
_HEADER = struct.Struct("<5sQQQQd")


def save_params(params: NetworkParams, path) -> None:
    """Write the flat ``RSLB1`` container: header then A, W_1..W_L, B row-major."""
    c = params.config
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, c.L, c.m, c.p, c.d, float(c.tau)))
        for M in [params.A, *params.W, params.B]:
            f.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def load_params(path, arch: str = "resnet") -> NetworkParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("snapshot truncated: header incomplete")
    magic, L, m, p, d, tau = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    cfg = NetworkConfig(L, m, p, d, tau, arch)
    shapes = [(m, p)] + [(m, m)] * L + [(d, m)]
    need = _HEADER.size + 8 * sum(r * k for r, k in shapes)
    if len(raw) != need:
        raise ValueError(f"snapshot has {len(raw)} bytes, expected {need}")
    off = _HEADER.size
    mats = []
    for r, k in shapes:
        mats.append(np.frombuffer(raw, dtype="<f8", count=r * k, offset=off).reshape(r, k).astype(np.float64))
        off += 8 * r * k
    return NetworkParams(cfg, mats[0], mats[1:-1], mats[-1])
