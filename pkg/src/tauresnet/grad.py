"""Squared loss, analytic backprop over the hidden weights, and a
finite-difference oracle.

Only ``W_1 .. W_L`` are trained; ``A`` and ``B`` stay at their initial values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset
from .model import ForwardTrace, NetworkParams, forward_batch

FD_MAX_PARAMS = 10_000


@dataclass
class LossReport:
    total: float
    per_sample: np.ndarray      # (n,)
    loss_vectors: np.ndarray    # (n, d): B h_{i,L} - y_i

    @property
    def max_sample(self) -> float:
        return float(np.max(self.per_sample))


@dataclass
class Gradients:
    dW: list[np.ndarray]

    def __len__(self):
        return len(self.dW)

    def scaled(self, alpha: float) -> "Gradients":
        return Gradients([alpha * g for g in self.dW])

    def sq_norms(self) -> np.ndarray:
        return np.array([float(np.sum(g * g)) for g in self.dW])


def _check_dims(params: NetworkParams, dataset: Dataset):
    c = params.config
    if dataset.p != c.p or dataset.d != c.d:
        raise ValueError(
            f"dataset dims (p={dataset.p}, d={dataset.d}) do not match network (p={c.p}, d={c.d})"
        )


def _report(Y: np.ndarray, targets: np.ndarray) -> LossReport:
    V = Y.T - targets
    per = 0.5 * np.sum(V * V, axis=1)
    return LossReport(float(np.sum(per)), per, V)


def loss(params: NetworkParams, dataset: Dataset) -> LossReport:
    _check_dims(params, dataset)
    *_, Y = forward_batch(params, dataset.features.T)
    return _report(Y, dataset.targets)


def _sweep(params: NetworkParams, h: np.ndarray, D: np.ndarray, V: np.ndarray, arch: str):
    """Reverse sweep over a batch. ``h, D`` are ``(L+1, m, n)``, ``V`` is ``(d, n)``.

    Yields ``(l, delta_l)`` where ``delta_l = dF/dg_l`` (shape ``(m, n)``),
    from the top layer downwards.
    """
    L, tau = params.config.L, params.config.tau
    dh = params.B.T @ V
    for l in range(L, 0, -1):
        delta = D[l] * dh
        yield l, delta
        W = params.W[l - 1]
        if arch == "resnet" and l < L:
            dh = delta + tau * (W.T @ delta)
        else:
            dh = W.T @ delta


def _grads_from_batch(params, h, D, V, arch) -> Gradients:
    L, tau = params.config.L, params.config.tau
    dW = [None] * L
    for l, delta in _sweep(params, h, D, V, arch):
        scale = tau if (arch == "resnet" and l < L) else 1.0
        dW[l - 1] = scale * (delta @ h[l - 1].T)
    return Gradients(dW)


def bp_vector(params: NetworkParams, trace: ForwardTrace, v, target: tuple[str, int]):
    """Back-propagate an output-space vector ``v`` through one sample's trace.

    ``target`` is ``("W", l)`` for the gradient of ``<v, B h_L>`` w.r.t. ``W_l``
    (an ``m x m`` matrix, carrying the leading tau for residual layers) or
    ``("h", l)`` for the vector ``d<v, B h_L>/dh_l``.
    """
    kind, l = target
    L = params.config.L
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params.config.d,):
        raise ValueError(f"v has shape {v.shape}, expected ({params.config.d},)")
    if trace.h.shape != (L + 1, params.config.m):
        raise ValueError("trace does not belong to these params")
    if kind == "W" and 1 <= l <= L:
        h, D = trace.h[..., None], trace.D[..., None]
        for layer, delta in _sweep(params, h, D, v[:, None], trace.arch):
            if layer == l:
                scale = params.tau if (trace.arch == "resnet" and l < L) else 1.0
                return scale * np.outer(delta[:, 0], trace.h[l - 1])
    if kind == "h" and 0 <= l <= L:
        if l == L:
            return params.B.T @ v
        h, D = trace.h[..., None], trace.D[..., None]
        tau = params.tau
        for layer, delta in _sweep(params, h, D, v[:, None], trace.arch):
            if layer == l + 1:
                W = params.W[layer - 1]
                if trace.arch == "resnet" and layer < L:
                    return (delta + tau * (W.T @ delta))[:, 0]
                return (W.T @ delta)[:, 0]
    raise ValueError(f"invalid target selector {target!r} for depth {L}")


def backprop(params: NetworkParams, traces: Sequence[ForwardTrace], report: LossReport) -> Gradients:
    """``dW_l = sum_i BP_i(loss_vector_i, W_l)``; samples are reduced in index order."""
    if len(traces) != len(report.per_sample):
        raise ValueError(f"{len(traces)} traces for {len(report.per_sample)} loss vectors")
    h = np.stack([t.h for t in traces], axis=-1)
    D = np.stack([t.D for t in traces], axis=-1)
    arch = traces[0].arch if traces else params.config.arch
    return _grads_from_batch(params, h, D, report.loss_vectors.T, arch)


def loss_and_grad(params: NetworkParams, dataset: Dataset) -> tuple[LossReport, Gradients]:
    """Batched forward + backward; the path used by training."""
    _check_dims(params, dataset)
    _, h, D, Y = forward_batch(params, dataset.features.T)
    rep = _report(Y, dataset.targets)
    return rep, _grads_from_batch(params, h, D, rep.loss_vectors.T, params.config.arch)


def finite_diff_gradient(params: NetworkParams, dataset: Dataset, step: float = 1e-5) -> Gradients | None:
    """Central differences over every hidden-weight entry.

    Returns ``None`` (does not raise) when the network has more than
    ``FD_MAX_PARAMS`` hidden weights.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    c = params.config
    if c.L * c.m * c.m > FD_MAX_PARAMS:
        return None
    W = [w.copy() for w in params.W]
    probe = params.with_weights(W)
    out = []
    for l in range(c.L):
        G = np.empty_like(W[l])
        for j in range(c.m):
            for k in range(c.m):
                orig = W[l][j, k]
                W[l][j, k] = orig + step
                fp = loss(probe, dataset).total
                W[l][j, k] = orig - step
                fm = loss(probe, dataset).total
                W[l][j, k] = orig
                G[j, k] = (fp - fm) / (2 * step)
        out.append(G)
    return Gradients(out)


def kink_rows(params: NetworkParams, dataset: Dataset, threshold: float) -> list[np.ndarray]:
    """Per layer, rows ``j`` of ``W_l`` whose pre-activation ``g_l[j]`` lies within
    ``threshold`` of zero for some sample; finite differences straddle the
    ReLU kink there."""
    g, *_ = forward_batch(params, dataset.features.T)
    return [np.any(np.abs(g[l]) < threshold, axis=1) for l in range(1, params.config.L + 1)]


def relative_errors(analytic: Gradients, oracle: Gradients, exclude_rows=None) -> list[float]:
    """Per-layer ``||G - G_fd||_F / ||G||_F`` over the non-excluded rows."""
    out = []
    for l, (G, H) in enumerate(zip(analytic.dW, oracle.dW)):
        keep = slice(None) if exclude_rows is None else ~exclude_rows[l]
        num = np.linalg.norm(G[keep] - H[keep])
        den = np.linalg.norm(G[keep])
        out.append(float(num / den) if den > 0 else float(num))
    return out
