"""Full-batch gradient descent and minibatch SGD on the hidden weights."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import SeedSpec, as_seed
from .data import Dataset
from .grad import Gradients, loss, loss_and_grad
from .model import NetworkParams
from .theory import BoundReport, _slack

DIVERGENCE_FACTOR = 1e6
LOG_FIELDS = ("step", "loss", "drift_top", "drift_residual_max", "diverged")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    steps: int
    batch_size: int | None = None   # None: full batch
    target_eps: float = 0.0
    drift_tracking: bool = True
    seed: SeedSpec = SeedSpec(0)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainingLog:
    """Loss and drift per step.

    ``losses[t]`` is the full-set loss at ``W^(t)`` (before update ``t``);
    ``drift[t]`` is ``(top, max residual)`` Frobenius distance from init.
    For SGD, ``batch_losses[t]`` is the minibatch loss used for update ``t``.
    """

    losses: list[float] = field(default_factory=list)
    drift: list[tuple[float, float]] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)
    diverged: bool = False
    diverged_step: int | None = None
    converged_step: int | None = None
    final_params: NetworkParams | None = None

    @property
    def steps_taken(self) -> int:
        return max(len(self.losses) - 1, 0)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def steps_to(self, threshold: float) -> int | None:
        for t, F in enumerate(self.losses):
            if F <= threshold:
                return t
        return None

    def rows(self):
        for t, F in enumerate(self.losses):
            top, res = self.drift[t] if t < len(self.drift) else ("", "")
            div = int(self.diverged and self.diverged_step == t)
            yield {"step": t, "loss": repr(float(F)),
                   "drift_top": repr(float(top)) if top != "" else "",
                   "drift_residual_max": repr(float(res)) if res != "" else "",
                   "diverged": div}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=LOG_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())


def gd_step(params: NetworkParams, grads: Gradients, eta: float) -> NetworkParams:
    """``W_l <- W_l - eta dW_l``; A and B are shared, not copied."""
    if len(grads.dW) != len(params.W):
        raise ValueError(f"{len(grads.dW)} gradients for {len(params.W)} layers")
    for W, G in zip(params.W, grads.dW):
        if W.shape != G.shape:
            raise ValueError(f"gradient shape {G.shape} does not match weight shape {W.shape}")
    if eta == 0:
        return params.with_weights(list(params.W))
    return params.with_weights([W - eta * G for W, G in zip(params.W, grads.dW)])


def _drift(W0, W):
    top = float(np.linalg.norm(W[-1] - W0[-1]))
    res = max((float(np.linalg.norm(a - b)) for a, b in zip(W[:-1], W0[:-1])), default=0.0)
    return top, res


def _bad(F, F0):
    return not math.isfinite(F) or F > DIVERGENCE_FACTOR * F0


def train(params: NetworkParams, dataset: Dataset, tc: TrainConfig) -> TrainingLog:
    """Run up to ``tc.steps`` updates, stopping at ``F <= target_eps`` or divergence.

    Divergence means the loss is non-finite or above ``1e6`` times its
    initial value.
    """
    if dataset.n > 1 and not dataset.delta > 0:
        raise ValueError("dataset violates separation")
    log = TrainingLog()
    W0 = params.W
    rng = as_seed(tc.seed).rng()
    full = tc.batch_size is None or tc.batch_size >= dataset.n
    order: list[int] = []
    F0 = None

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(tc.steps + 1):
            t_start = time.perf_counter()
            rep, grads = loss_and_grad(params, dataset) if full else (loss(params, dataset), None)
            F = rep.total
            if F0 is None:
                F0 = F
            log.losses.append(F)
            if tc.drift_tracking:
                log.drift.append(_drift(W0, params.W))
            if _bad(F, F0):
                log.diverged, log.diverged_step = True, t
                break
            if F <= tc.target_eps:
                log.converged_step = t
                break
            if t == tc.steps:
                break
            if not full:
                if not order:
                    # new epoch; its last batch holds the remainder
                    order = rng.permutation(dataset.n).tolist()
                idx, order = order[:tc.batch_size], order[tc.batch_size:]
                rep_b, grads = loss_and_grad(params, dataset.subset(np.sort(idx)))
                log.batch_losses.append(rep_b.total)
            params = gd_step(params, grads, tc.learning_rate)
            log.step_seconds.append(time.perf_counter() - t_start)

    log.final_params = params
    return log


def drift_check(log: TrainingLog, n: int, d: int, m: int, tau: float, delta: float,
                top_constant: float = 1.0, residual_constant: float = 1.0) -> BoundReport:
    """Final drift in units of ``n^3 sqrt(d) / (delta sqrt(m))`` (residual also / tau)."""
    if not log.drift:
        raise ValueError("training log has no drift data")
    top, res = log.drift[-1]
    scale = n ** 3 * math.sqrt(d) / (delta * math.sqrt(m))
    top_m = top / scale
    res_m = res / (tau * scale) if tau > 0 else (0.0 if res == 0 else float("inf"))
    ratio = res / top if top > 0 else float("nan")
    within = bool(top > 0 and tau > 0 and tau / 10 <= ratio <= tau * 10)
    measured = [top_m, res_m]
    bound = [top_constant, residual_constant]
    return BoundReport(
        "drift", {"n": n, "d": d, "m": m, "tau": tau, "delta": delta}, measured, bound,
        _slack(measured, bound), trials=log.steps_taken,
        passed=bool(top_m <= top_constant and res_m <= residual_constant),
        extra={"drift_top": top, "drift_residual": res, "residual_to_top": ratio,
               "ratio_within_10x_of_tau": within, "scale": scale},
    )
