"""Empirical checks of the forward/backward stability and gradient bounds.

Each check returns a :class:`BoundReport` comparing a measured quantity to a
bound. Bounds that hide an unnamed constant take it as an argument; the frozen
values live in :mod:`tauresnet.calibration`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import SeedSpec, as_seed, gaussian_matrix, power_iteration, spectral_norm
from .data import AssumptionViolation, Dataset
from .grad import loss, loss_and_grad
from .model import ForwardTrace, NetworkConfig, NetworkParams, forward, forward_batch, init_network

CSV_FIELDS = ("check_name", "L", "m", "n", "d", "tau", "omega", "trials",
              "measured", "bound", "slack", "pass", "seed")


@dataclass
class BoundReport:
    check_name: str
    config: dict
    measured: float | list
    bound_value: float | list
    slack: float | list
    trials: int = 1
    passed: bool = False
    seed: str = ""
    applicable: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self) -> dict:
        c = self.config
        return {
            "check_name": self.check_name,
            "L": c.get("L", ""), "m": c.get("m", ""), "n": c.get("n", ""),
            "d": c.get("d", ""), "tau": _fmt(c.get("tau", "")), "omega": _fmt(c.get("omega", "")),
            "trials": self.trials,
            "measured": _fmt(self.measured), "bound": _fmt(self.bound_value),
            "slack": _fmt(self.slack),
            "pass": "n/a" if not self.applicable else str(bool(self.passed)).lower(),
            "seed": self.seed,
        }


def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def reports_to_json(reports: Sequence[BoundReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def reports_to_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def _slack(measured, bound):
    m, b = np.asarray(measured, float), np.asarray(bound, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(b != 0, m / np.where(b != 0, b, 1.0), np.where(m == 0, 0.0, np.inf))
    return s.tolist() if s.ndim else float(s)


def _cfg(params: NetworkParams, **more) -> dict:
    c = params.config
    out = {"L": c.L, "m": c.m, "p": c.p, "d": c.d, "tau": c.tau}
    out.update(more)
    return out


# ---------------------------------------------------------------------------
# spectral product of D_b (I + tau W_b) ... D_a (I + tau W_a)

def chain_operator(params: NetworkParams, masks: Sequence[np.ndarray], a: int, b: int):
    """``(matvec, rmatvec)`` of the masked residual chain from layer a to b.

    ``masks[l]`` is layer l's 0/1 mask (index 0..L). The product is never formed.
    """
    tau = params.tau
    Ws = params.W
    Ds = [np.asarray(masks[l], dtype=np.float64) for l in range(len(masks))]

    def matvec(v):
        for l in range(a, b + 1):
            v = Ds[l] * (v + tau * (Ws[l - 1] @ v))
        return v

    def rmatvec(u):
        for l in range(b, a - 1, -1):
            u = Ds[l] * u
            u = u + tau * (Ws[l - 1].T @ u)
        return u

    return matvec, rmatvec


def check_spectral_product(
    params: NetworkParams,
    masks: Sequence[np.ndarray],
    a: int,
    b: int,
    c: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 2000,
    seed=None,
) -> BoundReport:
    L = params.config.L
    if not 1 <= a <= b <= L - 1:
        raise ValueError(f"need 1 <= a <= b <= L-1, got a={a}, b={b}, L={L}")
    if len(masks) != L + 1:
        raise ValueError(f"need {L + 1} masks (layers 0..L), got {len(masks)}")
    mv, rmv = chain_operator(params, masks, a, b)
    res = power_iteration(mv, rmv, params.config.m, tol=tol, max_iter=max_iter,
                          seed=seed if seed is not None else SeedSpec(0, (a, b)))
    bound = 1.0 + c
    naive = (1.0 + params.tau) ** (b - a + 1)
    return BoundReport(
        "spectral_product", _cfg(params, a=a, b=b, c=c), res.value, bound, _slack(res.value, bound),
        passed=res.value <= bound, seed=str(seed or ""),
        extra={"naive_bound": naive, "converged": res.converged, "iterations": res.iterations},
    )


# ---------------------------------------------------------------------------
# forward norms

def check_layer_norms(trace: ForwardTrace, c: float) -> BoundReport:
    norms = trace.layer_norms()
    lo, hi = float(norms.min()), float(norms.max())
    bounds = [1.0 - c, 1.0 + c]
    return BoundReport(
        "layer_norms", {"L": trace.depth, "m": trace.h.shape[1], "tau": trace.tau, "c": c},
        [lo, hi], bounds, [_slack(lo, bounds[0]), _slack(hi, bounds[1])],
        passed=bool(lo >= bounds[0] and hi <= bounds[1]),
        extra={"norms": norms.tolist()},
    )


def layer_statistics(params: NetworkParams, trace: ForwardTrace) -> dict:
    """Per residual layer: ``xi = 2 tau <u, W u>``, ``zeta = tau^2 ||W u||^2``
    with ``u = h_{l-1}/||h_{l-1}||``, and ``Delta = ||g_l||^2 / ||h_{l-1}||^2``.
    Diagnostic only."""
    tau, L = params.tau, params.config.L
    xi, zeta, ratio = [], [], []
    for l in range(1, L):
        h = trace.h[l - 1]
        nh = np.linalg.norm(h)
        if nh == 0:
            xi.append(0.0), zeta.append(0.0), ratio.append(float("nan"))
            continue
        u = h / nh
        Wu = params.W[l - 1] @ u
        xi.append(float(2 * tau * (u @ Wu)))
        zeta.append(float(tau ** 2 * (Wu @ Wu)))
        ratio.append(float(trace.g[l] @ trace.g[l] / nh ** 2))
    return {"xi": xi, "zeta": zeta, "Delta": ratio}


def unit_probe(p: int) -> np.ndarray:
    x = np.zeros(p)
    x[0] = 1.0
    return x


def estimate_explosion(config: NetworkConfig, trials: int, seed, x=None) -> BoundReport:
    """Monte Carlo mean of ``||h_L||^2`` (and ``||h_{L-1}||^2``) over fresh inits.

    The bound is ``L^{2c}`` with ``c = log_L(tau) + 1/2``, i.e. ``tau^2 L``.
    """
    if trials < 30:
        raise ValueError("explosion estimate needs at least 30 trials")
    seed = as_seed(seed)
    x = unit_probe(config.p) if x is None else np.asarray(x, float)
    if abs(np.linalg.norm(x) - 1.0) > 1e-12:
        raise ValueError("probe input must be unit norm")
    top = np.empty(trials)
    pen = np.empty(trials)
    for t in range(trials):
        tr = forward(init_network(config, seed.child(t)), x)
        top[t] = tr.h[-1] @ tr.h[-1]
        pen[t] = tr.h[-2] @ tr.h[-2]
    mean, se = float(top.mean()), float(top.std(ddof=1) / math.sqrt(trials))
    mean_pen, se_pen = float(pen.mean()), float(pen.std(ddof=1) / math.sqrt(trials))
    cfg = {"L": config.L, "m": config.m, "p": config.p, "d": config.d, "tau": config.tau}
    extra = {"se": se, "mean_penultimate": mean_pen, "se_penultimate": se_pen}
    if config.tau <= 0:
        return BoundReport("explosion", cfg, mean, float("nan"), float("nan"), trials, False,
                           str(seed), applicable=False, extra={**extra, "exponent_c": float("-inf")})
    c = math.log(config.tau) / math.log(config.L) + 0.5
    bound = config.L ** (2 * c)
    extra["exponent_c"] = c
    return BoundReport("explosion", cfg, mean, bound, _slack(mean, bound), trials,
                       mean > bound, str(seed), extra=extra)


# ---------------------------------------------------------------------------
# gradient bounds

def gradient_bound_ratios(params: NetworkParams, dataset: Dataset, constant: float = 100.0,
                          top_constant: float | None = None) -> BoundReport:
    """``||grad_{W_l} F||_F^2 * d / (F tau^2 m n)`` per residual layer; the top
    layer is reported without the ``tau^2``."""
    rep, grads = loss_and_grad(params, dataset)
    c = params.config
    n = dataset.n
    cfg = _cfg(params, n=n)
    if rep.total == 0 or c.tau == 0:
        return BoundReport("gradient_upper", cfg, float("nan"), constant, float("nan"),
                           passed=False, applicable=False, extra={"F": rep.total})
    sq = grads.sq_norms()
    res = sq[:-1] * c.d / (rep.total * c.tau ** 2 * c.m * n)
    top = float(sq[-1] * c.d / (rep.total * c.m * n))
    top_constant = constant if top_constant is None else top_constant
    measured = float(res.max())
    return BoundReport(
        "gradient_upper", cfg, measured, constant, _slack(measured, constant),
        passed=bool(measured <= constant and top <= top_constant),
        extra={"per_layer": res.tolist(), "top_ratio": top, "top_constant": top_constant, "F": rep.total},
    )


def gradient_lower_ratio(params: NetworkParams, dataset: Dataset, constant: float = 0.0) -> BoundReport:
    """``||grad_{W_L} F||_F^2 * (d n / delta) / (m max_i F_i)``; passes when >= ``constant``."""
    rep, grads = loss_and_grad(params, dataset)
    c = params.config
    n = dataset.n
    delta = dataset.delta if np.isfinite(dataset.delta) else 1.0
    cfg = _cfg(params, n=n, delta=delta)
    if rep.total == 0:
        return BoundReport("gradient_lower", cfg, float("nan"), constant, float("nan"),
                           passed=False, applicable=False, extra={"F": 0.0})
    top = float(grads.sq_norms()[-1])
    measured = top * (c.d * n / delta) / (c.m * rep.max_sample)
    return BoundReport("gradient_lower", cfg, measured, constant, _slack(measured, constant),
                       passed=bool(measured >= constant and measured > 0),
                       extra={"grad_top_sq": top, "F": rep.total, "max_Fi": rep.max_sample})


# ---------------------------------------------------------------------------
# perturbations

@dataclass
class PerturbationSpec:
    """Weight perturbation ``W'`` with ``||W'_L|| <= omega``, ``||W'_l|| <= tau omega``.

    ``matrices`` is filled by :func:`make_perturbation`, which also records
    their exact spectral norms in ``norms``; hand-built specs leave it empty
    and get measured by power iteration on validation.
    """

    omega: float
    tau: float
    matrices: list[np.ndarray]
    seed: str = ""
    norms: list[float] | None = None

    def validate(self, rtol: float = 1e-6) -> list[float]:
        norms = self.norms
        if norms is None:
            norms = [spectral_norm(M, tol=1e-6).value for M in self.matrices]
        limits = [self.tau * self.omega] * (len(norms) - 1) + [self.omega]
        for l, (s, lim) in enumerate(zip(norms, limits), start=1):
            if s > lim * (1 + rtol) + 1e-300:
                raise ValueError(f"perturbation of layer {l} has norm {s:.6g} > {lim:.6g}")
        return norms

    def scaled(self, factor: float) -> "PerturbationSpec":
        norms = None if self.norms is None else [abs(factor) * s for s in self.norms]
        return PerturbationSpec(self.omega * factor, self.tau, [factor * M for M in self.matrices],
                                self.seed, norms)


def make_perturbation(config: NetworkConfig, omega: float, seed) -> PerturbationSpec:
    """Gaussian directions rescaled to spectral norm exactly ``omega`` (top) or
    ``tau * omega`` (residual layers).

    The rescale uses the LAPACK 2-norm; power iteration converges too slowly
    on square Gaussian matrices to saturate the constraint exactly.
    """
    if omega < 0:
        raise ValueError("omega must be non-negative")
    seed = as_seed(seed)
    mats, norms = [], []
    for l in range(1, config.L + 1):
        G = gaussian_matrix(config.m, config.m, 1.0, seed.child(l))
        target = omega if l == config.L else config.tau * omega
        mats.append(G * (target / np.linalg.norm(G, 2)))
        norms.append(float(target))
    return PerturbationSpec(omega, config.tau, mats, str(seed), norms)


def perturbation_report(params0: NetworkParams, pert: PerturbationSpec, x,
                        constants=(1.0, 1.0, 1.0, 1.0)) -> BoundReport:
    """Forward stability under ``W -> W + W'`` for one input.

    Measured: ``max_{l<L} ||h_l - h_l^0||``, ``max_{l<L}`` sign flips,
    ``||h_L - h_L^0||`` and sign flips at ``L``.
    """
    pert.validate()
    c = params0.config
    t0 = forward(params0, x)
    t1 = forward(params0.perturbed(pert.matrices), x)
    dh = np.linalg.norm(t1.h - t0.h, axis=1)
    flips = np.sum(t1.D != t0.D, axis=1)
    L, tau, w, m = c.L, c.tau, pert.omega, c.m
    measured = [float(dh[:L].max()), float(flips[:L].max()), float(dh[L]), float(flips[L])]
    scales = [tau ** 2 * L * w, m * (w * tau * L) ** (2 / 3), w, m * w ** (2 / 3)]
    bound = [k * s for k, s in zip(constants, scales)]
    ok = all(mv <= bv for mv, bv in zip(measured, bound))
    return BoundReport(
        "perturbation", _cfg(params0, omega=w), measured, bound, _slack(measured, bound),
        passed=ok, seed=pert.seed, extra={"scales": scales, "constants": list(constants)},
    )


def separateness_check(traces: Sequence[ForwardTrace], delta: float, constant: float = 0.0) -> BoundReport:
    """``min_{i<j, l} ||h_{i,l} - h_{j,l}|| / delta``."""
    if len(traces) < 2:
        raise ValueError("separateness needs at least two traces")
    if not delta > 0:
        raise AssumptionViolation(f"delta must be positive, got {delta}")
    n = len(traces)
    best = np.inf
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = np.linalg.norm(traces[i].x - traces[j].x)
            if dx < delta:
                raise AssumptionViolation(f"inputs {i} and {j} are {dx:.3g} apart, below delta={delta}")
            dist = np.linalg.norm(traces[i].h - traces[j].h, axis=1).min()
            best = min(best, float(dist))
    measured = best / delta
    t = traces[0]
    return BoundReport("separateness", {"L": t.depth, "m": t.h.shape[1], "n": n, "tau": t.tau, "delta": delta},
                       measured, constant, _slack(measured, constant), passed=measured >= constant)


def semismooth_terms(m: int, n: int, d: int, tau: float, L: int, omega: float,
                     top_norm: float, residual_norms: Sequence[float], F: float,
                     c1: float = 1.0, c2: float = 1.0) -> tuple[float, float]:
    """Closed-form ``(first_order, second_order)`` terms of the semi-smoothness bound."""
    s = float(np.sum(residual_norms))
    second = c2 * (n * m / d) * (top_norm + tau * s) ** 2
    first = c1 * math.sqrt(m * n * omega ** (2 / 3) / d) * (top_norm + max((tau * L) ** (4 / 3), 1.0) * s) * math.sqrt(F)
    return first, second


def semismooth_residual(params: NetworkParams, pert: PerturbationSpec, dataset: Dataset,
                        c1: float = 10.0, c2: float = 10.0) -> BoundReport:
    """``R = F(W+W') - F(W) - <grad F(W), W'>`` against the two-term bound."""
    c = params.config
    if c.tau ** 2 * c.L > 1 + 1e-12:
        raise ValueError(f"needs tau^2 L <= 1, got {c.tau ** 2 * c.L:.4g}")
    norms = pert.validate()
    rep, grads = loss_and_grad(params, dataset)
    F1 = loss(params.perturbed(pert.matrices), dataset).total
    inner = float(sum(np.sum(g * w) for g, w in zip(grads.dW, pert.matrices)))
    R = F1 - rep.total - inner
    first, second = semismooth_terms(c.m, dataset.n, c.d, c.tau, c.L, pert.omega,
                                     norms[-1], norms[:-1], rep.total, c1, c2)
    bound = first + second
    return BoundReport(
        "semismooth", _cfg(params, n=dataset.n, omega=pert.omega), R, bound, _slack(R, bound),
        passed=bool(R <= bound), seed=pert.seed,
        extra={"first_order": first, "second_order": second, "F": rep.total,
               "first_share": first / bound if bound else 0.0},
    )


def masks_for(params: NetworkParams, x) -> list[np.ndarray]:
    _, _, D, _ = forward_batch(params, np.asarray(x, float)[:, None])
    return [D[l, :, 0] for l in range(params.config.L + 1)]
