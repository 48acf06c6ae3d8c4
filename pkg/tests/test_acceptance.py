"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Seeds here use master seed ``ACCEPT_SEED``, never the calibration seed.
"""

import math
import time

import numpy as np
import pytest

from tauresnet import calibration as cal
from tauresnet.cli import main
from tauresnet.core import SeedSpec
from tauresnet.data import gen_separated_dataset
from tauresnet.grad import finite_diff_gradient, kink_rows, loss, loss_and_grad, relative_errors
from tauresnet.model import NetworkConfig, forward, init_network
from tauresnet.theory import (
    check_layer_norms,
    check_spectral_product,
    estimate_explosion,
    gradient_bound_ratios,
    make_perturbation,
    masks_for,
    perturbation_report,
    semismooth_residual,
    semismooth_terms,
    unit_probe,
)
from tauresnet.trainer import TrainConfig, drift_check, train

ACCEPT_SEED = 7
K = cal.DEGRADATION_FACTOR


def test_gradient_oracle_equivalence(verdict):
    eps = 1e-5
    start = time.perf_counter()
    worst = 0.0
    for s in range(10):
        ds = gen_separated_dataset(2, 4, 3, 0.5, seed=SeedSpec(ACCEPT_SEED, (1, s)))
        params = init_network(NetworkConfig(4, 8, 4, 3, 0.5), SeedSpec(ACCEPT_SEED, (2, s)))
        _, G = loss_and_grad(params, ds)
        fd = finite_diff_gradient(params, ds, eps)
        worst = max(worst, *relative_errors(G, fd, kink_rows(params, ds, 10 * eps)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 5.0
    assert verdict(1, "gradient oracle", ok, f"max rel err {worst:.2e} (<= 1e-6), {elapsed:.2f}s (< 5s)")


def test_spectral_product_concentration(verdict):
    L, m = 64, 256
    tau = 1 / (2 * math.sqrt(L))
    cfg = NetworkConfig(L, m, 16, 4, tau)
    x = unit_probe(16)
    values, naive = [], None
    for s in range(200):
        params = init_network(cfg, SeedSpec(ACCEPT_SEED, (3, s)))
        r = check_spectral_product(params, masks_for(params, x), 1, L - 1, c=1.0)
        values.append(r.measured)
        naive = r.extra["naive_bound"]
    values = np.array(values)
    ok = values.max() <= 2.0
    assert verdict(2, "spectral product", ok,
                   f"max {values.max():.4f} mean {values.mean():.4f} (<= 2.0), "
                   f"{np.mean(values > 2.0):.0%} of seeds above 2.0; naive bound {naive:.1f}")


def test_layer_norm_stability(verdict):
    L, m = 32, 512
    cfg = NetworkConfig(L, m, 16, 4, 1 / (math.sqrt(L) * math.log(m)))
    inputs = gen_separated_dataset(4, 16, 4, 0.5, seed=SeedSpec(ACCEPT_SEED, (4,))).features
    violations, lo, hi = 0, np.inf, -np.inf
    for s in range(50):
        params = init_network(cfg, SeedSpec(ACCEPT_SEED, (5, s)))
        for x in inputs:
            r = check_layer_norms(forward(params, x), 0.2)
            violations += not r.passed
            lo, hi = min(lo, r.measured[0]), max(hi, r.measured[1])
    assert verdict(3, "layer norms", violations == 0,
                   f"range [{lo:.3f}, {hi:.3f}] in [0.8, 1.2], {violations} violations over 200")


def test_explosion(verdict):
    means, reports = [], {}
    for L in (16, 64, 256):
        cfg = NetworkConfig(L, 128, 16, 4, L ** -0.25)
        r = estimate_explosion(cfg, 500, SeedSpec(ACCEPT_SEED, (6, L)))
        reports[L] = r
        means.append(r.extra["mean_penultimate"])
    top = reports[256].extra
    increasing = all(a < b for a, b in zip(means, means[1:]))
    ok = increasing and top["mean_penultimate"] > 16 - 3 * top["se_penultimate"]
    assert verdict(4, "explosion", ok,
                   "mean ||h_{L-1}||^2 = " + ", ".join(f"{v:.3g}" for v in means)
                   + f" at L=16,64,256; L=256 se {top['se_penultimate']:.3g} vs bound 16")


# -- training runs shared by criteria 5, 6 and 8 -------------------------------

@pytest.fixture(scope="module")
def runs():
    ds = gen_separated_dataset(8, 16, 4, 0.5, seed=SeedSpec(ACCEPT_SEED, (7,)))
    out = {"dataset": ds}
    for L, tau in [(64, 1 / 64), (64, 1 / 8), (16, 1 / 16), (256, 256 ** -0.25)]:
        params = init_network(NetworkConfig(L, 256, 16, 4, tau), SeedSpec(ACCEPT_SEED, (8, L)))
        F0 = loss(params, ds).total
        out[(L, tau)] = train(params, ds, TrainConfig(cal.DEFAULT_LR, 5000, target_eps=1e-3 * F0))
    return out


def test_phase_diagram(verdict, runs):
    a, b, c = runs[(64, 1 / 64)], runs[(64, 1 / 8)], runs[(256, 0.25)]
    conv = [r.converged_step is not None and r.final_loss <= 1e-3 * r.initial_loss for r in (a, b)]
    ok = all(conv) and c.diverged
    assert verdict(5, "phase diagram", ok,
                   f"L=64 tau=1/L converged in {a.converged_step} steps, tau=1/sqrt(L) in {b.converged_step}; "
                   f"L=256 tau=L^-1/4 diverged={c.diverged} at step {c.diverged_step} (eta={cal.DEFAULT_LR})")


def test_small_tau_loss_monotone_after_first_step(runs):
    F = np.array(runs[(64, 1 / 64)].losses)
    assert np.all(np.diff(F[1:]) < 0)


def test_converged_runs_decay_geometrically(runs):
    # tau = 1/sqrt(L) overshoots for a couple of steps at this eta, then contracts
    for key in [(64, 1 / 64), (64, 1 / 8)]:
        F = np.array(runs[key].losses)
        half = F[len(F) // 2:]
        assert np.max(half[1:] / half[:-1]) < 1.0


def test_weak_depth_dependence(verdict, runs):
    s16, s64 = runs[(16, 1 / 16)].converged_step, runs[(64, 1 / 64)].converged_step
    ratio = max(s16, s64) / min(s16, s64) if s16 and s64 else float("inf")
    assert verdict(6, "depth dependence", ratio < 3, f"steps L=16: {s16}, L=64: {s64}, ratio {ratio:.2f} (< 3)")


def test_gradient_upper_ratio(verdict):
    ds = cal.reference_dataset(seed=SeedSpec(ACCEPT_SEED, (9,)))
    limit = K * cal.frozen("gradient_upper")
    worst = {}
    for name, tau in [("1/L", 1 / 32), ("1/sqrt(L)", 1 / math.sqrt(32))]:
        cfg = NetworkConfig(32, 256, ds.p, ds.d, tau)
        worst[name] = max(gradient_bound_ratios(init_network(cfg, SeedSpec(ACCEPT_SEED, (10, s))), ds).measured
                          for s in range(20))
    ok = all(v <= limit for v in worst.values())
    assert verdict(7, "gradient upper", ok,
                   ", ".join(f"tau={k}: max {v:.3g}" for k, v in worst.items()) + f" (<= {limit:.3g})")


def test_weight_drift(verdict, runs):
    ds = runs["dataset"]
    lines, ok = [], True
    for tau in (1 / 64, 1 / 8):
        r = drift_check(runs[(64, tau)], ds.n, ds.d, 256, tau, ds.delta,
                        K * cal.frozen("drift_top"), K * cal.frozen("drift_residual"))
        ok &= r.passed and r.extra["ratio_within_10x_of_tau"]
        lines.append(f"tau={tau:.4g}: residual/top {r.extra['residual_to_top']:.3g}, "
                     f"scaled drifts {r.measured[0]:.3g}/{r.measured[1]:.3g}")
    assert verdict(8, "weight drift", ok,
                   "; ".join(lines) + f" (limits {K * cal.frozen('drift_top'):.3g}/{K * cal.frozen('drift_residual'):.3g})")


def test_perturbation_stability(verdict):
    L, m = 32, 512
    ds = cal.reference_dataset(seed=SeedSpec(ACCEPT_SEED, (11,)))
    cfg = NetworkConfig(L, m, ds.p, ds.d, 1 / math.sqrt(L))
    names = ("perturb_h", "perturb_flips", "perturb_h_top", "perturb_flips_top")
    consts = [K * cal.frozen(n) for n in names]
    worst = np.zeros(4)
    failures = 0
    x = ds.features[0]
    for s in range(20):
        params = init_network(cfg, SeedSpec(ACCEPT_SEED, (12, s)))
        pert = make_perturbation(cfg, 0.01, SeedSpec(ACCEPT_SEED, (13, s)))
        r = perturbation_report(params, pert, x, consts)
        failures += not r.passed
        worst = np.maximum(worst, r.slack)
    zero = perturbation_report(params, make_perturbation(cfg, 0.0, SeedSpec(ACCEPT_SEED, (14,))), x)
    ok = failures == 0 and zero.measured == [0.0, 0.0, 0.0, 0.0]
    assert verdict(9, "perturbation", ok,
                   "worst measured/limit " + ", ".join(f"{v:.2f}" for v in worst)
                   + f"; omega=0 gives {zero.measured}")


def test_semismooth(verdict):
    L, m = 16, 512
    ds = cal.reference_dataset(n=4, seed=SeedSpec(ACCEPT_SEED, (15,)))
    cfg = NetworkConfig(L, m, ds.p, ds.d, 1 / L)
    params = init_network(cfg, SeedSpec(ACCEPT_SEED, (16,)))
    worst, failures = 0.0, 0
    for s in range(20):
        pert = make_perturbation(cfg, 0.01, SeedSpec(ACCEPT_SEED, (17, s)))
        r = semismooth_residual(params, pert, ds, cal.SEMISMOOTH_C1, cal.SEMISMOOTH_C2)
        failures += not r.passed
        worst = max(worst, r.slack)
    ratios = []
    for width in (128, 512, 2048):
        p = init_network(NetworkConfig(L, width, ds.p, ds.d, 1 / L), SeedSpec(ACCEPT_SEED, (18, width)))
        F = loss(p, ds).total
        first, second = semismooth_terms(width, ds.n, ds.d, 1 / L, L, 0.01, 0.01, [0.01 / L] * (L - 1), F,
                                         cal.SEMISMOOTH_C1, cal.SEMISMOOTH_C2)
        ratios.append(first / second)
    decreasing = all(a > b for a, b in zip(ratios, ratios[1:]))
    ok = failures == 0 and decreasing
    assert verdict(10, "semi-smoothness", ok,
                   f"worst R/bound {worst:.2e} over 20 directions; first/second = "
                   + ", ".join(f"{v:.3g}" for v in ratios) + " at m=128,512,2048")


def test_sweep_reproducible(verdict, tmp_path):
    args = ["sweep", "--set", "sweep.depths=16,64", "--set", "sweep.tau_modes=inverse_L,inverse_sqrt_L",
            "--set", "network.width=256", "--seed", str(ACCEPT_SEED)]
    codes = [main([*args, "--out", str(tmp_path / "a")]), main([*args, "--out", str(tmp_path / "b")])]
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    b = (tmp_path / "b" / "summary.csv").read_bytes()
    rows = a.decode().splitlines()[1:]
    converged = sum(r.split(",")[8] == "true" for r in rows)
    ok = codes == [0, 0] and a == b
    assert verdict(11, "reproducibility", ok,
                   f"summary CSV byte-identical={a == b}, {len(rows)} cells, {converged} converged")
    assert converged == 4
