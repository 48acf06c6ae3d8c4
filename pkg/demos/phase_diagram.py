"""Train at three (L, tau) settings and watch the regimes separate.

Takes about a minute on one core.
"""

# %%
import numpy as np

from tauresnet import NetworkConfig, SeedSpec, gen_separated_dataset, init_network, loss
from tauresnet.trainer import TrainConfig, drift_check, train

ds = gen_separated_dataset(n=8, p=16, d=4, delta=0.5, seed=3)
print(f"n={ds.n}, min pairwise distance {ds.delta}")

# %%
logs = {}
for L, tau in [(16, 1 / 16), (64, 1 / 64), (64, 1 / 8), (256, 0.25)]:
    params = init_network(NetworkConfig(L, 256, 16, 4, tau), SeedSpec(4, (L,)))
    F0 = loss(params, ds).total
    log = train(params, ds, TrainConfig(1e-3, 5000, target_eps=1e-3 * F0))
    logs[(L, tau)] = log
    state = "diverged" if log.diverged else f"reached 1e-3 F0 after {log.converged_step} steps"
    print(f"L={L:3d} tau={tau:.4f}: F0={F0:.3g}, {state}")

# %%
# Loss curve on a log scale, every 20th step.
for key in [(64, 1 / 64), (64, 1 / 8)]:
    F = np.array(logs[key].losses)
    print(key, " ".join(f"{v:.2e}" for v in F[::20]))

# %%
# Trained weights stay close to init; residual layers move about tau times
# as far as the top layer.
for key in [(64, 1 / 64), (64, 1 / 8)]:
    r = drift_check(logs[key], ds.n, ds.d, 256, key[1], ds.delta)
    print(key, f"residual/top drift = {r.extra['residual_to_top']:.3f}")
