"""Gradient, perturbation and semi-smoothness checks at initialization."""

# %%
import numpy as np

from tauresnet import NetworkConfig, SeedSpec, init_network
from tauresnet import calibration as cal
from tauresnet.theory import (gradient_bound_ratios, gradient_lower_ratio, make_perturbation,
                              perturbation_report, reports_to_csv, semismooth_residual)

ds = cal.reference_dataset(seed=5)
reports = []

# %%
# Gradient norms relative to F: bounded above per layer, bounded below at the top.
cfg = NetworkConfig(32, 256, ds.p, ds.d, 1 / np.sqrt(32))
params = init_network(cfg, SeedSpec(6))
reports.append(gradient_bound_ratios(params, ds, 2 * cal.frozen("gradient_upper")))
reports.append(gradient_lower_ratio(params, ds, cal.frozen("gradient_lower") / 2))

# %%
# A spectral-norm-omega perturbation barely moves the hidden layers.
pert = make_perturbation(cfg, 0.01, SeedSpec(7))
reports.append(perturbation_report(params, pert, ds.features[0]))
print("halved:", perturbation_report(params, pert.scaled(0.5), ds.features[0]).measured)

# %%
# Semi-smoothness needs tau^2 L <= 1.
small = init_network(NetworkConfig(16, 256, ds.p, ds.d, 1 / 16), SeedSpec(8))
r = semismooth_residual(small, make_perturbation(small.config, 0.01, SeedSpec(9)), ds)
reports.append(r)
print(f"first-order share of the bound: {r.extra['first_share']:.3f}")

# %%
print(reports_to_csv(reports))
