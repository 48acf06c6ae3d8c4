"""Build a scaled ResNet, push one input through it, and look at the trace."""

# %%
import numpy as np

from tauresnet import NetworkConfig, SeedSpec, forward, init_network

# tau = 1/(sqrt(L) ln m) is the small-tau regime where layer norms concentrate
cfg = NetworkConfig(depth=32, width=512, input_dim=16, output_dim=4, tau=1 / (np.sqrt(32) * np.log(512)))
params = init_network(cfg, SeedSpec(0))
print(cfg)

# %%
# A unit input. At init ||h_0||^2 is about 1: variance 2/m, halved by the ReLU.
x = np.zeros(16)
x[0] = 1.0
trace = forward(params, x)
print("output:", trace.y)

# %%
# Layer norms stay near 1 for every layer once tau is small.
norms = trace.layer_norms()
for l in (0, 1, 8, 16, 31, 32):
    print(f"||h_{l}|| = {norms[l]:.4f}   active units: {trace.D[l].sum()}")

# %%
# At tau = 1/sqrt(L) the norms drift upward with depth.
wide = forward(params.with_config(tau=1 / np.sqrt(32)), x).layer_norms()
print("tau=1/sqrt(L):", np.round(wide[[0, 8, 16, 31]], 3))

# %%
# The same network with tau = 0 copies h_0 through every residual block.
flat = forward(params.with_config(tau=0.0), x)
print("tau=0, max | ||h_l|| - ||h_0|| |:", np.abs(flat.layer_norms()[:-1] - flat.layer_norms()[0]).max())
