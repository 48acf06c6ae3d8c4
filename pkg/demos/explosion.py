"""Forward explosion when tau is large: E||h_L||^2 grows like tau^2 L."""

# %%
from tauresnet import NetworkConfig, SeedSpec
from tauresnet.theory import estimate_explosion

# %%
for L in (16, 64, 256):
    for mode, tau in (("1/L", 1 / L), ("L^-1/4", L ** -0.25)):
        r = estimate_explosion(NetworkConfig(L, 128, 16, 4, tau), 60, SeedSpec(2, (L,)))
        print(f"L={L:3d} tau={mode:7s} mean ||h_L-1||^2 = {r.extra['mean_penultimate']:10.4g} "
              f"(se {r.extra['se_penultimate']:.2g}), tau^2 L = {r.bound_value:.3g}")

# %%
# With tau = 1/L the norm stays near 1 at every depth; with tau = L^-1/4
# it grows quickly in L and passes the tau^2 L = sqrt(L) line.
