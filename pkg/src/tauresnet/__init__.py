"""Numerical laboratory for scaled residual networks.

Model, exact Gaussian initialization, analytic backprop, gradient-descent
training, and Monte Carlo checks of the depth/scaling-factor bounds.
"""

from .core import SeedSpec, frobenius_norm, gaussian_matrix, spectral_norm
from .model import (
    ForwardTrace,
    NetworkConfig,
    NetworkParams,
    extract_masks,
    forward,
    forward_feedforward,
    init_network,
)
from .data import Dataset, gen_separated_dataset, load_idx, normalize_features
from .grad import backprop, bp_vector, finite_diff_gradient, loss, loss_and_grad

__version__ = "0.1.0"
