"""Differentially private federated averaging with circulant smoothing.

Pieces: an FFT-backed smoothing operator with exact risk accounting
(`smoothing`), shrinkage baselines (`denoise`), a Renyi-DP accountant
with noise calibration for subsampled Gaussian aggregation
(`accountant`), the federated simulation engine (`engine`), training
objectives (`objectives`), dataset plumbing (`data`), a loss-threshold
membership-inference harness (`attack`), and a CLI (`cli`).
"""

from .accountant import (
    Mechanism,
    budget_from_noise,
    calibrate_noise,
    compose,
    delta_from_clients,
    max_rounds,
    noise_lower_bound,
    rdp_gaussian,
    rdp_poisson_closed,
    rdp_poisson_numeric,
    rdp_to_dp,
    rdp_uniform_closed,
    rdp_uniform_numeric,
)
from .attack import balanced_attack_set, per_sample_losses, roc_points, threshold_auc
from .denoise import Denoiser, james_stein, soft_threshold
from .engine import (
    FedConfig,
    clip_to_ball,
    load_model,
    run,
    save_model,
    select_clients,
    subsample_mean_variance,
    substream,
)
from .objectives import (
    LogisticTask,
    QuadraticFamily,
    QuadraticTask,
    logistic_loss_grad,
    quad_eval,
    quad_make,
)
from .smoothing import (
    SmoothingOperator,
    effective_dims,
    make_operator,
    risk_monte_carlo,
    smooth_apply,
    smoothed_sqnorm,
    smoothing_risk,
    spectrum,
)

__version__ = "0.1.0"
