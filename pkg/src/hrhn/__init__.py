"""Hierarchical attention-based recurrent highway network for one-step-ahead forecasting."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .data import SeriesDataset, Window, Windows, gen_synthetic, load_csv, make_windows
from .metrics import MetricsReport, compute_metrics
from .model import (
    HRHN,
    RHN,
    RHN_CONV,
    RHN_HA,
    HrhnParams,
    ModelConfig,
    TrainConfig,
    VariantConfig,
    forward,
    init_params,
    loss,
    parse_variant,
    predict,
    train,
)

__version__ = "0.1.0"
