"""Dual-masked multivariate time-series forecasting on a small numpy autodiff core."""

from .model import ABLATIONS, CINetwork, DDTNetwork, ModelConfig, build_network

__version__ = "0.1.0"
