"""Qubit dynamics under transverse random telegraph and Ornstein-Uhlenbeck noise."""

__version__ = "0.1.0"

from .states import ModelParams, GeneralizedBlochVector  # noqa: F401
from .noise import EnsembleConfig, TimeGrid, OU, RTN  # noqa: F401
