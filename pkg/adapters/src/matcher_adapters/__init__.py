"""Wrappers that run pretrained image matchers and emit neutral match CSVs."""

from .adapter import run_adapter
from .errors import (AdapterError, BackendUnavailableError, ImageReadError,
                     MissingWeightsError, UnknownMethodError)
from .spec import MAX_DENSE_MATCHES, METHODS, ROSTER, AdapterSpec

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "AdapterSpec",
    "BackendUnavailableError",
    "ImageReadError",
    "MAX_DENSE_MATCHES",
    "METHODS",
    "MissingWeightsError",
    "ROSTER",
    "UnknownMethodError",
    "run_adapter",
    "__version__",
]
