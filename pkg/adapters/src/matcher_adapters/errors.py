"""Exception hierarchy for the adapter package."""

from __future__ import annotations


class AdapterError(Exception):
    """Base class for all errors the adapter CLI reports as exit code 1."""


class UnknownMethodError(AdapterError):
    """Requested matcher is not in the supported roster."""


class MissingWeightsError(AdapterError):
    """Pretrained weights were not found; the message says how to fetch them."""


class BackendUnavailableError(AdapterError):
    """No inference backend can serve the requested method."""


class ImageReadError(AdapterError):
    """An input image could not be opened or decoded."""
