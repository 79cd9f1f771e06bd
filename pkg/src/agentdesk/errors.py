"""Exception types shared across the package."""

from __future__ import annotations


class DataError(Exception):
    """Bad or missing input data (prices, news, manifests, run artifacts)."""


class InsufficientHistoryError(DataError):
    """An indicator window reaches back before the start of the series."""


class ProviderError(Exception):
    """A model provider call failed (transport, auth, or malformed payload)."""


class ParseError(ProviderError):
    """Provider output did not contain a usable structured object."""
