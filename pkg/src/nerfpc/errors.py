"""Exception hierarchy shared by every module."""

from __future__ import annotations


class NerfpcError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(NerfpcError):
    pass


class InvalidPose(NerfpcError):
    pass


class EmptySet(NerfpcError):
    pass


class OutOfBounds(NerfpcError):
    pass


class IoError(NerfpcError):
    pass


class TooFewCameras(NerfpcError):
    pass


class DegenerateDomain(NerfpcError):
    pass


class NonUnitDirection(NerfpcError):
    pass


class BadRange(NerfpcError):
    pass


class BadThresholds(NerfpcError):
    pass


class DegenerateDirections(NerfpcError):
    pass


class EmptyCloud(NerfpcError):
    pass


class ConfigError(NerfpcError):
    pass


class Exhausted(NerfpcError):
    """Extraction hit ``max_attempts`` before reaching the target size.

    The partial result is attached so callers can still use it.
    """

    def __init__(self, message, cloud=None, stats=None):
        super().__init__(message)
        self.cloud = cloud
        self.stats = stats


class DegenerateInputWarning(UserWarning):
    """All pairwise distances are zero; clustering collapses to one cluster."""
