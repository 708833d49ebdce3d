"""Point-cloud extraction from radiance fields."""

__version__ = "0.1.0"
