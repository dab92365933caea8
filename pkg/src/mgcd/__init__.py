"""Machine-generated content detection: discourse-aware and style-mimic detectors on a numpy core."""

__version__ = "0.1.0"
