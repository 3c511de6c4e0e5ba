"""Black-box auditing of artist-style use in text-to-image models."""

__version__ = "0.1.0"
