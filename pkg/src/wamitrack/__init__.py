"""Moving-vehicle detection and GM-PHD tracking for wide-area aerial video."""
from __future__ import annotations

__version__ = "0.1.0"

__all__ = ["__version__"]
