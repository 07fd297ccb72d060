"""Goal-directed Event Calculus reasoning over exact rational time."""

from __future__ import annotations

__version__ = "0.1.0"
