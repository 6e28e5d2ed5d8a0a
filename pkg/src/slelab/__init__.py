"""Desk-scale simulation toolkit for SLE/CLE strands, lattice pivotal switching
and resampling chains."""
from __future__ import annotations

__version__ = "0.1.0"
