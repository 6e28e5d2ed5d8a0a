"""Exception types shared across the toolkit."""
from __future__ import annotations



class SlelabError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(SlelabError, ValueError):
    """A parameter lies outside the supported range."""


class NumericError(SlelabError, ArithmeticError):
    """A numerical step failed (branch failure, non-convergence)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class SwallowedPoint(SlelabError):
    """A point was absorbed by the hull of the chain."""

    def __init__(self, step: int):
        super().__init__(f"point swallowed at step {step}")
        self.step = step


class PointAtInfinity(SlelabError):
    """A Möbius transport sent the point to infinity."""


class DegenerateQuad(SlelabError, ValueError):
    """Boundary points of a quad coincide."""


class TopologyError(SlelabError):
    """Geometric input has the wrong topology for the requested operation."""

    def __init__(self, message: str, component: int | None = None):
        super().__init__(message if component is None else f"{message} (component {component})")
        self.component = component


class ConfigurationError(SlelabError, ValueError):
    """Malformed configuration (boundary condition, experiment config)."""


class InputError(SlelabError, ValueError):
    """Malformed geometric input such as an open polyline passed as a loop."""


class UnsupportedDepth(SlelabError):
    """Requested scale depth is below the resolution the backend can represent."""


class CalibrationError(SlelabError):
    """Pilot runs produced too few events to calibrate the scale constants."""
