"""Exception types shared across the package."""

from __future__ import annotations


class LandauLabError(Exception):
    """Base class for all package errors."""


class GridError(LandauLabError, ValueError):
    """Invalid grid construction parameters."""


class MemoryCapError(GridError):
    """Requested lattice exceeds the configured node cap."""


class EmptyRegionError(LandauLabError, ValueError):
    """Integration region contains no lattice nodes."""


class MisalignedCubeError(LandauLabError, ValueError):
    """Cube family does not align with the lattice."""


class GammaRangeError(LandauLabError, ValueError):
    """Interaction exponent outside the supported range [-d, 0]."""


class NonNegativityError(LandauLabError, ValueError):
    """A field that must be a density has negative values."""


class WeightPositivityError(LandauLabError, ValueError):
    """Weight is nonpositive on too large a node fraction."""


class EigenSolveError(LandauLabError, RuntimeError):
    """Per-node eigenvalue extraction failed; carries the node index."""

    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


class IterationError(LandauLabError, RuntimeError):
    """Iterative solver did not converge; carries the last residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class StabilityError(LandauLabError, RuntimeError):
    """Explicit step size violates the stability guard."""


class SnapshotFormatError(LandauLabError, ValueError):
    """Field snapshot file has a bad magic string or size."""


class ConfigError(LandauLabError, ValueError):
    """Run configuration is invalid; carries the offending field names."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration: " + "; ".join(problems))
        self.problems = list(problems)


class LedgerTimeError(LandauLabError, ValueError):
    """Requested time is not present on the trajectory ledger."""
