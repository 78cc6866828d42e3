"""Exception types shared across the toolkit.

Every validation failure names the violated condition so that callers (and the
CLI) can report actionable diagnostics instead of bare asserts.
"""


class ThermoporoError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ThermoporoError):
    """Run configuration is malformed or violates a documented invariant."""


class AlignmentError(ConfigError):
    """Geometry is not aligned with the voxel grid."""


class DegenerateGeometryError(ConfigError):
    """A phase is empty or otherwise degenerate."""


class ScaleError(ConfigError):
    """The scale separation parameter is not an inverse integer."""


class MaterialError(ConfigError):
    """Material parameters violate positivity or compatibility bounds."""


class WellPosednessError(MaterialError):
    """Storage/coupling coefficients fail the positivity condition."""


class MeshContractError(ThermoporoError):
    """A mesh object does not satisfy the contract expected by a consumer."""


class DeskCapError(ThermoporoError):
    """Problem size exceeds the configured unknown-count cap."""


class SolverError(ThermoporoError):
    """An iterative or direct solve failed to reach the requested tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConsistencyError(ThermoporoError):
    """A right-hand side is inconsistent with the operator kernel."""


class AssemblyError(ThermoporoError):
    """An assembled operator violates a structural requirement (symmetry...)."""
