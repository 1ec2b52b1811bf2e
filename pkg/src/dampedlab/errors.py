"""Exception hierarchy shared by all modules."""


class LabError(Exception):
    """Base class for errors raised by dampedlab."""


class InputError(LabError, ValueError):
    """Invalid user input (non-finite points, empty samples, bad config)."""


class AssemblyError(LabError):
    """A discrete operator could not be assembled from the sampled fields."""


class SolverError(LabError):
    """A linear solve did not reach the requested residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class PowerIterationError(LabError):
    """Power iteration did not converge within the iteration budget."""


class CFLError(LabError):
    """Time step violates the stability restriction of the wave stepper."""


class InstabilityError(LabError):
    """Discrete energy grew although the damping is non-negative."""


class EnergyDriftError(LabError):
    """Hamiltonian flow integration drifted off its energy shell."""


class ConstructionError(LabError):
    """Escape-function construction failed for a sampled phase point."""
