"""Exception types shared by all g4vdyn modules."""


class G4VError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(G4VError):
    """A configuration document could not be parsed or contains unknown keys."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.key = key


class ValidationError(G4VError):
    """A parameter violates a documented invariant."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class SimulationError(G4VError):
    pass


class InsufficientStatisticsError(SimulationError):
    pass


class StatisticsError(SimulationError):
    pass


class DegeneracyError(SimulationError):
    """The Liouvillian has more than one stationary state."""

    def __init__(self, dimension):
        super().__init__(f"steady state is not unique: null space dimension {dimension}")
        self.dimension = dimension


class StiffnessError(SimulationError):
    pass


class FitError(G4VError):
    pass


class RankDeficiencyError(FitError):
    """The weighted Gauss-Newton Hessian is singular."""
