class PlanningError(Exception):
    """Base class for failures raised by the planning engine"""


class NoFreeSpaceError(PlanningError):
    """The world has no free cell to sample from"""


class EmptyIndexError(PlanningError):
    """Nearest-neighbour query against an empty spatial index"""


class CollisionError(PlanningError):
    """A pose or ray origin lies inside an obstacle or outside the world"""


class FactorizationError(PlanningError):
    """Cholesky factorization of a covariance matrix failed"""


class FitError(PlanningError):
    """Every hyperparameter candidate failed to evaluate"""


class MissionAbortedError(PlanningError):
    """The mission loop cannot make progress"""


class DatasetError(PlanningError):
    """A dataset is missing, malformed or too small"""


class ConfigError(ValueError):
    """Invalid or unknown configuration values"""
