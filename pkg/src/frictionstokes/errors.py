"""Exception hierarchy shared by all solver modules."""


class FrictionStokesError(Exception):
    pass


class UsageError(FrictionStokesError, ValueError):
    """Raised when a function is called outside its contract (wrong layout, bad id, ...)."""


class GeometryError(FrictionStokesError):
    """Invalid domain description, e.g. a non-positive channel height."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ConfigurationError(FrictionStokesError):
    pass


class IncompatibleDataError(FrictionStokesError):
    """Boundary data violating the zero net flux condition."""

    def __init__(self, message, flux=None):
        super().__init__(message)
        self.flux = flux


class DataError(FrictionStokesError):
    """Initial or scenario data violating a required condition."""


class StepError(FrictionStokesError):
    """Newton failed to converge inside one time step."""

    def __init__(self, message, residuals=(), step_index=None):
        super().__init__(message)
        self.residuals = list(residuals)
        self.step_index = step_index


class NonContractionError(FrictionStokesError):
    """Threshold iteration did not contract even on the shortest window allowed."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ScenarioError(FrictionStokesError, ValueError):
    """Scenario file rejected; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key, condition):
        super().__init__(f"{key}: {condition}")
        self.key = key
        self.condition = condition
