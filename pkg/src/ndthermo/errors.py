"""Exception hierarchy shared by the estimators, numerics and CLI."""


class ThermometryError(Exception):
    """Base class. The class name is what the CLI reports."""

    @property
    def name(self):
        return type(self).__name__


class NotPositiveDefinite(ThermometryError):
    pass


class SingularNormalEquations(ThermometryError):
    pass


class NonFiniteResidual(ThermometryError):
    pass


class NonFiniteObjective(ThermometryError):
    pass


class UnderDetermined(ThermometryError):
    pass


class FitDiverged(ThermometryError):
    pass


class DipDetectionFailed(ThermometryError):
    pass


class DegenerateRegression(ThermometryError):
    pass


class GridMismatch(ThermometryError):
    pass


class DegenerateTargets(ThermometryError):
    pass


class AllEstimatesFailed(ThermometryError):
    """Raised by ``run_method`` when no test spectrum produced an estimate.

    The partially filled report is attached so callers can keep the evidence.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InternalConsistencyError(ThermometryError):
    pass
