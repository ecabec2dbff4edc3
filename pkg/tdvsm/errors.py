"""Exception hierarchy shared by every tdvsm module.

Data problems derive from ``ValueError`` and numerical failures from
``RuntimeError`` so callers that only know the builtins still behave.
"""


class CaseFormatError(ValueError):
    """A case document could not be parsed (carries line/field context)."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        prefix = ": ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class CaseValidationError(ValueError):
    """A parsed model violates a structural invariant."""


class ConfigError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class IslandingError(RuntimeError):
    """Removing the contingency element would split the network."""


class NumericalError(RuntimeError):
    """Base class for failures of the numerical machinery."""


class SingularJacobianError(NumericalError):
    pass


class BaseInfeasibleError(NumericalError):
    """The base operating point (load factor 1) does not solve."""


class InfeasibleScenarioError(NumericalError):
    pass


class CoSimDivergedError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    pass


class UndefinedMetricError(NumericalError):
    pass


class DegenerateSensitivityError(NumericalError):
    pass


class InfeasibleProblemError(NumericalError):
    """LP/QP has an empty feasible set.

    ``diagnosis`` names the constraints left violated by phase one, and
    ``max_vsm`` is filled by the transmission QP with the largest
    linearized margin reachable inside the remaining constraints.
    """

    def __init__(self, message, diagnosis="", max_vsm=None):
        self.diagnosis = diagnosis
        self.max_vsm = max_vsm
        super().__init__(f"{message} ({diagnosis})" if diagnosis else message)


class UnboundedProblemError(NumericalError):
    pass
