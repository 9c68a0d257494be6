"""Exception hierarchy shared by all modules."""


class PerfGmsError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(PerfGmsError, ValueError):
    """Invalid user input (geometry, configuration, boundary data)."""


class SolverError(PerfGmsError, RuntimeError):
    """A numerical stage failed on otherwise valid input."""


# mesher
class InvalidDomain(ValidationError):
    pass


class OverlappingInclusions(InvalidDomain):
    pass


class InclusionOutsideDomain(InvalidDomain):
    pass


class TangentInclusion(InvalidDomain):
    pass


class NonDivisibleH(ValidationError):
    pass


class RefinementFailure(SolverError):
    pass


class MalformedMeshFile(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# linalg
class IndexOutOfRange(ValidationError, IndexError):
    pass


class NotPositiveDefinite(SolverError):
    pass


class SingularMatrix(SolverError):
    pass


class NonSymmetric(ValidationError):
    pass


class ZeroMassSpace(SolverError):
    pass


# fem
class DegenerateTriangle(ValidationError):
    pass


class InconsistentBC(ValidationError):
    pass


# gmsfem
class SingularLocalSystem(SolverError):
    pass


class DimensionMismatch(ValidationError):
    pass


class InsufficientRank(SolverError):
    pass


class RankDeficientCoarseSpace(SolverError):
    pass


class SingularCoarseMatrix(SolverError):
    pass


class CoarseInfSupFailure(SolverError):
    pass


# harness
class ZeroReferenceNorm(SolverError):
    pass


class ConfigError(ValidationError):
    pass
