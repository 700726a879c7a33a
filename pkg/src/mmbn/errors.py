"""Exception hierarchy shared across the package."""


class MMBNError(Exception):
    """Base class for all errors raised by mmbn."""


class StructureError(MMBNError):
    pass


class CycleDetected(StructureError):
    pass


class BadArity(StructureError):
    pass


class BadParentIndex(StructureError):
    pass


class InvalidAssignment(MMBNError):
    pass


class MissingEvidence(MMBNError):
    pass


class DataError(MMBNError):
    """Malformed dataset, network or parameter file."""


class SchemaMismatch(DataError):
    pass


class LabelSpaceTooLarge(MMBNError):
    pass


class EvidenceSpaceTooLarge(MMBNError):
    pass


class DimensionMismatch(MMBNError, ValueError):
    pass


class NonpositiveGamma(MMBNError, ValueError):
    pass


class InfeasiblePoint(MMBNError):
    pass


class NoFeasibleStart(MMBNError):
    pass


class LinearSolveFailure(MMBNError):
    pass


class NotRenormalizable(MMBNError):
    pass


class NotSubnormalized(MMBNError):
    pass


class NotNormalized(MMBNError):
    pass


class NotAChain(MMBNError):
    pass


class InvalidLabelVector(MMBNError):
    pass


class BadBeta(MMBNError, ValueError):
    pass


class BadName(MMBNError, ValueError):
    pass


class BadSize(MMBNError, ValueError):
    pass
