"""Exception hierarchy.

Errors fall into two families, which the CLI maps to distinct exit codes:
``DataValidationError`` for bad input files or cohorts (exit 3) and
``ConfigError`` for unusable run configurations (exit 2).
"""


class MorphconnError(Exception):
    """Base class for all package errors."""


class ConfigError(MorphconnError):
    pass


class DataValidationError(MorphconnError, ValueError):
    pass


# atlas / ingest
class DuplicateIndex(DataValidationError):
    pass


class DuplicateName(DataValidationError):
    pass


class NonDenseIndex(DataValidationError):
    pass


class UnknownToken(DataValidationError):
    pass


class BadHeader(DataValidationError):
    pass


class BadAge(DataValidationError):
    pass


class BadGroup(DataValidationError):
    pass


class DuplicateSubject(DataValidationError):
    pass


class NonFiniteValue(DataValidationError):
    pass


class ColumnMismatch(DataValidationError):
    pass


class MissingRegion(DataValidationError):
    pass


class UnknownRegion(DataValidationError):
    pass


class EmptyTable(DataValidationError):
    pass


class MalformedTable(DataValidationError):
    pass


class UnmatchedSubjects(DataValidationError):
    def __init__(self, subjects):
        self.subjects = sorted(subjects)
        super().__init__(f"unmatched subjects: {self.subjects}")


class EmptyCohort(DataValidationError):
    pass


# numerics / modelling
class InsufficientSubjects(DataValidationError):
    pass


class ShapeMismatch(DataValidationError):
    pass


class GroupTooSmall(DataValidationError):
    pass


class SingleClass(DataValidationError):
    pass


class EmptyFeatureSet(DataValidationError):
    pass


class ClassTooSmall(DataValidationError):
    pass


class WrongFeatureKind(DataValidationError):
    pass


class StageError(MorphconnError):
    """Failure inside an experiment stage; ``stage`` names where it happened."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
