"""Exception types shared across the toolkit.

Every error raised by querydistill derives from :class:`QueryDistillError`,
so callers can catch one base class at the CLI boundary.
"""

from __future__ import annotations


class QueryDistillError(Exception):
    """Base class for all toolkit errors."""


class DegenerateInput(QueryDistillError):
    """Zero-norm vector, zero variance, or otherwise unusable numeric input."""


class DimMismatch(QueryDistillError):
    """Operands disagree on vector dimensionality."""


class InvalidTemperature(QueryDistillError):
    """Softmax temperature must be strictly positive."""


class EmptyBatch(QueryDistillError):
    """An operation that needs at least one item received none."""


class EmptyQuery(QueryDistillError):
    """Tokenization produced no tokens; caller decides whether to skip or abort."""


class MissingFeature(QueryDistillError):
    """A required id was not found in a feature or embedding store."""


class MissingDocEmbeddings(QueryDistillError):
    """The objective needs teacher document embeddings but no cache was supplied."""


class CorruptCache(QueryDistillError):
    """Cache file has a bad magic, unsupported version, or truncated payload."""


class DuplicateId(QueryDistillError):
    """Two records in one store share an id."""


class InvalidStep(QueryDistillError):
    """Scheduler step outside [0, total_steps]."""


class DivergedRun(QueryDistillError):
    """Training hit a NaN/Inf loss or parameter; carries the update index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class EmptySubset(QueryDistillError):
    """A subset fraction floored to zero records."""


class InsufficientTranslations(QueryDistillError):
    """Translated pool smaller than the merge plan's gap for a language."""


class InvalidBenchConfig(QueryDistillError):
    """Benchmark repetition/warmup counts below the required minimum."""


class ConfigError(QueryDistillError):
    """Invalid run or CLI configuration; collects every violation found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
