"""Exception types shared across the package."""

from __future__ import annotations


class S2TError(Exception):
    """Base class for all package-specific errors."""


# --- annotation parsing -------------------------------------------------

class AnnotationSyntaxError(S2TError):
    """The annotation document is not valid JSON."""


class SchemaError(S2TError):
    """A required field is missing, an unknown field is present, or a
    field has the wrong type. Carries the JSON path of the offender."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class InvariantError(S2TError):
    """The document is well-formed but violates a semantic rule."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class TooFewMatches(S2TError):
    """Splitting requires at least three matches."""


# --- grammar / matching --------------------------------------------------

class ParityError(S2TError):
    """own_side_parity is not a recognised alternation parity."""


class InvalidUnit(S2TError):
    """State labelling was requested for a window that did not match."""


class GrammarError(S2TError):
    """A grammar file violates the pattern invariants."""


# --- synthetic data ------------------------------------------------------

class UnknownShotType(S2TError):
    """A shot type outside the configured vocabulary."""


class GenerationError(S2TError):
    """The generator could not satisfy its constraints."""


# --- numerics ------------------------------------------------------------

class ShapeError(S2TError):
    """A tensor does not have the expected shape."""


class EmptySequence(S2TError):
    """Pooling was asked to reduce a zero-length sequence."""


class NonFiniteGradient(S2TError):
    """A gradient contained NaN or infinity."""


class DomainError(S2TError):
    """A numeric argument is outside the function's domain."""


# --- captioning ----------------------------------------------------------

class EmptyStates(S2TError):
    """A prompt was requested for an empty state list."""


class PromptLengthMismatch(S2TError):
    """A shot-wise prompt does not have one entry per shot."""


class EmptyCorpus(S2TError):
    """An operation that needs data received none."""


class CorpusTooSmall(S2TError):
    """Corpus-level statistics need at least two items."""


class DegenerateCorpus(S2TError):
    """Detector training needs both positive and negative windows."""


# --- harness -------------------------------------------------------------

class ConfigError(S2TError):
    """A configuration file or value is invalid."""


class UnknownCommand(S2TError):
    """The experiment command is not recognised."""
