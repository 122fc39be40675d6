"""Exception types shared across the package."""


class ProqaError(Exception):
    """Base class for all package errors."""


class ShapeError(ProqaError):
    """Incompatible tensor dimensions."""


class ParameterError(ProqaError):
    """Invalid numeric argument (eps, h, lr, ...)."""


class DegenerateBatchError(ProqaError):
    """A loss was requested over zero effective positions."""


class ConfigError(ProqaError):
    """Invalid or inconsistent configuration."""


class VocabError(ProqaError):
    """Unknown token id or unregistered special token."""


class SchemaError(ProqaError):
    """A record violates the instance schema."""


class ConflictError(ProqaError):
    """An entry with this name already exists."""


class ResolutionError(ProqaError):
    """A prompt-bank lookup could not be satisfied."""


class FileFormatError(ProqaError):
    """A persisted file is truncated, corrupt, or of a different version."""


class SequenceLengthError(ProqaError):
    """Input longer than the model's maximum sequence length."""


class MalformedGenerationError(ProqaError):
    """Generated output does not contain the expected separator."""


class DegeneratePairError(ProqaError):
    """A question/answer pair with an empty required field."""


class PipelineOrderError(ProqaError):
    """A pipeline stage ran before its inputs were produced."""


class DistractorExhaustionError(ProqaError):
    """Could not produce enough distinct wrong options."""


class CapacityError(ProqaError):
    """Requested more instances than the world can produce without repeats."""


class SamplingError(ProqaError):
    """Requested a sample larger than the available pool."""


class PipelineHealthError(ProqaError):
    """Too large a fraction of generations were malformed."""


class StageError(ProqaError):
    """A multi-stage run failed; message carries the stage tag."""
