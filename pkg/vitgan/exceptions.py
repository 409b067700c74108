"""Exceptions raised by the colourisation library.

Management commands turn any ``VitGanError`` into a ``CommandError`` so the
process exits nonzero with the message on stderr.
"""


class VitGanError(Exception):
    """Base class for every error this app raises on purpose."""


class ShapeError(VitGanError, ValueError):
    """A tensor does not have the extent an operation needs."""


class ConfigError(VitGanError, ValueError):
    """A run config or model config failed validation."""

    def __init__(self, message, field_errors=None):
        super().__init__(message)
        self.field_errors = dict(field_errors or {})

    @classmethod
    def from_field_errors(cls, field_errors):
        """One line per ``section.field: message``."""
        lines = [f"{key}: {message}" for key, messages in field_errors.items() for message in messages]
        return cls("invalid config:\n  " + "\n  ".join(lines), field_errors)


class WeightsNotLoadedError(VitGanError, RuntimeError):
    pass


class ManifestError(VitGanError):
    """A weights file or checkpoint does not match its manifest."""


class NonFiniteGradientError(VitGanError, FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter '{name}'")
        self.name = name


class DatasetError(VitGanError):
    pass


class CheckpointError(VitGanError):
    pass


class TrainingAborted(VitGanError):
    """Training stopped early; the metrics log was flushed first."""
