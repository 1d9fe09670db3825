"""Exception types shared across the package."""


class MobidiscError(Exception):
    """Base class for all package errors."""


class SceneLoadError(MobidiscError):
    """A referenced dataset file is missing or unreadable."""


class FormatError(MobidiscError):
    """A dataset file is malformed.

    Carries the file path and the byte offset at which parsing failed.
    """

    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = int(offset)
        super().__init__(f"{self.path} @ byte {self.offset}: {message}")


class DegenerateGeometryError(MobidiscError):
    """Too few or degenerate points for a geometric fit."""


class ConfigError(MobidiscError):
    """Invalid pipeline or evaluation configuration."""


class EvalInputError(MobidiscError):
    """Predictions or ground truth violate the evaluation input contract."""
