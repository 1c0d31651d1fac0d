"""Exception types shared across the package."""


class FovexError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FovexError):
    """Invalid or inconsistent configuration values."""


class FormatError(FovexError):
    """Malformed file content (checkpoints, manifests, sidecars)."""


class SceneError(FovexError):
    """Scene construction or camera placement failed."""


class FitError(FovexError):
    """Optimization diverged. Carries the iteration where it happened."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class StageError(FovexError):
    """A pipeline stage cannot run, e.g. missing upstream artifacts."""
