"""Exception types shared across pipeline stages."""


class ForumlensError(Exception):
    """Base class for all forumlens errors."""


class ValidationError(ForumlensError, ValueError):
    """Input or artifact fails a documented contract."""


class MissingUpstreamError(ForumlensError):
    """A pipeline stage was invoked before its upstream artifacts exist."""

    def __init__(self, stage: str, message: str | None = None):
        self.stage = stage
        super().__init__(message or f"missing upstream stage: {stage}")


class StaleArtifactError(ValidationError):
    """An upstream artifact no longer matches the hash recorded in the manifest."""
