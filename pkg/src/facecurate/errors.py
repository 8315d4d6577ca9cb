"""Exception types raised across the curation pipeline."""


class FacecurateError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(FacecurateError):
    """Malformed manifest file or inconsistent manifest state."""


class EmbeddingFormatError(FacecurateError):
    """Bad embedding file: magic/version/size mismatch or non-unit rows."""


class StageError(FacecurateError):
    """A curation stage was invoked on invalid inputs or decisions."""


class EvalError(FacecurateError):
    """Score-set or ROC computation received unusable inputs."""


class PipelineError(FacecurateError):
    """Pipeline orchestration failure: bad config, broken chaining, bad resume."""
