"""Exception hierarchy shared by every spade_anomaly module."""


class SpadeError(Exception):
    """Base class for all errors raised by spade_anomaly."""


class DatasetError(SpadeError, ValueError):
    """Invalid dataset contents or scenario parameters."""


class OracleError(SpadeError):
    """The logistic-regression oracle could not be trained."""


class OCCFitError(SpadeError, ValueError):
    """A one-class classifier could not be fitted."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class ThresholdError(SpadeError, ValueError):
    """No valid threshold could be selected."""


class PseudoLabelError(SpadeError):
    """The pseudo-labeler could not be built."""


class ShapeError(SpadeError, ValueError):
    """Array dimensions do not match, or a cache no longer matches its model."""


class LossError(SpadeError, ValueError):
    """Loss targets or sample weights are outside {0, 1}."""


class TrainingError(SpadeError):
    """Training diverged or could not start."""

    def __init__(self, message: str, epoch: int | None = None, trace=None):
        super().__init__(message)
        self.epoch = epoch
        self.trace = trace or []


class EvaluationError(SpadeError, ValueError):
    """Metrics cannot be computed on the given inputs."""


class ConfigError(SpadeError, ValueError):
    """Experiment configuration is invalid or inconsistent."""


class ArtifactError(SpadeError):
    """An output file is missing or empty after a command wrote it."""
