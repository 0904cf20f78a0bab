"""Exception hierarchy shared by every stage of the pipeline."""


class ScFusionError(Exception):
    """Base class for all library errors."""


class BehindCamera(ScFusionError):
    pass


class ShapeMismatch(ScFusionError, ValueError):
    pass


class EmptyView(ScFusionError):
    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


class EmptyMap(ScFusionError):
    pass


class NonFiniteLoss(ScFusionError, FloatingPointError):
    pass


class BadStride(ScFusionError, ValueError):
    pass


class BadProbability(ScFusionError, ValueError):
    pass


class TooFewCorrespondences(ScFusionError):
    pass


class DegenerateConfiguration(ScFusionError):
    pass


class NoConsensus(ScFusionError):
    pass


class Diverged(ScFusionError, FloatingPointError):
    pass


class EmptyInput(ScFusionError, ValueError):
    pass


class UnknownSuite(ScFusionError, KeyError):
    pass


class ConfigError(ScFusionError, ValueError):
    pass
