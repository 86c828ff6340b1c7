"""Exception and warning classes raised across the package."""


class GustError(Exception):
    """Base class for all package errors."""


class InvalidCell(GustError, ValueError):
    pass


class ShapeMismatch(GustError, ValueError):
    pass


class NoInteriorMaterial(GustError):
    """Hole nucleation was asked to seed a void in a cell without material."""


class DegenerateCovariance(GustError):
    pass


class DatasetDegenerate(GustError):
    """A nominal design could not produce a non-empty perturbed variant."""


class InvalidSchedule(GustError, ValueError):
    pass


class NonFiniteLoss(GustError, FloatingPointError):
    pass


class UnknownBlockIndex(GustError, ValueError):
    pass


class EigFailure(GustError):
    pass


class SolveDiverged(GustError):
    pass


class TooFewRealPoints(GustError, ValueError):
    pass


class PerplexityTooLarge(GustError, ValueError):
    pass


class DegenerateVariance(GustError, ValueError):
    pass


class GenerationExhausted(GustError):
    pass


class UnreadableImage(GustError, OSError):
    pass


class EmptyCell(GustError, ValueError):
    """An imported image binarized to a single phase; ``phase`` names the missing one."""

    def __init__(self, phase, path=None):
        self.phase = phase
        self.path = path
        where = f" ({path})" if path else ""
        super().__init__(f"binarized image has no {phase}{where}")


class FormatError(GustError, ValueError):
    """A dataset or checkpoint file failed structural validation."""


class ConfigError(GustError, ValueError):
    pass


class MissingDependency(GustError):
    """A pipeline stage was run before the stage it consumes."""


class ConfigMismatch(GustError):
    pass


class DegenerateCellWarning(UserWarning):
    pass


class OptimizerStallWarning(UserWarning):
    pass
