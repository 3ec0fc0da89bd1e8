"""Exception hierarchy shared by every module."""


class VadError(Exception):
    """Base class for all errors raised by vadmil."""


# feature store
class FeatureFormatError(VadError, ValueError):
    pass


class BadMagic(FeatureFormatError):
    pass


class TruncatedPayload(FeatureFormatError):
    pass


class NonFiniteValue(VadError, ValueError):
    pass


class ClipCountMismatch(VadError, ValueError):
    pass


class EmptyTensor(VadError, ValueError):
    pass


class ManifestError(VadError, ValueError):
    pass


# scorer
class DimensionMismatch(VadError, ValueError):
    pass


class TraceMismatch(VadError, ValueError):
    pass


class CheckpointError(VadError, ValueError):
    pass


# objective
class EmptyBag(VadError, ValueError):
    pass


class LengthMismatch(VadError, ValueError):
    pass


class EmptyBatch(VadError, ValueError):
    pass


# optimizers
class ShapeMismatch(VadError, ValueError):
    pass


class NonFiniteGradient(VadError, ArithmeticError):
    pass


# trainer
class InsufficientBags(VadError, ValueError):
    pass


class NonFiniteLoss(VadError, ArithmeticError):
    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = iteration
        msg = f"non-finite loss at iteration {iteration}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


# evaluator
class DegenerateLabels(VadError, ValueError):
    pass


# cli
class ConfigError(VadError, ValueError):
    pass
