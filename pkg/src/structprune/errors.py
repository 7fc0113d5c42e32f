class InvalidInputError(ValueError):
    """Precondition violated by caller-supplied data."""


class NumericalError(ArithmeticError):
    """An iterative routine failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ModelFormatError(ValueError):
    """Base class for on-disk model validation failures."""

    def __init__(self, message, tensor=None):
        super().__init__(message)
        self.tensor = tensor


class MissingTensorError(ModelFormatError):
    pass


class UnexpectedTensorError(ModelFormatError):
    pass


class ShapeMismatchError(ModelFormatError):
    pass


class NonFiniteWeightError(ModelFormatError):
    pass


class PipelineError(RuntimeError):
    """A pruning stage failed; carries the layer and stage it failed in."""

    def __init__(self, message, layer=None, stage=None):
        super().__init__(message)
        self.layer = layer
        self.stage = stage
