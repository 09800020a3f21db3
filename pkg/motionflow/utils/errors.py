"""Exception hierarchy shared by every motionflow subpackage."""


class MotionFlowError(Exception):
    """Base class of all errors raised by motionflow."""


class ConfigError(MotionFlowError, ValueError):
    """Invalid configuration or command-line usage."""


class ShapeError(MotionFlowError, ValueError):
    """A tensor does not satisfy the shape contract of an operation."""


class DataError(MotionFlowError, ValueError):
    """Malformed dataset or CSV input."""


class NonFiniteError(MotionFlowError, RuntimeError):
    """A NaN or Inf value was produced.

    Args:
        name: Name of the first tensor found to be non-finite.
    """
    def __init__(self, name: str, message: str = ''):
        self.name = name
        super().__init__(message or f'non-finite values in tensor {name!r}')


class GradientCheckError(MotionFlowError, AssertionError):
    """Analytic and finite-difference gradients disagree."""
