"""Exception types shared across the package."""


class PoseError(Exception):
    """Base class for all errors raised by dfpose."""


class NonPositiveDepth(PoseError, ValueError):
    pass


class EmptyRender(PoseError):
    """No pixel of the image is covered by the mesh at the requested pose."""


class EmptyMask(PoseError, ValueError):
    pass


class NoValidDepth(PoseError, ValueError):
    """All depth values under the mask are zero (no measurement)."""


class VertexBehindCamera(PoseError, ValueError):
    pass


class EmptyInput(PoseError, ValueError):
    pass


class NoConvergence(PoseError):
    """A bisection hit its iteration cap while the bracket was still wide.

    The best estimate found so far is kept on the exception so callers can
    decide whether to use it anyway.
    """

    def __init__(self, message, best, low, high):
        super().__init__(message)
        self.best = best
        self.low = low
        self.high = high
