"""Exception hierarchy shared by all modules."""


class RandersError(Exception):
    """Base class for every error raised by randerskit."""


# -- expressions / fields -------------------------------------------------

class ExpressionSyntaxError(RandersError):
    def __init__(self, message, text="", position=0):
        self.text = text
        self.position = position
        pointer = ""
        if text:
            pointer = "\n  " + text + "\n  " + " " * position + "^"
        super().__init__(f"{message} at position {position}{pointer}")


class UnknownSymbolError(ExpressionSyntaxError):
    pass


class SingularityError(RandersError):
    """A field evaluated to a non-finite value (division by zero, log(0), ...)."""


class NotPositiveDefinite(RandersError):
    def __init__(self, x, detail=""):
        self.x = x
        super().__init__(f"metric is not positive definite at x={list(map(float, x))} {detail}".rstrip())


class DimensionMismatch(RandersError):
    pass


# -- Randers constraints --------------------------------------------------

class NormViolation(RandersError):
    def __init__(self, x, value):
        self.x = x
        self.value = value
        super().__init__(f"|omega|_x = {value:.6g} >= 1 at x={list(map(float, x))}")


class WindTooStrong(NormViolation):
    def __init__(self, x, value):
        super().__init__(x, value)
        self.args = (f"|W|_g = {value:.6g} >= 1 at x={list(map(float, x))}",)


class NonpositiveBeta(RandersError):
    def __init__(self, x, value=None):
        self.x = x
        self.value = value
        super().__init__(f"beta = {value} <= 0 at x={list(map(float, x))}")


class ZeroVectorAtDerivative(RandersError):
    pass


class PositivityFailure(RandersError):
    def __init__(self, x, y):
        self.x = x
        self.y = y
        super().__init__(f"fundamental tensor not positive definite at x={x}, y={y}")


class ProvenanceMismatch(RandersError):
    pass


# -- integration ----------------------------------------------------------

class DomainExit(RandersError):
    def __init__(self, s_exit, partial):
        self.s_exit = s_exit
        self.partial = partial
        super().__init__(f"trajectory left the chart domain at s={s_exit:.6g}")


class StepSizeUnderflow(RandersError):
    def __init__(self, s, detail="step size underflow"):
        self.s = s
        super().__init__(f"{detail} at s={s:.6g}")


# -- shooting / certificates ----------------------------------------------

class NoSolutionFound(RandersError):
    pass


class CertificateMissing(RandersError):
    pass


class SublevelUnbounded(RandersError):
    pass


class NormDataUnavailable(RandersError):
    pass


class NotCritical(RandersError):
    def __init__(self, p0, grad_norm):
        self.p0 = p0
        self.grad_norm = grad_norm
        super().__init__(f"|grad f| = {grad_norm:.3g} at candidate minimum {list(map(float, p0))}")


class DegenerateAt(RandersError):
    def __init__(self, p0, y):
        self.p0 = p0
        self.y = y
        super().__init__(f"Finsler Hessian vanishes at {list(map(float, p0))} along {list(map(float, y))}")


class ConfigError(RandersError):
    pass
