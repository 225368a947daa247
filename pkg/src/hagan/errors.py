"""Exception types raised across the package."""


class HaganError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class ShapeError(HaganError, ValueError):
    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        parts = " vs ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {parts}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(HaganError, ValueError):
    """Input outside the mathematical domain of an op (e.g. log of 0)."""


class UsageError(HaganError, ValueError):
    pass


class DataError(HaganError, ValueError):
    pass


class ConfigError(HaganError, ValueError):
    pass


class DegenerateError(HaganError, ValueError):
    """Input is valid but carries no information (zero variance, zero mass)."""


class DivergenceError(HaganError, FloatingPointError):
    pass


class FreezeViolation(HaganError, AssertionError):
    pass
