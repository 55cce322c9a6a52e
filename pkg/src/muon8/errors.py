"""Exception hierarchy shared by all muon8 modules."""


class Muon8Error(Exception):
    """Base class for library errors."""


class ShapeError(Muon8Error, ValueError):
    pass


class DataError(Muon8Error, ValueError):
    """Invalid numeric payload (NaN/Inf input, out-of-range code)."""


class ZeroInputError(Muon8Error, ValueError):
    pass


class NumericalError(Muon8Error, ArithmeticError):
    pass


class RankError(NumericalError):
    def __init__(self, message: str, s_min: float):
        super().__init__(message)
        self.s_min = s_min


class HypothesisError(Muon8Error, ValueError):
    """A theorem's hypothesis is violated by the requested configuration."""


class ConfigError(Muon8Error, ValueError):
    pass


class DivergenceError(Muon8Error, RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
