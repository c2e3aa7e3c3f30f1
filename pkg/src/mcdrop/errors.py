"""Exception hierarchy shared by all modules."""


class McDropError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(McDropError, ValueError):
    pass


class SplitViolationError(McDropError):
    """A dropout layer sits in the cached feature part."""


class ConfigError(McDropError, ValueError):
    pass


class NumericalError(McDropError, ArithmeticError):
    pass


class LabelError(McDropError, ValueError):
    pass


class GenerationError(McDropError):
    pass


class ComparabilityError(McDropError):
    """Two evaluation reports do not describe the same test set."""


class CorrectnessError(McDropError):
    """Fast and naive evaluation disagree; timings would be meaningless."""


class DivergenceError(McDropError, ArithmeticError):
    pass


class FormatError(McDropError, ValueError):
    """A file does not follow its binary or text format."""
