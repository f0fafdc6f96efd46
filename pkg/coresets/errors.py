class CoresetError(Exception):
    """Base class for every error raised by the coresets package."""

    iteration = None


class InvalidModelError(CoresetError, ValueError):
    pass


class DimensionMismatchError(CoresetError, ValueError):
    pass


class DataIndexError(CoresetError, IndexError):
    pass


class UnsupportedModelError(CoresetError, TypeError):
    pass


class InsufficientDataError(CoresetError, ValueError):
    pass


class InvalidArgumentError(CoresetError, ValueError):
    pass


class SamplerError(CoresetError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class OptimizationError(CoresetError, RuntimeError):
    pass


class NumericError(CoresetError, FloatingPointError):
    def __init__(self, message, datum=None, sample=None):
        super().__init__(message)
        self.datum = datum
        self.sample = sample


class LinearAlgebraError(CoresetError, RuntimeError):
    pass


class DegenerateMomentsError(CoresetError, ValueError):
    pass


class PreconditionError(CoresetError, ValueError):
    pass


class InsufficientSamplesError(CoresetError, ValueError):
    pass


class DatasetError(CoresetError, ValueError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class ConfigError(CoresetError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
