"""Exception hierarchy shared by all imuda modules."""


class ImudaError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ImudaError, ValueError):
    pass


class DecompositionError(ImudaError, ValueError):
    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(f"matrix is not positive definite: pivot {pivot} has value {value!r}")


class StateError(ImudaError, RuntimeError):
    pass


class EstimationError(ImudaError, ValueError):
    pass


class InsufficientConfidenceError(ImudaError, RuntimeError):
    def __init__(self, message: str, acceptance_rate: float, per_class: list[int]):
        self.acceptance_rate = acceptance_rate
        self.per_class = per_class
        super().__init__(f"{message} (acceptance_rate={acceptance_rate:.6g}, per_class={per_class})")


class DivergenceError(ImudaError, RuntimeError):
    def __init__(self, message: str, last_finite=None):
        self.last_finite = last_finite
        super().__init__(message)


class FormatError(ImudaError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConfigError(ImudaError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
