"""Exception types shared across the toolkit."""


class KoopmanGridError(Exception):
    """Base class for all toolkit-specific errors."""


class EmptyDataError(KoopmanGridError, ValueError):
    """Raised when a dataset contains no usable snapshot pairs."""


class IllConditionedError(KoopmanGridError, RuntimeError):
    """Raised when a retained singular value is numerically zero.

    ``index`` is the offending position in the (descending) singular-value
    sequence.
    """

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


class NonDiagonalizableError(KoopmanGridError, RuntimeError):
    """Raised when the state matrix is too close to defective for
    eigenfunction coefficients to mean anything."""


class DivergenceError(KoopmanGridError, RuntimeError):
    """Raised when a rollout produces NaN/Inf or an unbounded lifted state.

    ``step`` is the step index at which divergence was detected; ``node``
    identifies the subsystem when raised from a connected prediction.
    """

    def __init__(self, message: str, step: int | None = None, node=None):
        super().__init__(message)
        self.step = step
        self.node = node


class ImplicitSolveError(KoopmanGridError, RuntimeError):
    """Raised when the per-step implicit system is singular to working
    precision. ``condition`` carries the 1-norm condition estimate."""

    def __init__(self, message: str, condition: float | None = None,
                 step: int | None = None, node=None):
        super().__init__(message)
        self.condition = condition
        self.step = step
        self.node = node


class HybridMatrixError(KoopmanGridError, RuntimeError):
    """Raised when the hybrid port representation does not exist for the
    given network/partition (singular interior or port block)."""


class InsufficientExcitationError(KoopmanGridError, ValueError):
    """Raised when measurement samples do not span the port space."""


class InitializationError(KoopmanGridError, RuntimeError):
    """Raised when no consistent initial condition could be found."""


class SimulationError(KoopmanGridError, RuntimeError):
    """Raised when a time step fails to converge. ``time`` is the simulation
    time of the failed step."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time
