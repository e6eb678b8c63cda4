"""Exception types shared across the engine."""


class ScheduleRangeError(ValueError):
    """A schedule parameter is outside its valid range; carries the field name."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(ValueError):
    """Array shapes of paired inputs disagree."""


class StepUnderflowError(ValueError):
    """An operator was asked to step below timestep 0."""


class NumericError(ArithmeticError):
    """Non-finite values appeared; carries the timestep where it happened."""

    def __init__(self, t: int, message: str):
        self.t = t
        super().__init__(f"t={t}: {message}")


class ConditioningError(ValueError):
    """alpha_bar too small for a stable x0 reconstruction."""


class EmptySupportError(ValueError):
    """Every effective mixture weight is zero."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (caller bug)."""


class RemoteError(RuntimeError):
    """A sidecar call failed; carries endpoint, step and a response excerpt."""

    def __init__(self, endpoint: str, t: int | None, detail: str):
        self.endpoint = endpoint
        self.t = t
        self.detail = detail
        super().__init__(f"{endpoint} (t={t}): {detail}")


class RemoteParseError(RemoteError):
    """The sidecar answered but the body could not be interpreted."""
