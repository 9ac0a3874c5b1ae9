from typing import Any, Dict


class MnarError(Exception):
    """Base class for every failure the library reports.

    ``exit_code`` is the process status the CLI returns for this category and
    ``detail`` is the message shown to the user.
    """

    exit_code = 5

    def __init__(self, detail: str, **context: Any) -> None:
        super().__init__(detail)
        self.detail = detail
        self.context: Dict[str, Any] = context


class DomainError(MnarError, ValueError):
    exit_code = 3


class InputReadError(MnarError):
    exit_code = 2


class RoleError(MnarError):
    exit_code = 3


class ConfigError(MnarError):
    exit_code = 3


class MechanismError(MnarError):
    exit_code = 4


class EstimationError(MnarError):
    exit_code = 5


class DesignError(EstimationError):
    pass


class InsufficientDataError(EstimationError):
    pass


class DegenerateResponseError(EstimationError):
    pass


class SeparationError(EstimationError):
    pass


class RegularityError(EstimationError):
    pass


class NumericalError(EstimationError):
    pass


class UnreliableRegionError(EstimationError):
    pass


class ExperimentError(EstimationError):
    pass
