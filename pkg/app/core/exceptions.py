# --- Domain errors for the navigation stack ---


class NavError(Exception):
    """Base class for every error raised by app.core."""


class ScenarioError(NavError):
    pass


class ScenarioParseError(ScenarioError):
    """Scenario document is unreadable or does not match the schema."""


class ScenarioValidationError(ScenarioError):
    """Scenario parsed but breaks a cross-field rule (dangling id, start in collision, unreachable goal)."""


class OutOfBoundsError(NavError, LookupError):
    """Point falls outside the grid. Callers treat the location as lethal."""

    def __init__(self, point, message: str | None = None):
        self.point = tuple(point)
        super().__init__(message or f"point {self.point} is outside the costmap")


class ParameterError(NavError, ValueError):
    pass


class UnknownParameterError(ParameterError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"unknown planner parameter '{key}'")


class ParameterValidationError(ParameterError):
    pass


class ModulatorError(NavError):
    pass


class ModulatorUnavailableError(ModulatorError):
    """Reasoning source did not answer in time or could not be reached."""


class DirectiveDecodeError(ModulatorError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ReplayError(NavError):
    pass
