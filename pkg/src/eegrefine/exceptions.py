"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class EegRefineError(Exception):
    exit_code = 5


class ConfigError(EegRefineError, ValueError):
    exit_code = 2


class DataError(EegRefineError, ValueError):
    exit_code = 3


class JudgeError(EegRefineError, RuntimeError):
    """Judge backend failure (network, HTTP status, exhausted retries)."""

    exit_code = 4

    def __init__(self, message, edge=None, status=None):
        super().__init__(message)
        self.edge = edge
        self.status = status


class RefinementError(JudgeError):
    """Refinement aborted; ``completed`` holds the verdicts obtained so far."""

    def __init__(self, message, edge=None, completed=None):
        super().__init__(message, edge=edge)
        self.completed = completed or {}


class InvariantError(EegRefineError, AssertionError):
    exit_code = 5


class NotFittedError(EegRefineError, AttributeError):
    exit_code = 5
