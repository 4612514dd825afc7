from typing import Optional


class DelayHJBError(Exception):
    pass


class GridError(DelayHJBError):
    pass


class HistoryError(DelayHJBError):
    pass


class TrajectoryError(DelayHJBError):
    pass


class IntegrationError(DelayHJBError):
    def __init__(self, message: str, node: Optional[int] = None, time: Optional[float] = None):
        if node is not None:
            message = f"{message} (node {node}, t={time:.6g})"
        super().__init__(message)
        self.node = node
        self.time = time


class ParameterDomainError(DelayHJBError):
    pass


class ValueSearchError(DelayHJBError):
    pass


class MVIHypothesisError(DelayHJBError):
    def __init__(self, message: str, offending=None):
        super().__init__(message)
        self.offending = offending or []


class FamilyError(DelayHJBError):
    pass


class PartitionError(DelayHJBError):
    pass


class ConfigError(DelayHJBError):
    """Malformed problem/point file; key_path points at the offending key."""

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path
        self.detail = message
