"""Exception hierarchy shared by the contracts, the store and the simulator."""


class DataProvError(Exception):
    """Base class for every protocol-level failure."""


# crypto
class MalformedKeyError(DataProvError, KeyError):
    pass


class DecryptError(DataProvError):
    pass


# chain
class NonPositiveStep(DataProvError, ValueError):
    pass


class InsufficientFunds(DataProvError):
    pass


class UnknownOperation(DataProvError, KeyError):
    pass


class AlreadySettled(DataProvError):
    pass


# document tracker
class NoSuchDocument(DataProvError, LookupError):
    pass


class NotOwner(DataProvError):
    pass


class CannotRevokeOwner(DataProvError):
    pass


class UnauthorizedCaller(DataProvError):
    pass


class ReplayRejected(DataProvError):
    pass


class ChainBreak(DataProvError):
    pass


class BadSignature(DataProvError):
    pass


class MalformedPayload(DataProvError, ValueError):
    pass


# vote protocol
class NotAuthorized(DataProvError):
    pass


class SessionPending(DataProvError):
    pass


class SessionClosed(DataProvError):
    pass


class NotSelected(DataProvError):
    pass


class AlreadyVoted(DataProvError):
    pass


class DegenerateParams(DataProvError, ValueError):
    pass


# storage
class PendingVersion(DataProvError):
    pass


class NotFound(DataProvError, LookupError):
    pass


class WriteLocked(DataProvError):
    pass


# analysis
class DivergentCost(DataProvError, ArithmeticError):
    pass


class PoorFit(DataProvError):
    """Regression diagnostics fell below the accepted R^2 floor."""

    def __init__(self, r2, floor):
        super().__init__(f"R^2 = {r2:.4f} below floor {floor}")
        self.r2 = r2
        self.floor = floor


# simulator
class ConfigError(DataProvError):
    pass


class InvariantViolation(DataProvError, AssertionError):
    pass


class WindowOpen(DataProvError):
    """A session was closed before its voting window elapsed."""
