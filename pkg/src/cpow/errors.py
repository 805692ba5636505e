"""Exception hierarchy shared by every cpow module."""


class CPoWError(Exception):
    """Base class for all protocol and simulation errors."""


# chain
class BadParent(CPoWError):
    pass


class DifficultyNotMet(CPoWError):
    pass


class BadSignature(CPoWError):
    pass


class InsufficientFunds(CPoWError):
    pass


class BadSequence(CPoWError):
    """Transaction sequence number does not advance the sender's counter."""


# mining
class EmptyRange(CPoWError, ValueError):
    pass


# group protocol
class GroupTooSmall(CPoWError, ValueError):
    pass


class OverlapTooSmall(CPoWError, ValueError):
    pass


class NotAMember(CPoWError):
    pass


class FormationTimeout(CPoWError):
    pass


# coordination
class AlreadyWanted(CPoWError):
    pass


class NotHoldingMutex(CPoWError):
    pass


class NoSamples(CPoWError, ValueError):
    pass


class SyncStale(CPoWError):
    pass


# threshold crypto
class BadThreshold(CPoWError, ValueError):
    pass


class InsufficientShares(CPoWError):
    pass


class DuplicateIndex(CPoWError, ValueError):
    pass


# cvrm
class DuplicateGroup(CPoWError):
    pass


class MissingShares(CPoWError):
    pass


class UnknownGroup(CPoWError, KeyError):
    pass


class HeightMismatch(CPoWError):
    pass


class EmptyHonestSet(CPoWError):
    pass


class NotEligible(CPoWError):
    pass


class ExceedsShare(CPoWError):
    pass


# simulation
class ConfigInvalid(CPoWError, ValueError):
    pass


class Deadlock(CPoWError):
    pass


class UnknownNode(CPoWError, KeyError):
    pass


class InvariantViolation(CPoWError, AssertionError):
    """Raised by an introspection hook; carries the offending event trace."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
