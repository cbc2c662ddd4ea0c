"""Engine error hierarchy.

Every error carries a machine-readable ``reason`` equal to its class name; the
gateway and the CLI surface that name verbatim.
"""

from __future__ import annotations

from typing import Any


class EngineError(Exception):
    """Base class for all policy, quota and storage errors."""

    status_code = 500

    def __init__(self, message: str = "", **detail: Any) -> None:
        super().__init__(message or self.__class__.__name__)
        self.detail = detail

    @property
    def reason(self) -> str:
        return self.__class__.__name__


class BadRequest(EngineError):
    status_code = 400


class NotFound(EngineError):
    status_code = 404


class Conflict(EngineError):
    status_code = 409


class TooLarge(EngineError):
    status_code = 413


# rbac-core
class DuplicateRoleName(Conflict):
    pass


class DuplicateUser(Conflict):
    pass


class DuplicateAssignment(Conflict):
    pass


class CardinalityExceeded(Conflict):
    pass


class SsdViolation(Conflict):
    pass


class DsdViolation(Conflict):
    pass


class ExistingViolation(Conflict):
    pass


class CycleDetected(Conflict):
    pass


class RoleNotAssigned(Conflict):
    pass


class NoSuchRole(NotFound):
    pass


class NoSuchUser(NotFound):
    pass


class NoSuchAssignment(NotFound):
    pass


class NoSuchTier(NotFound):
    pass


class InvalidPolicy(BadRequest):
    """Malformed role, permission, tier or constraint arguments."""


class AuthFailed(EngineError):
    status_code = 401


class SessionExpired(EngineError):
    status_code = 401


# blob-store
class InvalidName(BadRequest):
    pass


class InvalidBlockId(BadRequest):
    pass


class MissingBlock(BadRequest):
    pass


class SizeNotAligned(BadRequest):
    pass


class NotAligned(BadRequest):
    pass


class WrongBlobType(Conflict):
    pass


class DuplicateAccount(Conflict):
    pass


class DuplicateContainer(Conflict):
    pass


class ContainerNotEmpty(Conflict):
    pass


class NoSuchAccount(NotFound):
    pass


class NoSuchContainer(NotFound):
    pass


class NoSuchBlob(NotFound):
    pass


class BlockTooLarge(TooLarge):
    pass


class BlobTooLarge(TooLarge):
    pass


class AccountCapExceeded(TooLarge):
    pass


class RangeOutOfBounds(EngineError):
    status_code = 416


# persistence
class CorruptSnapshot(EngineError):
    pass


class UnsupportedVersion(EngineError):
    pass


class AuditWriteFailed(EngineError):
    pass


class MalformedAuditLine(EngineError):
    def __init__(self, line_no: int, message: str = "") -> None:
        super().__init__(message or f"malformed audit line {line_no}", line_no=line_no)
        self.line_no = line_no
