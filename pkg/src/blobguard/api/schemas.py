"""Request and response bodies for the HTTP API (JSON)."""

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class _Request(BaseModel):
    # unknown keys are a client error rather than silently ignored
    model_config = ConfigDict(extra="forbid")


class ErrorBody(BaseModel):
    error: str
    message: str = ""


class SessionRequest(_Request):
    user: str
    credential: str
    roles: List[str] = Field(default_factory=list)


class SessionInfo(BaseModel):
    token: Optional[str] = None
    user: str
    active_roles: List[str]
    created_at: float
    expires_at: float


class QuotaStatus(BaseModel):
    user: str
    count: int
    limit: Optional[int]  # null is unbounded
    remaining: Optional[int]
    window_start: int
    window_seconds: int


class QuotaBody(_Request):
    limit: Optional[int] = Field(default=None, ge=0)  # null is unbounded
    window: Optional[int] = Field(default=None, ge=1)


class AccountCreate(_Request):
    name: str
    cap: Optional[int] = Field(default=None, ge=1)


class AccountOut(BaseModel):
    name: str
    cap: int
    used: int


class UserCreate(_Request):
    id: str
    display_name: str = ""
    secret: Optional[str] = None


class UserCreated(BaseModel):
    id: str
    secret: str


class RoleCreate(_Request):
    name: str
    max_members: Optional[int] = Field(default=None, ge=1)
    quota: QuotaBody = Field(default_factory=QuotaBody)


class RoleOut(BaseModel):
    id: str
    name: str
    max_members: Optional[int]
    members: List[str]
    quota: QuotaBody
    permissions: List[str]


class CardinalityBody(_Request):
    max_members: Optional[int] = None


class AssignmentCreate(_Request):
    user: str
    role: str
    tier: str = "Basic"


class AssignmentOut(BaseModel):
    user: str
    role: str
    tier: str


class PermissionBody(_Request):
    action: str
    scope: str


class InheritanceBody(_Request):
    senior: str
    junior: str


class PairBody(_Request):
    roles: List[str]

    @field_validator("roles")
    @classmethod
    def two_roles(cls, v: List[str]) -> List[str]:
        if len(v) != 2:
            raise ValueError("exactly two roles")
        return v


class TierBody(_Request):
    multiplier: str  # decimal or fraction text, e.g. "2" or "3/2"

    @field_validator("multiplier", mode="before")
    @classmethod
    def as_text(cls, v):
        return str(v)


class TierOut(BaseModel):
    name: str
    multiplier: str


class BlobItem(BaseModel):
    name: str
    type: str
    size: int
    etag: str
    content_hash: Optional[str] = None


class BlobListing(BaseModel):
    blobs: List[BlobItem]
    next_marker: Optional[str] = None


class PageRanges(BaseModel):
    ranges: List[List[int]]
