"""Role-based authorization engine.

Covers the RBAC96 family (core sets and relations, role hierarchy, static and
dynamic separation of duty) plus three extensions: a per-role cap on member
count, membership tiers attached to each user-role assignment, and direct
user permissions that are unioned with role-mediated ones at check time.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple, Union

from .errors import (
    AuthFailed,
    CardinalityExceeded,
    CycleDetected,
    DsdViolation,
    DuplicateAssignment,
    DuplicateRoleName,
    DuplicateUser,
    ExistingViolation,
    InvalidPolicy,
    NoSuchAssignment,
    NoSuchRole,
    NoSuchTier,
    NoSuchUser,
    RoleNotAssigned,
    SessionExpired,
    SsdViolation,
)
from .quota import QuotaPolicy, UNBOUNDED

logger = logging.getLogger(__name__)

WILDCARD = "*"
BASIC = "Basic"
PREMIUM = "Premium"


class Action(str, Enum):
    READ = "Read"
    WRITE = "Write"
    DELETE = "Delete"
    LIST = "List"
    CREATE_CONTAINER = "CreateContainer"
    DELETE_CONTAINER = "DeleteContainer"
    ADMIN = "Admin"


DATA_ACTIONS = frozenset(a for a in Action if a is not Action.ADMIN)


def split_scope(path: str) -> Tuple[str, ...]:
    parts = tuple(path.split("/", 2))
    if not 1 <= len(parts) <= 3 or any(p == "" for p in parts):
        raise InvalidPolicy(f"bad scope {path!r}: expected account[/container[/blob]]")
    return parts


def scope_matches(pattern: str, resource: str) -> bool:
    """True if ``resource`` falls under ``pattern``.

    Segments compare literally except the wildcard, which matches any value
    in its position and everything below it. A pattern without a trailing
    wildcard only matches a resource of the same depth.
    """
    pat = split_scope(pattern)
    res = split_scope(resource)
    for i, seg in enumerate(pat):
        if i >= len(res):
            return False
        if seg == WILDCARD:
            if i == len(pat) - 1:
                return True
            continue
        if seg != res[i]:
            return False
    return len(pat) == len(res)


@dataclass(frozen=True, order=True)
class Permission:
    action: Action
    scope: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "action", Action(self.action))
        split_scope(self.scope)

    def matches(self, action: Action, resource: str) -> bool:
        return self.action == action and scope_matches(self.scope, resource)

    def __str__(self) -> str:
        return f"{self.action.value}:{self.scope}"

    @classmethod
    def parse(cls, text: str) -> "Permission":
        action, sep, scope = text.partition(":")
        if not sep:
            raise InvalidPolicy(f"bad permission {text!r}: expected Action:scope")
        try:
            return cls(Action(action), scope)
        except ValueError as exc:
            raise InvalidPolicy(f"unknown action {action!r}") from exc


@dataclass(frozen=True)
class MembershipTier:
    name: str
    quota_multiplier: Fraction


@dataclass
class User:
    id: str
    display_name: str = ""
    credential: str = ""  # salted hash, never the secret itself
    direct_permissions: Set[Permission] = field(default_factory=set)


@dataclass
class Role:
    id: str
    name: str
    max_members: Optional[int] = None  # None is unbounded
    default_quota: QuotaPolicy = UNBOUNDED
    permissions: Set[Permission] = field(default_factory=set)


@dataclass(frozen=True)
class Assignment:
    user_id: str
    role_id: str
    tier: str = BASIC


@dataclass
class Session:
    id: str
    user_id: str
    active_roles: Set[str]
    created_at: float
    expires_at: float

    def live(self, now: float) -> bool:
        return now < self.expires_at


class DenyReason(str, Enum):
    NO_SESSION = "NoSession"
    NO_PERMISSION = "NoPermission"


@dataclass(frozen=True)
class Decision:
    granted: bool
    reason: Optional[DenyReason] = None
    user_id: Optional[str] = None

    def __bool__(self) -> bool:
        return self.granted


Pair = FrozenSet[str]


def hash_credential(secret: str, iterations: int = 100_000) -> str:
    salt = secrets.token_bytes(16)
    digest = hashlib.pbkdf2_hmac("sha256", secret.encode(), salt, iterations)
    return f"pbkdf2_sha256${iterations}${salt.hex()}${digest.hex()}"


def verify_credential(secret: str, stored: str) -> bool:
    try:
        scheme, iterations, salt, expected = stored.split("$")
    except ValueError:
        return False
    if scheme != "pbkdf2_sha256":
        return False
    digest = hashlib.pbkdf2_hmac("sha256", secret.encode(), bytes.fromhex(salt), int(iterations))
    return hmac.compare_digest(digest.hex(), expected)


def _as_multiplier(value: Union[Fraction, int, float, str]) -> Fraction:
    try:
        mult = Fraction(str(value)) if not isinstance(value, Fraction) else value
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidPolicy(f"bad multiplier {value!r}") from exc
    if mult < 1:
        raise InvalidPolicy("tier multiplier must be >= 1")
    return mult


class PolicyStore:
    """The RBAC sets and relations, plus sessions.

    Mutations and reads are serialized through one re-entrant lock, so a
    reader never sees a half-applied change.
    """

    def __init__(
        self,
        clock: Callable[[], float] = time.time,
        session_ttl: float = 3600.0,
        premium_multiplier: Union[Fraction, int, float, str] = 2,
        hash_iterations: int = 100_000,
    ) -> None:
        self.clock = clock
        self.session_ttl = session_ttl
        self.hash_iterations = hash_iterations
        self.users: Dict[str, User] = {}
        self.roles: Dict[str, Role] = {}
        self.assignments: Dict[Tuple[str, str], Assignment] = {}
        self.edges: Set[Tuple[str, str]] = set()  # (senior, junior)
        self.ssd_pairs: Set[Pair] = set()
        self.dsd_pairs: Set[Pair] = set()
        self.tiers: Dict[str, MembershipTier] = {
            BASIC: MembershipTier(BASIC, Fraction(1)),
            PREMIUM: MembershipTier(PREMIUM, _as_multiplier(premium_multiplier)),
        }
        self.sessions: Dict[str, Session] = {}
        self._lock = threading.RLock()
        self._closure_cache: Dict[str, FrozenSet[str]] = {}
        self.version = 0  # bumped on every policy mutation

    # -- helpers ------------------------------------------------------------
    def _changed(self) -> None:
        self.version += 1
        self._closure_cache.clear()

    def _user(self, user_id: str) -> User:
        try:
            return self.users[user_id]
        except KeyError:
            raise NoSuchUser(f"no user {user_id!r}") from None

    def _role(self, role_id: str) -> Role:
        try:
            return self.roles[role_id]
        except KeyError:
            raise NoSuchRole(f"no role {role_id!r}") from None

    def assigned_roles(self, user_id: str) -> Set[str]:
        with self._lock:
            return {r for (u, r) in self.assignments if u == user_id}

    def members(self, role_id: str) -> Set[str]:
        with self._lock:
            return {u for (u, r) in self.assignments if r == role_id}

    def member_count(self, role_id: str) -> int:
        return len(self.members(role_id))

    # -- users --------------------------------------------------------------
    def create_user(self, user_id: str, display_name: str = "", secret: Optional[str] = None) -> str:
        """Create a user and return its secret token (generated if not given)."""
        if not user_id or "/" in user_id:
            raise InvalidPolicy("user id must be nonempty and contain no '/'")
        secret = secret or secrets.token_urlsafe(24)
        hashed = hash_credential(secret, self.hash_iterations)
        with self._lock:
            if user_id in self.users:
                raise DuplicateUser(f"user {user_id!r} exists")
            self.users[user_id] = User(user_id, display_name or user_id, hashed)
            self._changed()
        return secret

    def set_credential(self, user_id: str, secret: Optional[str] = None) -> str:
        secret = secret or secrets.token_urlsafe(24)
        hashed = hash_credential(secret, self.hash_iterations)
        with self._lock:
            self._user(user_id).credential = hashed
            self._changed()
        return secret

    # -- roles --------------------------------------------------------------
    def create_role(
        self,
        name: str,
        max_members: Optional[int] = None,
        quota: QuotaPolicy = UNBOUNDED,
    ) -> Role:
        if not name or "/" in name:
            raise InvalidPolicy("role name must be nonempty and contain no '/'")
        self._check_cap(max_members)
        with self._lock:
            if name in self.roles:
                raise DuplicateRoleName(f"role {name!r} exists")
            role = Role(name, name, max_members, quota)
            self.roles[name] = role
            self._changed()
            return role

    @staticmethod
    def _check_cap(max_members: Optional[int]) -> None:
        if max_members is not None and (not isinstance(max_members, int) or max_members < 1):
            raise InvalidPolicy("max_members must be a positive integer or unbounded")

    def set_role_cardinality(self, role_id: str, new_max: Optional[int]) -> None:
        self._check_cap(new_max)
        with self._lock:
            self._role(role_id).max_members = new_max
            self._changed()

    def set_role_quota(self, role_id: str, quota: QuotaPolicy) -> None:
        with self._lock:
            self._role(role_id).default_quota = quota
            self._changed()

    # -- tiers --------------------------------------------------------------
    def define_tier(self, name: str, multiplier: Union[Fraction, int, float, str]) -> MembershipTier:
        mult = _as_multiplier(multiplier)
        if not name:
            raise InvalidPolicy("tier name must be nonempty")
        if name == BASIC and mult != 1:
            raise InvalidPolicy("the Basic tier multiplier is fixed at 1")
        with self._lock:
            tier = self.tiers[name] = MembershipTier(name, mult)
            self._changed()
            return tier

    def _tier(self, name: str) -> MembershipTier:
        try:
            return self.tiers[name]
        except KeyError:
            raise NoSuchTier(f"no tier {name!r}") from None

    # -- assignments --------------------------------------------------------
    def assign_user(self, user_id: str, role_id: str, tier: str = BASIC) -> Assignment:
        with self._lock:
            self._user(user_id)
            role = self._role(role_id)
            self._tier(tier)
            if (user_id, role_id) in self.assignments:
                raise DuplicateAssignment(f"{user_id!r} already holds {role_id!r}")
            if role.max_members is not None and self.member_count(role_id) >= role.max_members:
                raise CardinalityExceeded(
                    f"role {role_id!r} is at its cap of {role.max_members}",
                    max_members=role.max_members,
                )
            held = self.assigned_roles(user_id)
            for pair in self.ssd_pairs:
                if role_id in pair and (pair - {role_id}) <= held:
                    other = next(iter(pair - {role_id}))
                    raise SsdViolation(f"{role_id!r} conflicts with held role {other!r}")
            assignment = Assignment(user_id, role_id, tier)
            self.assignments[(user_id, role_id)] = assignment
            self._changed()
            return assignment

    def revoke_user(self, user_id: str, role_id: str) -> None:
        with self._lock:
            if (user_id, role_id) not in self.assignments:
                raise NoSuchAssignment(f"{user_id!r} does not hold {role_id!r}")
            del self.assignments[(user_id, role_id)]
            for session in self.sessions.values():
                if session.user_id == user_id:
                    session.active_roles.discard(role_id)
            self._changed()

    # -- permissions --------------------------------------------------------
    def grant_permission_to_role(self, role_id: str, permission: Permission) -> None:
        with self._lock:
            self._role(role_id).permissions.add(permission)
            self._changed()

    def revoke_permission_from_role(self, role_id: str, permission: Permission) -> None:
        with self._lock:
            self._role(role_id).permissions.discard(permission)
            self._changed()

    def grant_permission_to_user(self, user_id: str, permission: Permission) -> None:
        with self._lock:
            self._user(user_id).direct_permissions.add(permission)
            self._changed()

    def revoke_permission_from_user(self, user_id: str, permission: Permission) -> None:
        with self._lock:
            self._user(user_id).direct_permissions.discard(permission)
            self._changed()

    # -- hierarchy ----------------------------------------------------------
    def juniors(self, role_id: str) -> FrozenSet[str]:
        """Reflexive-transitive closure of ``role_id`` along senior->junior edges."""
        with self._lock:
            cached = self._closure_cache.get(role_id)
            if cached is not None:
                return cached
            seen = {role_id}
            stack = [role_id]
            while stack:
                current = stack.pop()
                for senior, junior in self.edges:
                    if senior == current and junior not in seen:
                        seen.add(junior)
                        stack.append(junior)
            result = self._closure_cache[role_id] = frozenset(seen)
            return result

    def add_inheritance(self, senior_role_id: str, junior_role_id: str) -> None:
        with self._lock:
            self._role(senior_role_id)
            self._role(junior_role_id)
            if senior_role_id in self.juniors(junior_role_id):
                raise CycleDetected(f"{senior_role_id!r} -> {junior_role_id!r} closes a cycle")
            self.edges.add((senior_role_id, junior_role_id))
            self._changed()

    def remove_inheritance(self, senior_role_id: str, junior_role_id: str) -> None:
        with self._lock:
            self.edges.discard((senior_role_id, junior_role_id))
            self._changed()

    # -- separation of duty -------------------------------------------------
    def _pair(self, r1: str, r2: str) -> Pair:
        self._role(r1)
        self._role(r2)
        if r1 == r2:
            raise InvalidPolicy("a separation pair needs two distinct roles")
        return frozenset((r1, r2))

    def add_ssd_pair(self, r1: str, r2: str) -> None:
        with self._lock:
            pair = self._pair(r1, r2)
            both = self.members(r1) & self.members(r2)
            if both:
                raise ExistingViolation(f"users {sorted(both)} already hold both roles")
            self.ssd_pairs.add(pair)
            self._changed()

    def add_dsd_pair(self, r1: str, r2: str) -> None:
        with self._lock:
            pair = self._pair(r1, r2)
            now = self.clock()
            for session in self.sessions.values():
                if session.live(now) and pair <= session.active_roles:
                    raise ExistingViolation(f"session of {session.user_id!r} activates both roles")
            self.dsd_pairs.add(pair)
            self._changed()

    def _dsd_conflict(self, roles: Iterable[str]) -> Optional[Pair]:
        roles = set(roles)
        for pair in self.dsd_pairs:
            if pair <= roles:
                return pair
        return None

    # -- sessions -----------------------------------------------------------
    def create_session(self, user_id: str, credential: str, requested_roles: Iterable[str] = ()) -> Session:
        requested = set(requested_roles)
        with self._lock:
            user = self.users.get(user_id)
        # constant-ish work whether or not the user exists
        if user is None or not verify_credential(credential, user.credential):
            raise AuthFailed("bad user or credential")
        with self._lock:
            missing = requested - self.assigned_roles(user_id)
            if missing:
                raise RoleNotAssigned(f"roles not assigned: {sorted(missing)}")
            pair = self._dsd_conflict(requested)
            if pair:
                raise DsdViolation(f"roles {sorted(pair)} may not be active together")
            now = self.clock()
            session = Session(secrets.token_urlsafe(32), user_id, requested, now, now + self.session_ttl)
            self.sessions[session.id] = session
            return session

    def _live_session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise SessionExpired("no such session")
        if not session.live(self.clock()):
            del self.sessions[session_id]
            raise SessionExpired("session expired")
        return session

    def get_session(self, session_id: str) -> Session:
        with self._lock:
            return self._live_session(session_id)

    def revoke_session(self, session_id: str) -> None:
        with self._lock:
            self.sessions.pop(session_id, None)

    def activate_role(self, session_id: str, role_id: str) -> None:
        with self._lock:
            session = self._live_session(session_id)
            if role_id not in self.assigned_roles(session.user_id):
                raise RoleNotAssigned(f"{role_id!r} not assigned to {session.user_id!r}")
            pair = self._dsd_conflict(session.active_roles | {role_id})
            if pair:
                raise DsdViolation(f"roles {sorted(pair)} may not be active together")
            session.active_roles.add(role_id)

    def deactivate_role(self, session_id: str, role_id: str) -> None:
        with self._lock:
            self._live_session(session_id).active_roles.discard(role_id)

    def purge_expired_sessions(self) -> int:
        with self._lock:
            now = self.clock()
            dead = [sid for sid, s in self.sessions.items() if not s.live(now)]
            for sid in dead:
                del self.sessions[sid]
            return len(dead)

    # -- evaluation ---------------------------------------------------------
    def effective_permissions(self, user_id: str, active_roles: Iterable[str]) -> Set[Permission]:
        with self._lock:
            user = self._user(user_id)
            active = set(active_roles)
            missing = active - self.assigned_roles(user_id)
            if missing:
                raise RoleNotAssigned(f"roles not assigned: {sorted(missing)}")
            perms = set(user.direct_permissions)
            for role_id in active:
                for junior in self.juniors(role_id):
                    perms |= self.roles[junior].permissions
            return perms

    def check_access(self, session_id: str, action: Union[Action, str], resource: str) -> Decision:
        action = Action(action)
        with self._lock:
            try:
                session = self._live_session(session_id)
            except SessionExpired:
                return Decision(False, DenyReason.NO_SESSION)
            user = self.users.get(session.user_id)
            if user is None:
                return Decision(False, DenyReason.NO_SESSION)
            if any(p.matches(action, resource) for p in user.direct_permissions):
                return Decision(True, user_id=user.id)
            for role_id in session.active_roles:
                for junior in self.juniors(role_id):
                    if any(p.matches(action, resource) for p in self.roles[junior].permissions):
                        return Decision(True, user_id=user.id)
            return Decision(False, DenyReason.NO_PERMISSION, user.id)

    def quota_inputs(self, user_id: str) -> List[Tuple[QuotaPolicy, Fraction]]:
        """``(role quota, tier multiplier)`` for every assignment of the user."""
        with self._lock:
            self._user(user_id)
            return [
                (self.roles[a.role_id].default_quota, self.tiers[a.tier].quota_multiplier)
                for a in self.assignments.values()
                if a.user_id == user_id
            ]

    # -- persistence --------------------------------------------------------
    def to_dict(self) -> dict:
        with self._lock:
            return {
                "users": [
                    {
                        "id": u.id,
                        "display_name": u.display_name,
                        "credential": u.credential,
                        "direct_permissions": sorted(str(p) for p in u.direct_permissions),
                    }
                    for u in sorted(self.users.values(), key=lambda u: u.id)
                ],
                "roles": [
                    {
                        "id": r.id,
                        "name": r.name,
                        "max_members": r.max_members,
                        "quota": r.default_quota.to_dict(),
                        "permissions": sorted(str(p) for p in r.permissions),
                    }
                    for r in sorted(self.roles.values(), key=lambda r: r.id)
                ],
                "assignments": sorted(
                    ([a.user_id, a.role_id, a.tier] for a in self.assignments.values())
                ),
                "hierarchy": sorted([s, j] for s, j in self.edges),
                "ssd": sorted(sorted(p) for p in self.ssd_pairs),
                "dsd": sorted(sorted(p) for p in self.dsd_pairs),
                "tiers": {
                    t.name: str(t.quota_multiplier) for t in sorted(self.tiers.values(), key=lambda t: t.name)
                },
            }

    def load_dict(self, data: dict) -> None:
        """Replace all policy state with ``data``; sessions are discarded."""
        with self._lock:
            self.users = {
                u["id"]: User(
                    u["id"],
                    u.get("display_name", ""),
                    u["credential"],
                    {Permission.parse(p) for p in u.get("direct_permissions", [])},
                )
                for u in data.get("users", [])
            }
            self.roles = {
                r["id"]: Role(
                    r["id"],
                    r.get("name", r["id"]),
                    r.get("max_members"),
                    QuotaPolicy.from_dict(r.get("quota", {"base_limit": None})),
                    {Permission.parse(p) for p in r.get("permissions", [])},
                )
                for r in data.get("roles", [])
            }
            self.tiers = {
                name: MembershipTier(name, Fraction(mult)) for name, mult in data.get("tiers", {}).items()
            }
            self.tiers.setdefault(BASIC, MembershipTier(BASIC, Fraction(1)))
            self.assignments = {(u, r): Assignment(u, r, t) for u, r, t in data.get("assignments", [])}
            self.edges = {(s, j) for s, j in data.get("hierarchy", [])}
            self.ssd_pairs = {frozenset(p) for p in data.get("ssd", [])}
            self.dsd_pairs = {frozenset(p) for p in data.get("dsd", [])}
            self.sessions = {}
            self._changed()
