"""Per-user transaction quotas over fixed (tumbling) time windows.

A user's effective limit is derived from the quota policies of the roles they
are assigned to, each scaled by the membership tier of that assignment:

    limit = max over assignments of ceil(base_limit * multiplier)

A per-user override replaces the role-derived base before the multiplier is
applied. Windows are aligned to epoch multiples of ``window_seconds``.
"""

from __future__ import annotations

import math
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

from .errors import InvalidPolicy, NoSuchUser

Clock = Callable[[], float]
Limit = Optional[int]  # None means unbounded


@dataclass(frozen=True)
class QuotaPolicy:
    base_limit: Limit  # transactions per window; None is unbounded
    window_seconds: int = 60

    def __post_init__(self) -> None:
        if self.base_limit is not None and (not isinstance(self.base_limit, int) or self.base_limit < 0):
            raise InvalidPolicy("base_limit must be a non-negative integer or unbounded")
        if not isinstance(self.window_seconds, int) or self.window_seconds < 1:
            raise InvalidPolicy("window_seconds must be a positive integer")

    def to_dict(self) -> dict:
        return {"base_limit": self.base_limit, "window_seconds": self.window_seconds}

    @classmethod
    def from_dict(cls, data: dict) -> "QuotaPolicy":
        return cls(data.get("base_limit"), int(data.get("window_seconds", 60)))


UNBOUNDED = QuotaPolicy(None, 60)


@dataclass(frozen=True)
class Allowed:
    remaining: Limit  # None when the limit is unbounded
    limit: Limit
    window_start: int

    allowed = True


@dataclass(frozen=True)
class Throttled:
    retry_after_seconds: int
    limit: Limit
    window_start: int

    allowed = False


QuotaDecision = Union[Allowed, Throttled]


@dataclass(frozen=True)
class Usage:
    count: int
    limit: Limit
    window_start: int
    window_seconds: int

    @property
    def remaining(self) -> Limit:
        return None if self.limit is None else max(self.limit - self.count, 0)


def scaled_limit(policy: QuotaPolicy, multiplier: Fraction) -> Limit:
    if policy.base_limit is None:
        return None
    return math.ceil(Fraction(policy.base_limit) * Fraction(multiplier))


def effective_quota(
    assignments: Sequence[Tuple[QuotaPolicy, Fraction]],
    override: Optional[QuotaPolicy] = None,
    default_window: int = 60,
) -> Tuple[Limit, int]:
    """Return ``(limit, window_seconds)`` for a user's assignment list.

    With an override, the override's base and window replace every role
    policy while each assignment's multiplier still applies. The winning
    window is the one of the assignment yielding the largest limit, ties
    going to the shortest window.
    """
    if override is not None:
        if not assignments:
            return override.base_limit, override.window_seconds
        assignments = [(override, mult) for _, mult in assignments]
    if not assignments:
        return 0, default_window

    best: Optional[Tuple[Limit, int]] = None
    for policy, mult in assignments:
        limit = scaled_limit(policy, mult)
        if limit is None:
            return None, policy.window_seconds
        if best is None or limit > best[0] or (limit == best[0] and policy.window_seconds < best[1]):
            best = (limit, policy.window_seconds)
    assert best is not None
    return best


def window_start_for(now: float, window_seconds: int) -> int:
    return int(math.floor(now / window_seconds)) * window_seconds


class _Counter:
    __slots__ = ("lock", "window_start", "window_seconds", "count")

    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.window_start: Optional[int] = None
        self.window_seconds = 0
        self.count = 0


class Admission:
    """Outcome of :meth:`QuotaLedger.admit`; call :meth:`consume` once the
    guarded operation has executed successfully."""

    def __init__(self, counter: _Counter, decision: QuotaDecision) -> None:
        self._counter = counter
        self.decision = decision
        self.consumed = False

    @property
    def allowed(self) -> bool:
        return self.decision.allowed

    def consume(self) -> Allowed:
        if not self.decision.allowed:
            raise RuntimeError("cannot consume a throttled admission")
        if not self.consumed:
            self._counter.count += 1
            self.consumed = True
            limit = self.decision.limit
            remaining = None if limit is None else limit - self._counter.count
            self.decision = Allowed(remaining, limit, self.decision.window_start)
        return self.decision


class QuotaLedger:
    """Fixed-window transaction counters, one per user.

    ``limit_source(user_id)`` returns the user's ``(QuotaPolicy, multiplier)``
    pairs and raises :class:`NoSuchUser` for unknown users. Counters are
    volatile by design; a restart starts every user in a fresh window.
    """

    def __init__(
        self,
        limit_source: Callable[[str], Sequence[Tuple[QuotaPolicy, Fraction]]],
        clock: Clock = time.time,
        default_window: int = 60,
    ) -> None:
        self._limit_source = limit_source
        self.clock = clock
        self.default_window = default_window
        self._overrides: dict[str, QuotaPolicy] = {}
        self._counters: dict[str, _Counter] = {}
        self._meta = threading.Lock()

    # -- limits -------------------------------------------------------------
    def effective_limit(self, user_id: str) -> Limit:
        return self.effective_quota(user_id)[0]

    def effective_quota(self, user_id: str) -> Tuple[Limit, int]:
        assignments = self._limit_source(user_id)
        return effective_quota(assignments, self._overrides.get(user_id), self.default_window)

    def set_user_quota_override(self, user_id: str, policy: Optional[QuotaPolicy]) -> None:
        self._limit_source(user_id)  # existence check
        with self._meta:
            if policy is None:
                self._overrides.pop(user_id, None)
            else:
                self._overrides[user_id] = policy

    def override_for(self, user_id: str) -> Optional[QuotaPolicy]:
        return self._overrides.get(user_id)

    def forget_user(self, user_id: str) -> None:
        with self._meta:
            self._overrides.pop(user_id, None)
            self._counters.pop(user_id, None)

    # -- counting -----------------------------------------------------------
    def _counter(self, user_id: str) -> _Counter:
        with self._meta:
            counter = self._counters.get(user_id)
            if counter is None:
                counter = self._counters[user_id] = _Counter()
            return counter

    @staticmethod
    def _roll(counter: _Counter, now: float, window: int) -> int:
        start = window_start_for(now, window)
        if counter.window_start != start or counter.window_seconds != window:
            counter.window_start = start
            counter.window_seconds = window
            counter.count = 0
        return start

    def _decide(self, counter: _Counter, limit: Limit, window: int, now: float) -> QuotaDecision:
        start = self._roll(counter, now, window)
        if limit is None:
            return Allowed(None, None, start)
        if counter.count < limit:
            return Allowed(limit - counter.count - 1, limit, start)
        return Throttled(max(math.ceil(start + window - now), 1), limit, start)

    @contextmanager
    def admit(self, user_id: str, now: Optional[float] = None) -> Iterator[Admission]:
        """Hold the user's counter while the caller executes its operation.

        The increment happens only through :meth:`Admission.consume`, so an
        operation that fails leaves the counter untouched, and concurrent
        admissions for the same user cannot jointly exceed the limit.
        """
        limit, window = self.effective_quota(user_id)
        counter = self._counter(user_id)
        with counter.lock:
            when = self.clock() if now is None else now
            yield Admission(counter, self._decide(counter, limit, window, when))

    def record_and_check(self, user_id: str, now: Optional[float] = None) -> QuotaDecision:
        with self.admit(user_id, now) as admission:
            if admission.allowed:
                return admission.consume()
            return admission.decision

    def usage(self, user_id: str, now: Optional[float] = None) -> Usage:
        limit, window = self.effective_quota(user_id)
        when = self.clock() if now is None else now
        start = window_start_for(when, window)
        with self._meta:
            counter = self._counters.get(user_id)
        count = 0
        if counter is not None and counter.window_start == start and counter.window_seconds == window:
            count = counter.count
        return Usage(count, limit, start, window)

    # -- persistence --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "default_window": self.default_window,
            "overrides": {uid: p.to_dict() for uid, p in sorted(self._overrides.items())},
        }

    def load_dict(self, data: dict) -> None:
        with self._meta:
            self._overrides = {
                uid: QuotaPolicy.from_dict(p) for uid, p in data.get("overrides", {}).items()
            }


__all__ = [
    "Admission",
    "Allowed",
    "NoSuchUser",
    "QuotaDecision",
    "QuotaLedger",
    "QuotaPolicy",
    "Throttled",
    "UNBOUNDED",
    "Usage",
    "effective_quota",
    "scaled_limit",
    "window_start_for",
]
