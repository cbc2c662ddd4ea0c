"""Policy snapshots and the append-only audit log.

Snapshot file: a JSON document (sorted keys) followed by one trailing line
``digest sha256:<hex>`` computed over every byte before that line. Saves go
to a temporary file that is then renamed over the target.

Audit log: one JSON object per line. A crash can leave a final partial line;
replay skips it with a warning and :class:`AuditLog` trims it on open.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Union

from .errors import AuditWriteFailed, CorruptSnapshot, MalformedAuditLine, UnsupportedVersion

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DIGEST_PREFIX = "digest sha256:"

PathLike = Union[str, Path]


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def encode_snapshot(state: dict) -> bytes:
    # deterministic: equal states encode to identical bytes
    doc = {"format_version": FORMAT_VERSION, "state": state}
    body = json.dumps(doc, sort_keys=True, indent=1).encode() + b"\n"
    return body + f"{DIGEST_PREFIX}{hashlib.sha256(body).hexdigest()}\n".encode()


def decode_snapshot(raw: bytes) -> dict:
    """Verify the digest and version, then return the ``state`` mapping."""
    body, sep, tail = raw.rstrip(b"\n").rpartition(b"\n")
    if not sep or not tail.startswith(DIGEST_PREFIX.encode()):
        raise CorruptSnapshot("missing digest line")
    body += b"\n"
    expected = tail[len(DIGEST_PREFIX):].decode(errors="replace")
    if hashlib.sha256(body).hexdigest() != expected:
        raise CorruptSnapshot("snapshot digest mismatch")
    try:
        doc = json.loads(body)
    except ValueError as exc:
        raise CorruptSnapshot(f"snapshot body is not valid JSON: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"snapshot format_version {version!r} (supported: {FORMAT_VERSION})")
    return doc["state"]


def save_snapshot(path: PathLike, state: dict, fsync: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode_snapshot(state))
        if fsync:
            fh.flush()
            os.fsync(fh.fileno())
    os.replace(tmp, path)
    if fsync:
        _fsync_dir(path.parent)
    return path


def load_snapshot(path: PathLike) -> dict:
    return decode_snapshot(Path(path).read_bytes())


@dataclass(frozen=True)
class AuditRecord:
    ts: float
    request_id: str
    user: Optional[str]  # None for anonymous / unauthenticated
    action: str
    resource: str
    decision: str  # Grant | Deny | Throttled
    reason: Optional[str] = None
    status: Optional[int] = None

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "AuditRecord":
        return cls(
            ts=float(data["ts"]),
            request_id=str(data["request_id"]),
            user=data.get("user"),
            action=str(data["action"]),
            resource=str(data["resource"]),
            decision=str(data["decision"]),
            reason=data.get("reason"),
            status=data.get("status"),
        )


def replay_audit(path: PathLike) -> Iterator[AuditRecord]:
    """Yield every record in order.

    An unparseable final line without a newline terminator is a torn tail:
    it is skipped with a warning. Any other bad line raises
    :class:`MalformedAuditLine` carrying its 1-based number.
    """
    path = Path(path)
    if not path.exists():
        return
    with open(path, "rb") as fh:
        lines = fh.read().split(b"\n")
    # split leaves a trailing b"" when the file ends with a newline
    last = len(lines) - 1
    for number, raw in enumerate(lines, start=1):
        if not raw:
            if number - 1 == last:
                break
            raise MalformedAuditLine(number)
        try:
            yield AuditRecord.from_dict(json.loads(raw))
        except (ValueError, KeyError, TypeError):
            if number - 1 == last:
                logger.warning("audit log %s: torn final line %d skipped", path, number)
                return
            raise MalformedAuditLine(number) from None


def count_torn_tail(path: PathLike) -> int:
    """1 if the log ends in a partial line, else 0."""
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        return 0
    with open(path, "rb") as fh:
        fh.seek(-1, os.SEEK_END)
        return 0 if fh.read(1) == b"\n" else 1


class AuditLog:
    """Serialized appender; timestamps never go backwards within the file."""

    def __init__(self, path: PathLike, clock: Callable[[], float] = time.time, fsync: bool = False) -> None:
        self.path = Path(path)
        self.clock = clock
        self.fsync = fsync
        self._lock = threading.Lock()
        self._last_ts = 0.0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._repair()
        self._fh = open(self.path, "ab")

    def _repair(self) -> None:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        if data and not data.endswith(b"\n"):
            keep = data.rfind(b"\n") + 1
            logger.warning("audit log %s: trimming %d-byte torn tail", self.path, len(data) - keep)
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)
            data = data[:keep]
        lines = data.splitlines()
        if lines:
            try:
                self._last_ts = float(json.loads(lines[-1])["ts"])
            except (ValueError, KeyError, TypeError):
                pass

    def append(self, **fields) -> AuditRecord:
        with self._lock:
            ts = max(self.clock(), self._last_ts)
            record = AuditRecord(ts=ts, **fields)
            try:
                self._fh.write(record.to_line().encode())
                self._fh.flush()
                if self.fsync:
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                raise AuditWriteFailed(str(exc)) from exc
            self._last_ts = ts
            return record

    def append_record(self, record: AuditRecord) -> AuditRecord:
        fields = asdict(record)
        fields.pop("ts")
        return self.append(**fields)

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def records(self) -> List[AuditRecord]:
        return list(replay_audit(self.path))
