"""Blob namespace: storage accounts, containers, block blobs and page blobs.

On-disk layout under the data directory::

    <account>/account                     account manifest (size cap)
    <account>/<container>/container       container manifest
    <account>/<container>/blobs/<h>/      one directory per blob, h = sha256(blob name)
        manifest                          versioned text manifest, replaced atomically
        gen-<token>/<sha256(block id)>    committed block payloads (block blobs)
        stage-<token>/<sha256(block id)>  staged, uncommitted payloads (block blobs)
        pages/<index>                     one 512-byte file per written page (page blobs)

A block-blob manifest names the committed generation directory and the
staging directory it belongs to; anything else found in the blob directory is
debris from an interrupted write and is removed at startup. Manifest grammar
is documented in docs/formats.md.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import secrets
import shutil
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

from .errors import (
    AccountCapExceeded,
    BlobTooLarge,
    BlockTooLarge,
    ContainerNotEmpty,
    DuplicateAccount,
    DuplicateContainer,
    InvalidBlockId,
    InvalidName,
    MissingBlock,
    NoSuchAccount,
    NoSuchBlob,
    NoSuchContainer,
    NotAligned,
    RangeOutOfBounds,
    SizeNotAligned,
    WrongBlobType,
)

logger = logging.getLogger(__name__)

KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB
TiB = 1024 * GiB
PAGE_SIZE = 512
MANIFEST_HEADER = "blobguard-blob 1"
ACCOUNT_HEADER = "blobguard-account 1"
CONTAINER_HEADER = "blobguard-container 1"

_ACCOUNT_RE = re.compile(r"^[a-z0-9]{3,24}$")
_CONTAINER_RE = re.compile(r"^[a-z0-9](?:[a-z0-9-]{1,61})[a-z0-9]$")
_CONTROL_RE = re.compile(r"[\x00-\x1f\x7f]")


@dataclass(frozen=True)
class StoreLimits:
    block_blob_cap: int
    page_blob_cap: int
    max_block_size: int
    account_default_cap: int


# Service limits of the hosted blob service; shipped as the production defaults.
PRODUCTION_LIMITS = StoreLimits(
    block_blob_cap=200 * GiB,
    page_blob_cap=1 * TiB,
    max_block_size=4 * MiB,
    account_default_cap=100 * TiB,
)
# Desk-scale profile used by the test suite.
TEST_LIMITS = StoreLimits(
    block_blob_cap=64 * MiB,
    page_blob_cap=64 * MiB,
    max_block_size=4 * MiB,
    account_default_cap=256 * MiB,
)


def validate_account_name(name: str) -> None:
    if not isinstance(name, str) or not _ACCOUNT_RE.match(name):
        raise InvalidName(f"bad account name {name!r}: 3-24 lowercase letters and digits")


def validate_container_name(name: str) -> None:
    if not isinstance(name, str) or not _CONTAINER_RE.match(name):
        raise InvalidName(
            f"bad container name {name!r}: 3-63 lowercase letters, digits and hyphens, "
            "starting and ending with a letter or digit"
        )


def validate_blob_name(name: str) -> None:
    if not isinstance(name, str) or not 1 <= len(name) <= 1024 or _CONTROL_RE.search(name):
        raise InvalidName("blob names are 1-1024 characters without control characters")


def validate_block_id(block_id: bytes) -> bytes:
    if isinstance(block_id, str):
        block_id = block_id.encode()
    if not 1 <= len(block_id) <= 64:
        raise InvalidBlockId("block ids are 1-64 bytes")
    return block_id


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _digest_name(raw: Union[str, bytes]) -> str:
    return hashlib.sha256(raw.encode() if isinstance(raw, str) else raw).hexdigest()


def _new_token() -> str:
    return secrets.token_hex(8)


@dataclass
class BlobInfo:
    name: str
    blob_type: str  # "block" | "page"
    size: int
    etag: str
    content_hash: Optional[str] = None  # committed block blobs only


@dataclass
class _BlockBlob:
    name: str
    path: Path
    committed: bool = False
    blocks: List[Tuple[bytes, int]] = field(default_factory=list)  # committed (id, size) in order
    size: int = 0
    content_hash: str = ""
    etag: str = ""
    generation: str = ""
    staging: str = ""
    staged: Dict[bytes, int] = field(default_factory=dict)  # id -> size
    deleted: bool = False
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    blob_type = "block"

    @property
    def footprint(self) -> int:
        return (self.size if self.committed else 0) + sum(self.staged.values())


@dataclass
class _PageBlob:
    name: str
    path: Path
    declared_size: int
    etag: str
    pages: set = field(default_factory=set)
    deleted: bool = False
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    blob_type = "page"
    committed = True

    @property
    def size(self) -> int:
        return self.declared_size

    @property
    def footprint(self) -> int:
        return self.declared_size


_Blob = Union[_BlockBlob, _PageBlob]


@dataclass
class _Container:
    name: str
    path: Path
    created_at: float
    blobs: Dict[str, _Blob] = field(default_factory=dict)


@dataclass
class _Account:
    name: str
    path: Path
    size_cap_bytes: int
    used_bytes: int = 0
    containers: Dict[str, _Container] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


@dataclass(frozen=True)
class AccountInfo:
    name: str
    size_cap_bytes: int
    used_bytes: int


class BlobStore:
    """Accounts -> containers -> blobs, persisted under ``root``.

    Mutations of one blob are serialized by that blob's lock; reads take the
    same lock so they never observe a half-written generation. Account usage
    is reserved under the account lock before any bytes are written.

    Lock order is namespace -> blob -> account. A blob object removed from
    the namespace is flagged ``deleted`` under its own lock, so a writer that
    raced the removal notices it without touching the namespace lock.
    """

    def __init__(self, root: Union[str, Path], limits: StoreLimits = PRODUCTION_LIMITS, fsync: bool = True) -> None:
        self.root = Path(root)
        self.limits = limits
        self.fsync = fsync
        self.mutations = 0  # successful mutating operations since start
        self._ns = threading.RLock()
        self._accounts: Dict[str, _Account] = {}
        self.root.mkdir(parents=True, exist_ok=True)
        self._load()

    # -- low-level file helpers --------------------------------------------
    def _write_atomic(self, path: Path, data: bytes) -> None:
        tmp = path.with_name(path.name + f".{_new_token()}.tmp")
        with open(tmp, "wb") as fh:
            fh.write(data)
            if self.fsync:
                fh.flush()
                os.fsync(fh.fileno())
        os.replace(tmp, path)

    def _bump(self) -> None:
        self.mutations += 1

    # -- loading ------------------------------------------------------------
    def _load(self) -> None:
        for acct_dir in sorted(p for p in self.root.iterdir() if p.is_dir()):
            manifest = acct_dir / "account"
            if not manifest.exists():
                continue
            fields = _parse_kv(manifest.read_text(), ACCOUNT_HEADER)
            account = _Account(acct_dir.name, acct_dir, int(fields["cap"]))
            for cont_dir in sorted(p for p in acct_dir.iterdir() if p.is_dir()):
                cmanifest = cont_dir / "container"
                if not cmanifest.exists():
                    continue
                cfields = _parse_kv(cmanifest.read_text(), CONTAINER_HEADER)
                container = _Container(cont_dir.name, cont_dir, float(cfields.get("created", 0)))
                blobs_dir = cont_dir / "blobs"
                if blobs_dir.exists():
                    for blob_dir in blobs_dir.iterdir():
                        blob = self._load_blob(blob_dir)
                        if blob is not None:
                            container.blobs[blob.name] = blob
                            account.used_bytes += blob.footprint
                account.containers[container.name] = container
            self._accounts[account.name] = account
            _remove_tmp(acct_dir)

    def _load_blob(self, blob_dir: Path) -> Optional[_Blob]:
        manifest = blob_dir / "manifest"
        if not manifest.exists():
            shutil.rmtree(blob_dir, ignore_errors=True)
            return None
        lines = manifest.read_text().splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise ValueError(f"unrecognized blob manifest {manifest}")
        scalars: Dict[str, str] = {}
        blocks: List[Tuple[bytes, int]] = []
        staged_ids: List[bytes] = []
        for line in lines[1:]:
            key, _, value = line.partition(": ")
            if key == "block":
                hex_id, size = value.split()
                blocks.append((bytes.fromhex(hex_id), int(size)))
            elif key == "staged":
                staged_ids.append(bytes.fromhex(value))
            else:
                scalars[key] = value
        name = json.loads(scalars["name"])
        if scalars["type"] == "page":
            pages_dir = blob_dir / "pages"
            pages = set()
            if pages_dir.exists():
                for p in pages_dir.iterdir():
                    if p.name.isdigit():
                        pages.add(int(p.name))
                    else:
                        p.unlink()
            for p in blob_dir.iterdir():
                if p.name.endswith(".tmp"):
                    p.unlink()
            return _PageBlob(name, blob_dir, int(scalars["size"]), scalars["etag"], pages)

        blob = _BlockBlob(
            name,
            blob_dir,
            committed=scalars.get("committed") == "true",
            blocks=blocks,
            size=int(scalars.get("size", 0)),
            content_hash=scalars.get("hash", ""),
            etag=scalars.get("etag", ""),
            generation=scalars.get("generation", ""),
            staging=scalars.get("staging", ""),
        )
        stage_dir = blob_dir / f"stage-{blob.staging}"
        for block_id in staged_ids:
            path = stage_dir / _digest_name(block_id)
            if path.exists():
                blob.staged[block_id] = path.stat().st_size
        keep = {"manifest", f"gen-{blob.generation}", f"stage-{blob.staging}"}
        for p in blob_dir.iterdir():
            if p.name not in keep:
                shutil.rmtree(p) if p.is_dir() else p.unlink()
        if stage_dir.exists():
            wanted = {_digest_name(b) for b in blob.staged}
            for p in stage_dir.iterdir():
                if p.name not in wanted:
                    p.unlink()
        return blob

    # -- accounts -----------------------------------------------------------
    def create_account(self, name: str, size_cap_bytes: Optional[int] = None) -> AccountInfo:
        validate_account_name(name)
        cap = self.limits.account_default_cap if size_cap_bytes is None else size_cap_bytes
        if not isinstance(cap, int) or cap < 1:
            raise InvalidName("size cap must be a positive integer")
        with self._ns:
            if name in self._accounts:
                raise DuplicateAccount(f"account {name!r} exists")
            path = self.root / name
            path.mkdir(exist_ok=True)
            self._write_atomic(path / "account", f"{ACCOUNT_HEADER}\ncap: {cap}\n".encode())
            self._accounts[name] = _Account(name, path, cap)
            self._bump()
            return AccountInfo(name, cap, 0)

    def set_account_cap(self, name: str, size_cap_bytes: int) -> None:
        with self._ns:
            account = self._account(name)
            self._write_atomic(account.path / "account", f"{ACCOUNT_HEADER}\ncap: {size_cap_bytes}\n".encode())
            account.size_cap_bytes = size_cap_bytes

    def _account(self, name: str) -> _Account:
        try:
            return self._accounts[name]
        except KeyError:
            raise NoSuchAccount(f"no account {name!r}") from None

    def accounts(self) -> List[AccountInfo]:
        with self._ns:
            return [AccountInfo(a.name, a.size_cap_bytes, a.used_bytes) for a in sorted(self._accounts.values(), key=lambda a: a.name)]

    def account_usage(self, account: str) -> Tuple[int, int]:
        acct = self._account(account)
        return acct.used_bytes, acct.size_cap_bytes

    def _reserve(self, account: _Account, delta: int) -> None:
        with account.lock:
            if delta > 0 and account.used_bytes + delta > account.size_cap_bytes:
                raise AccountCapExceeded(
                    f"account {account.name!r} would hold {account.used_bytes + delta} of "
                    f"{account.size_cap_bytes} bytes"
                )
            account.used_bytes += delta

    # -- containers ---------------------------------------------------------
    def create_container(self, account: str, name: str) -> None:
        validate_container_name(name)
        with self._ns:
            acct = self._account(account)
            if name in acct.containers:
                raise DuplicateContainer(f"container {name!r} exists")
            path = acct.path / name
            (path / "blobs").mkdir(parents=True, exist_ok=True)
            now = time.time()
            self._write_atomic(path / "container", f"{CONTAINER_HEADER}\ncreated: {now}\n".encode())
            acct.containers[name] = _Container(name, path, now)
            self._bump()

    def delete_container(self, account: str, name: str, force: bool = False) -> None:
        with self._ns:
            acct = self._account(account)
            container = self._container_in(acct, name)
            if container.blobs and not force:
                raise ContainerNotEmpty(f"container {name!r} holds {len(container.blobs)} blobs")
            freed = 0
            for blob in list(container.blobs.values()):
                with blob.lock:
                    blob.deleted = True
                    freed += blob.footprint
            # the manifest goes first so a crash mid-removal leaves no half container
            (container.path / "container").unlink()
            shutil.rmtree(container.path, ignore_errors=True)
            del acct.containers[name]
            self._reserve(acct, -freed)
            self._bump()

    def list_containers(self, account: str) -> List[str]:
        with self._ns:
            return sorted(self._account(account).containers)

    def _container_in(self, acct: _Account, name: str) -> _Container:
        try:
            return acct.containers[name]
        except KeyError:
            raise NoSuchContainer(f"no container {name!r} in {acct.name!r}") from None

    def _locate(self, account: str, container: str) -> Tuple[_Account, _Container]:
        with self._ns:
            acct = self._account(account)
            return acct, self._container_in(acct, container)

    def _blob(self, account: str, container: str, blob: str) -> Tuple[_Account, _Container, _Blob]:
        with self._ns:
            acct, cont = self._locate(account, container)
            try:
                return acct, cont, cont.blobs[blob]
            except KeyError:
                raise NoSuchBlob(f"no blob {blob!r}") from None

    def _block_blob_for_write(self, account: str, container: str, blob: str) -> Tuple[_Account, _BlockBlob]:
        validate_blob_name(blob)
        with self._ns:
            acct, cont = self._locate(account, container)
            existing = cont.blobs.get(blob)
            if existing is None:
                existing = _BlockBlob(blob, cont.path / "blobs" / _digest_name(blob), staging=_new_token())
                cont.blobs[blob] = existing
            elif not isinstance(existing, _BlockBlob):
                raise WrongBlobType(f"{blob!r} is a page blob")
            return acct, existing

    @contextmanager
    def _writing(self, account: str, container: str, blob: str) -> Iterator[Tuple[_Account, _BlockBlob]]:
        """Lock the live block blob named ``blob``, creating an empty one if needed."""
        while True:
            acct, bb = self._block_blob_for_write(account, container, blob)
            bb.lock.acquire()
            if not bb.deleted:
                break
            bb.lock.release()
        try:
            yield acct, bb
        finally:
            empty = not bb.committed and not bb.staged and not (bb.path / "manifest").exists()
            bb.lock.release()
            if empty:
                self._drop_if_empty(account, container, bb)

    def _drop_if_empty(self, account: str, container: str, blob: _BlockBlob) -> None:
        with self._ns:
            cont = self._accounts[account].containers.get(container)
            with blob.lock:
                if blob.committed or blob.staged or (blob.path / "manifest").exists():
                    return
                if cont is not None and cont.blobs.get(blob.name) is blob:
                    del cont.blobs[blob.name]
                blob.deleted = True
            shutil.rmtree(blob.path, ignore_errors=True)

    def _live_page_blob(self, account: str, container: str, blob: str) -> _PageBlob:
        pb = self._page_blob(account, container, blob)
        pb.lock.acquire()
        if pb.deleted:
            pb.lock.release()
            raise NoSuchBlob(f"no blob {blob!r}")
        return pb

    # -- block blobs --------------------------------------------------------
    def _write_block_manifest(self, blob: _BlockBlob) -> None:
        lines = [
            MANIFEST_HEADER,
            "type: block",
            f"name: {json.dumps(blob.name)}",
            f"committed: {'true' if blob.committed else 'false'}",
            f"size: {blob.size}",
            f"hash: {blob.content_hash}",
            f"etag: {blob.etag}",
            f"generation: {blob.generation}",
            f"staging: {blob.staging}",
        ]
        lines += [f"block: {bid.hex()} {size}" for bid, size in blob.blocks]
        lines += [f"staged: {bid.hex()}" for bid in blob.staged]
        self._write_atomic(blob.path / "manifest", ("\n".join(lines) + "\n").encode())

    def put_block(self, account: str, container: str, blob: str, block_id: Union[bytes, str], data: bytes) -> None:
        block_id = validate_block_id(block_id)
        if len(data) > self.limits.max_block_size:
            raise BlockTooLarge(f"block of {len(data)} bytes exceeds {self.limits.max_block_size}")
        with self._writing(account, container, blob) as (acct, bb):
            delta = len(data) - bb.staged.get(block_id, 0)
            self._reserve(acct, delta)
            try:
                stage_dir = bb.path / f"stage-{bb.staging}"
                stage_dir.mkdir(parents=True, exist_ok=True)
                self._write_atomic(stage_dir / _digest_name(block_id), data)
                previous = bb.staged.get(block_id)
                bb.staged[block_id] = len(data)
                try:
                    self._write_block_manifest(bb)
                except BaseException:
                    if previous is None:
                        bb.staged.pop(block_id, None)
                    else:
                        bb.staged[block_id] = previous
                    raise
            except BaseException:
                self._reserve(acct, -delta)
                raise
        self._bump()

    def _block_source(self, bb: _BlockBlob, block_id: bytes) -> Tuple[Path, int]:
        if block_id in bb.staged:
            return bb.path / f"stage-{bb.staging}" / _digest_name(block_id), bb.staged[block_id]
        for bid, size in bb.blocks:
            if bid == block_id and bb.committed:
                return bb.path / f"gen-{bb.generation}" / _digest_name(block_id), size
        raise MissingBlock(f"block {block_id!r} is neither staged nor committed", block_id=block_id.hex())

    def commit_block_list(
        self, account: str, container: str, blob: str, block_ids: Iterable[Union[bytes, str]]
    ) -> Tuple[str, str]:
        ids = [validate_block_id(b) for b in block_ids]
        with self._writing(account, container, blob) as (acct, bb):
            sources = {bid: self._block_source(bb, bid) for bid in dict.fromkeys(ids)}
            new_size = sum(sources[bid][1] for bid in ids)
            if new_size > self.limits.block_blob_cap:
                raise BlobTooLarge(f"blob of {new_size} bytes exceeds {self.limits.block_blob_cap}")
            hasher = hashlib.sha256()
            for bid in ids:
                hasher.update(sources[bid][0].read_bytes())
            return self._install_generation(
                acct, bb, [(bid, sources[bid][1]) for bid in ids], new_size, hasher.hexdigest(),
                {bid: src for bid, (src, _) in sources.items()},
            )

    def put_blob(self, account: str, container: str, blob: str, data: bytes) -> Tuple[str, str]:
        """Single-shot upload bounded by the block-blob cap (not the block size)."""
        if len(data) > self.limits.block_blob_cap:
            raise BlobTooLarge(f"blob of {len(data)} bytes exceeds {self.limits.block_blob_cap}")
        with self._writing(account, container, blob) as (acct, bb):
            block_id = b"\x00single"
            return self._install_generation(
                acct, bb, [(block_id, len(data))] if data else [], len(data), content_digest(data),
                {block_id: data} if data else {},
            )

    def _install_generation(
        self,
        acct: _Account,
        bb: _BlockBlob,
        blocks: List[Tuple[bytes, int]],
        new_size: int,
        digest: str,
        payloads: Dict[bytes, Union[Path, bytes]],
    ) -> Tuple[str, str]:
        delta = new_size - bb.footprint
        self._reserve(acct, delta)
        old_gen, old_stage = bb.generation, bb.staging
        old_state = (bb.committed, bb.blocks, bb.size, bb.content_hash, bb.etag, dict(bb.staged))
        gen, stage = _new_token(), _new_token()
        gen_dir = bb.path / f"gen-{gen}"
        try:
            gen_dir.mkdir(parents=True)
            for bid, payload in payloads.items():
                dest = gen_dir / _digest_name(bid)
                if isinstance(payload, bytes):
                    self._write_atomic(dest, payload)
                else:
                    try:
                        os.link(payload, dest)
                    except OSError:
                        shutil.copyfile(payload, dest)
            bb.committed, bb.blocks, bb.size, bb.content_hash = True, blocks, new_size, digest
            bb.etag, bb.generation, bb.staging, bb.staged = _new_token(), gen, stage, {}
            self._write_block_manifest(bb)
        except BaseException:
            bb.committed, bb.blocks, bb.size, bb.content_hash, bb.etag, bb.staged = old_state
            bb.generation, bb.staging = old_gen, old_stage
            shutil.rmtree(gen_dir, ignore_errors=True)
            self._reserve(acct, -delta)
            raise
        shutil.rmtree(bb.path / f"gen-{old_gen}", ignore_errors=True)
        shutil.rmtree(bb.path / f"stage-{old_stage}", ignore_errors=True)
        self._bump()
        return bb.etag, bb.content_hash

    def get_block_list(self, account: str, container: str, blob: str) -> Dict[str, List[Tuple[str, int]]]:
        _, _, b = self._blob(account, container, blob)
        if not isinstance(b, _BlockBlob):
            raise WrongBlobType(f"{blob!r} is a page blob")
        with b.lock:
            if b.deleted:
                raise NoSuchBlob(f"no blob {blob!r}")
            return {
                "committed": [(bid.hex(), size) for bid, size in b.blocks] if b.committed else [],
                "uncommitted": [(bid.hex(), size) for bid, size in b.staged.items()],
            }

    # -- page blobs ---------------------------------------------------------
    def _write_page_manifest(self, pb: _PageBlob) -> None:
        text = f"{MANIFEST_HEADER}\ntype: page\nname: {json.dumps(pb.name)}\nsize: {pb.declared_size}\netag: {pb.etag}\n"
        self._write_atomic(pb.path / "manifest", text.encode())

    def create_page_blob(self, account: str, container: str, blob: str, declared_size: int) -> str:
        validate_blob_name(blob)
        if declared_size < 0 or declared_size % PAGE_SIZE:
            raise SizeNotAligned(f"page blob size {declared_size} is not a multiple of {PAGE_SIZE}")
        if declared_size > self.limits.page_blob_cap:
            raise BlobTooLarge(f"page blob of {declared_size} bytes exceeds {self.limits.page_blob_cap}")
        with self._ns:
            acct, cont = self._locate(account, container)
            existing = cont.blobs.get(blob)
            if isinstance(existing, _BlockBlob):
                raise WrongBlobType(f"{blob!r} is a block blob")
            path = cont.path / "blobs" / _digest_name(blob)
            freed = existing.footprint if existing is not None else 0
            self._reserve(acct, declared_size - freed)
            pb = _PageBlob(blob, path, declared_size, _new_token())
            try:
                if existing is not None:
                    with existing.lock:
                        existing.deleted = True
                        shutil.rmtree(path / "pages", ignore_errors=True)
                path.mkdir(parents=True, exist_ok=True)
                self._write_page_manifest(pb)
            except BaseException:
                self._reserve(acct, freed - declared_size)
                raise
            cont.blobs[blob] = pb
        self._bump()
        return pb.etag

    def _page_blob(self, account: str, container: str, blob: str) -> _PageBlob:
        _, _, b = self._blob(account, container, blob)
        if not isinstance(b, _PageBlob):
            raise WrongBlobType(f"{blob!r} is not a page blob")
        return b

    @staticmethod
    def _check_page_range(pb: _PageBlob, offset: int, length: int) -> None:
        if offset % PAGE_SIZE or length % PAGE_SIZE:
            raise NotAligned(f"offset {offset} and length {length} must be multiples of {PAGE_SIZE}")
        if offset < 0 or length < 0 or offset + length > pb.declared_size:
            raise RangeOutOfBounds(f"[{offset}, {offset + length}) outside {pb.declared_size}")

    def put_pages(self, account: str, container: str, blob: str, offset: int, data: bytes) -> str:
        pb = self._live_page_blob(account, container, blob)
        try:
            self._check_page_range(pb, offset, len(data))
            pages_dir = pb.path / "pages"
            pages_dir.mkdir(exist_ok=True)
            first = offset // PAGE_SIZE
            for i in range(len(data) // PAGE_SIZE):
                self._write_atomic(pages_dir / str(first + i), data[i * PAGE_SIZE:(i + 1) * PAGE_SIZE])
                pb.pages.add(first + i)
            pb.etag = _new_token()
            self._write_page_manifest(pb)
        finally:
            pb.lock.release()
        self._bump()
        return pb.etag

    def clear_pages(self, account: str, container: str, blob: str, offset: int, length: int) -> str:
        pb = self._live_page_blob(account, container, blob)
        try:
            self._check_page_range(pb, offset, length)
            first = offset // PAGE_SIZE
            for index in range(first, first + length // PAGE_SIZE):
                if index in pb.pages:
                    (pb.path / "pages" / str(index)).unlink()
                    pb.pages.discard(index)
            pb.etag = _new_token()
            self._write_page_manifest(pb)
        finally:
            pb.lock.release()
        self._bump()
        return pb.etag

    def get_page_ranges(self, account: str, container: str, blob: str) -> List[Tuple[int, int]]:
        pb = self._page_blob(account, container, blob)
        with pb.lock:
            if pb.deleted:
                raise NoSuchBlob(f"no blob {blob!r}")
            ranges: List[Tuple[int, int]] = []
            for index in sorted(pb.pages):
                start = index * PAGE_SIZE
                if ranges and ranges[-1][1] == start:
                    ranges[-1] = (ranges[-1][0], start + PAGE_SIZE)
                else:
                    ranges.append((start, start + PAGE_SIZE))
            return ranges

    # -- reads --------------------------------------------------------------
    @staticmethod
    def _info(b: _Blob) -> BlobInfo:
        if isinstance(b, _PageBlob):
            return BlobInfo(b.name, "page", b.declared_size, b.etag)
        return BlobInfo(b.name, "block", b.size, b.etag, b.content_hash)

    def get_properties(self, account: str, container: str, blob: str) -> BlobInfo:
        _, _, b = self._blob(account, container, blob)
        with b.lock:
            if b.deleted or not b.committed:
                raise NoSuchBlob(f"blob {blob!r} has no committed content")
            return self._info(b)

    def read_blob(
        self, account: str, container: str, blob: str, byte_range: Optional[Tuple[int, int]] = None
    ) -> Tuple[bytes, BlobInfo]:
        _, _, b = self._blob(account, container, blob)
        with b.lock:
            if b.deleted or not b.committed:
                raise NoSuchBlob(f"blob {blob!r} has no committed content")
            size = b.size
            start, end = (0, size) if byte_range is None else byte_range
            if not 0 <= start <= end <= size:
                raise RangeOutOfBounds(f"range [{start}, {end}) outside blob of {size} bytes")
            if isinstance(b, _PageBlob):
                data = self._read_pages(b, start, end)
            else:
                data = self._read_blocks(b, start, end)
            return data, self._info(b)

    def get_blob(
        self, account: str, container: str, blob: str, byte_range: Optional[Tuple[int, int]] = None
    ) -> bytes:
        return self.read_blob(account, container, blob, byte_range)[0]

    def _read_blocks(self, bb: _BlockBlob, start: int, end: int) -> bytes:
        out = bytearray()
        pos = 0
        gen_dir = bb.path / f"gen-{bb.generation}"
        for bid, size in bb.blocks:
            block_end = pos + size
            if block_end > start and pos < end:
                lo, hi = max(start, pos) - pos, min(end, block_end) - pos
                with open(gen_dir / _digest_name(bid), "rb") as fh:
                    fh.seek(lo)
                    out += fh.read(hi - lo)
            pos = block_end
            if pos >= end:
                break
        return bytes(out)

    def _read_pages(self, pb: _PageBlob, start: int, end: int) -> bytes:
        out = bytearray(end - start)
        if start == end:
            return bytes(out)
        for index in range(start // PAGE_SIZE, (end - 1) // PAGE_SIZE + 1):
            if index not in pb.pages:
                continue
            page = (pb.path / "pages" / str(index)).read_bytes()
            page_start = index * PAGE_SIZE
            lo, hi = max(start, page_start), min(end, page_start + PAGE_SIZE)
            out[lo - start:hi - start] = page[lo - page_start:hi - page_start]
        return bytes(out)

    def verify_blob(self, account: str, container: str, blob: str) -> bool:
        """Recompute a committed block blob's digest from disk."""
        data, info = self.read_blob(account, container, blob)
        return info.content_hash is None or content_digest(data) == info.content_hash

    # -- delete / list ------------------------------------------------------
    def delete_blob(self, account: str, container: str, blob: str) -> None:
        with self._ns:
            acct, cont, b = self._blob(account, container, blob)
            with b.lock:
                b.deleted = True
                (b.path / "manifest").unlink(missing_ok=True)
                shutil.rmtree(b.path, ignore_errors=True)
                del cont.blobs[blob]
                self._reserve(acct, -b.footprint)
        self._bump()

    def list_blobs(
        self,
        account: str,
        container: str,
        prefix: str = "",
        marker: Optional[str] = None,
        max_results: Optional[int] = None,
    ) -> Tuple[List[BlobInfo], Optional[str]]:
        """Committed blobs in lexicographic order after ``marker``.

        Returns the page and the marker for the next page (None at the end).
        """
        with self._ns:
            _, cont = self._locate(account, container)
            blobs = list(cont.blobs.values())
        names = sorted(
            b.name for b in blobs if b.committed and b.name.startswith(prefix) and (marker is None or b.name > marker)
        )
        by_name = {b.name: b for b in blobs}
        if max_results is not None and max_results < 1:
            raise InvalidName("max_results must be positive")
        page = names if max_results is None else names[:max_results]
        next_marker = page[-1] if max_results is not None and len(names) > max_results else None
        return [self._info(by_name[n]) for n in page], next_marker

    # -- inspection ---------------------------------------------------------
    def recompute_usage(self, account: str) -> int:
        """Sum every blob footprint from scratch (accounting check)."""
        with self._ns:
            acct = self._account(account)
            return sum(b.footprint for c in acct.containers.values() for b in c.blobs.values())

    def state_digest(self) -> str:
        """Digest of the namespace index: accounts, containers, blob metadata."""
        h = hashlib.sha256()
        with self._ns:
            for acct in sorted(self._accounts.values(), key=lambda a: a.name):
                h.update(f"A {acct.name} {acct.size_cap_bytes} {acct.used_bytes}\n".encode())
                for cont in sorted(acct.containers.values(), key=lambda c: c.name):
                    h.update(f"C {cont.name}\n".encode())
                    for b in sorted(cont.blobs.values(), key=lambda b: b.name):
                        with b.lock:
                            if isinstance(b, _PageBlob):
                                h.update(f"P {b.name!r} {b.declared_size} {b.etag} {sorted(b.pages)}\n".encode())
                            else:
                                staged = sorted((k.hex(), v) for k, v in b.staged.items())
                                h.update(f"B {b.name!r} {b.committed} {b.etag} {b.content_hash} {staged}\n".encode())
        return h.hexdigest()


def _parse_kv(text: str, header: str) -> Dict[str, str]:
    lines = text.splitlines()
    if not lines or lines[0] != header:
        raise ValueError(f"expected manifest header {header!r}")
    out = {}
    for line in lines[1:]:
        key, _, value = line.partition(": ")
        out[key] = value
    return out


def _remove_tmp(path: Path) -> None:
    for p in path.rglob("*.tmp"):
        try:
            p.unlink()
        except OSError:
            pass
