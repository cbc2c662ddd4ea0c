"""Wires the policy engine, quota ledger, blob store and audit log together
and owns snapshot cadence."""

from __future__ import annotations

import logging
import threading
import time
from typing import Any, Callable, Optional, TypeVar

from .blobstore import BlobStore
from .config import ServerConfig
from .persistence import AuditLog, load_snapshot, save_snapshot
from .quota import QuotaLedger, UNBOUNDED
from .rbac import Action, Permission, PolicyStore

logger = logging.getLogger(__name__)

T = TypeVar("T")

ADMIN_ROLE = "admin"


class Service:
    def __init__(self, config: ServerConfig, clock: Callable[[], float] = time.time) -> None:
        self.config = config
        self.clock = clock
        config.data_dir.mkdir(parents=True, exist_ok=True)
        self.policy = PolicyStore(
            clock=clock,
            session_ttl=config.session_ttl,
            premium_multiplier=config.premium_multiplier,
            hash_iterations=config.hash_iterations,
        )
        self.quota = QuotaLedger(self.policy.quota_inputs, clock=clock, default_window=config.quota_window)
        self.store = BlobStore(config.blob_root, config.limits, fsync=config.fsync)
        self.audit = AuditLog(config.audit_log, clock=clock, fsync=config.fsync)
        self._admin_lock = threading.RLock()
        self._saved_version = -1
        if config.snapshot.exists():
            self.restore(load_snapshot(config.snapshot))
            self._saved_version = self.policy.version
        self._stop = threading.Event()
        self._timer: Optional[threading.Thread] = None

    # -- snapshot state -----------------------------------------------------
    def state(self) -> dict:
        return {
            "policy": self.policy.to_dict(),
            "quota": self.quota.to_dict(),
            "accounts": [{"name": a.name, "cap": a.size_cap_bytes} for a in self.store.accounts()],
        }

    def restore(self, state: dict) -> None:
        self.policy.load_dict(state.get("policy", {}))
        self.quota.load_dict(state.get("quota", {}))
        existing = {a.name: a for a in self.store.accounts()}
        for acct in state.get("accounts", []):
            if acct["name"] not in existing:
                self.store.create_account(acct["name"], acct["cap"])
            elif existing[acct["name"]].size_cap_bytes != acct["cap"]:
                self.store.set_account_cap(acct["name"], acct["cap"])

    def save(self) -> None:
        with self._admin_lock:
            save_snapshot(self.config.snapshot, self.state(), fsync=self.config.fsync)
            self._saved_version = self.policy.version

    def admin(self, fn: Callable[..., T], *args: Any, **kwargs: Any) -> T:
        """Run one administrative mutation and persist a snapshot after it."""
        with self._admin_lock:
            result = fn(*args, **kwargs)
            self.save()
            return result

    # -- lifecycle ----------------------------------------------------------
    def start_snapshot_timer(self) -> None:
        interval = self.config.snapshot_interval
        if not interval or self._timer is not None:
            return

        def loop() -> None:
            while not self._stop.wait(interval):
                if self.policy.version != self._saved_version:
                    try:
                        self.save()
                    except OSError:
                        logger.exception("periodic snapshot failed")

        self._timer = threading.Thread(target=loop, name="snapshot-timer", daemon=True)
        self._timer.start()

    def close(self) -> None:
        self._stop.set()
        self.save()
        self.audit.close()

    # -- bootstrap ----------------------------------------------------------
    def bootstrap_admin(self, user_id: str, secret: Optional[str] = None) -> str:
        """Create an administrator with every action on every scope and no quota cap.

        Returns the user's secret token.
        """
        with self._admin_lock:
            if ADMIN_ROLE not in self.policy.roles:
                self.policy.create_role(ADMIN_ROLE, None, UNBOUNDED)
                for action in Action:
                    self.policy.grant_permission_to_role(ADMIN_ROLE, Permission(action, "*"))
            if user_id in self.policy.users:
                token = self.policy.set_credential(user_id, secret)
            else:
                token = self.policy.create_user(user_id, "administrator", secret)
            if ADMIN_ROLE not in self.policy.assigned_roles(user_id):
                self.policy.assign_user(user_id, ADMIN_ROLE)
            self.save()
            return token
