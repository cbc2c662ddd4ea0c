from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi.testclient import TestClient

from blobguard.api import create_app
from blobguard.client import GatewayClient
from blobguard.config import ServerConfig
from blobguard.service import Service


class ManualClock:
    def __init__(self, now: float = 0.0) -> None:
        self.now = now

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


def make_config(root: Path, **overrides) -> ServerConfig:
    data = {"data_dir": str(Path(root) / "data"), "profile": "test", "fsync": False,
            "hash_iterations": 1, "snapshot_interval": 0}
    data.update(overrides)
    return ServerConfig.from_mapping(data)


class Harness:
    """A service plus an in-process HTTP client, bootstrapped with an admin."""

    def __init__(self, root: Path, clock: Optional[ManualClock] = None, **config) -> None:
        self.clock = clock or ManualClock(1_000_000.0)
        self.config = make_config(root, **config)
        self.service = Service(self.config, clock=self.clock)
        self.app = create_app(self.service)
        self.http = TestClient(self.app)
        self.http.__enter__()  # one event-loop portal for the harness lifetime
        self.admin_secret = self.service.bootstrap_admin("root", "root-secret")
        self.admin = self.client_for("root", "root-secret", ["admin"])

    def client(self, token: Optional[str] = None) -> GatewayClient:
        return GatewayClient("http://testserver", token, transport=self.http._transport)

    def client_for(self, user: str, secret: str, roles=()) -> GatewayClient:
        c = self.client()
        c.login(user, secret, roles)
        return c

    def add_user(self, user: str, roles=(), tier: str = "Basic") -> GatewayClient:
        secret = self.admin.json("POST", "/admin/users", json={"id": user})["secret"]
        for r in roles:
            self.admin.json("POST", "/admin/assignments", json={"user": user, "role": r, "tier": tier})
        return self.client_for(user, secret, roles)

    def close(self) -> None:
        self.http.__exit__(None, None, None)
        self.service.close()


class LiveServer:
    """Serve an app with uvicorn on an ephemeral localhost port, in a thread."""

    def __init__(self, app) -> None:
        import socket
        import threading

        import uvicorn

        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(256)
        port = self._sock.getsockname()[1]
        self.url = f"http://127.0.0.1:{port}"
        self.server = uvicorn.Server(uvicorn.Config(app, log_level="warning", lifespan="off"))
        self.thread = threading.Thread(target=self.server.run, kwargs={"sockets": [self._sock]}, daemon=True)

    def __enter__(self) -> "LiveServer":
        import time

        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self.thread.join(10)
        self._sock.close()
