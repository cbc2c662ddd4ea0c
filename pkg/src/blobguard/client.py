"""Small synchronous client for the gateway's HTTP API."""

from __future__ import annotations

import base64
import hashlib
from typing import Any, Dict, Iterable, List, Optional, Tuple
from urllib.parse import quote

import httpx


class ApiFailure(Exception):
    """Non-2xx response; ``reason`` is the server's machine-readable error name."""

    def __init__(self, status: int, reason: str, message: str = "", retry_after: Optional[int] = None) -> None:
        super().__init__(f"{status} {reason}: {message}" if message else f"{status} {reason}")
        self.status = status
        self.reason = reason
        self.message = message
        self.retry_after = retry_after


class HashMismatch(Exception):
    pass


def block_id_for(index: int) -> str:
    return base64.urlsafe_b64encode(f"block-{index:08d}".encode()).decode().rstrip("=")


def _check(resp: httpx.Response) -> httpx.Response:
    if resp.is_success:
        return resp
    reason, message = f"HTTP{resp.status_code}", ""
    try:
        body = resp.json()
        reason, message = body.get("error", reason), body.get("message", "")
    except ValueError:
        message = resp.text[:200]
    retry = resp.headers.get("retry-after")
    raise ApiFailure(resp.status_code, reason, message, int(retry) if retry and retry.isdigit() else None)


def _blob_path(account: str, container: str, blob: str) -> str:
    return f"/{account}/{container}/{quote(blob, safe='/')}"


def split_path(path: str, parts: int) -> Tuple[str, ...]:
    pieces = path.strip("/").split("/", parts - 1)
    if len(pieces) != parts or not all(pieces):
        shape = "/".join(["account", "container", "blob"][:parts])
        raise ValueError(f"expected {shape}, got {path!r}")
    return tuple(pieces)


class GatewayClient:
    def __init__(self, base_url: str, token: Optional[str] = None, timeout: float = 60.0,
                 transport: Optional[httpx.BaseTransport] = None) -> None:
        self.token = token
        self.http = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def close(self) -> None:
        self.http.close()

    def __enter__(self) -> "GatewayClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _headers(self, extra: Optional[Dict[str, str]] = None) -> Dict[str, str]:
        headers = dict(extra or {})
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def request(self, method: str, path: str, *, headers: Optional[Dict[str, str]] = None, **kwargs: Any) -> httpx.Response:
        return _check(self.http.request(method, path, headers=self._headers(headers), **kwargs))

    def json(self, method: str, path: str, **kwargs: Any) -> Any:
        resp = self.request(method, path, **kwargs)
        return resp.json() if resp.content else None

    # -- sessions -----------------------------------------------------------
    def login(self, user: str, credential: str, roles: Iterable[str] = ()) -> Dict[str, Any]:
        info = self.json("POST", "/auth/sessions", json={"user": user, "credential": credential, "roles": list(roles)})
        self.token = info["token"]
        return info

    def logout(self) -> None:
        self.request("DELETE", "/auth/sessions/current")

    def quota(self, user: Optional[str] = None) -> Dict[str, Any]:
        return self.json("GET", f"/admin/quotas/{user}" if user else "/auth/quota")

    # -- data path ----------------------------------------------------------
    def create_container(self, account: str, container: str) -> None:
        self.request("PUT", f"/{account}/{container}")

    def delete_container(self, account: str, container: str, force: bool = False) -> None:
        self.request("DELETE", f"/{account}/{container}", params={"force": str(force).lower()})

    def list_blobs(self, account: str, container: str, prefix: str = "", max_results: Optional[int] = None,
                   marker: Optional[str] = None) -> Dict[str, Any]:
        params: Dict[str, Any] = {"prefix": prefix}
        if max_results:
            params["max"] = max_results
        if marker:
            params["marker"] = marker
        return self.json("GET", f"/{account}/{container}", params=params)

    def list_all(self, account: str, container: str, prefix: str = "", page_size: Optional[int] = None) -> List[Dict[str, Any]]:
        items: List[Dict[str, Any]] = []
        marker = None
        while True:
            page = self.list_blobs(account, container, prefix, page_size, marker)
            items += page["blobs"]
            marker = page.get("next_marker")
            if not marker:
                return items

    def put_blob(self, account: str, container: str, blob: str, data: bytes) -> httpx.Response:
        return self.request("PUT", _blob_path(account, container, blob), content=data)

    def put_block(self, account: str, container: str, blob: str, block_id: str, data: bytes) -> httpx.Response:
        return self.request("PUT", _blob_path(account, container, blob), params={"comp": "block", "blockid": block_id}, content=data)

    def commit(self, account: str, container: str, blob: str, block_ids: Iterable[str]) -> httpx.Response:
        body = "\n".join(block_ids) + "\n"
        return self.request("PUT", _blob_path(account, container, blob), params={"comp": "blocklist"}, content=body.encode())

    def get_blob(self, account: str, container: str, blob: str, byte_range: Optional[Tuple[int, int]] = None,
                 verify: bool = True) -> httpx.Response:
        """``byte_range`` is inclusive, as in the HTTP Range header."""
        headers = {"Range": f"bytes={byte_range[0]}-{byte_range[1]}"} if byte_range else None
        resp = self.request("GET", _blob_path(account, container, blob), headers=headers)
        if verify:
            expected = resp.headers.get("x-content-hash")
            actual = hashlib.sha256(resp.content).hexdigest()
            if expected and expected != actual:
                raise HashMismatch(f"content hash {actual} != advertised {expected}")
        return resp

    def delete_blob(self, account: str, container: str, blob: str) -> None:
        self.request("DELETE", _blob_path(account, container, blob))

    def create_page_blob(self, account: str, container: str, blob: str, size: int) -> httpx.Response:
        return self.request("POST", _blob_path(account, container, blob), params={"comp": "pageblob", "size": size})

    def write_pages(self, account: str, container: str, blob: str, offset: int, data: bytes) -> httpx.Response:
        headers = {"Content-Range": f"bytes {offset}-{offset + len(data) - 1}"}
        return self.request("PUT", _blob_path(account, container, blob), params={"comp": "page"}, headers=headers, content=data)

    def clear_pages(self, account: str, container: str, blob: str, offset: int, length: int) -> httpx.Response:
        headers = {"Content-Range": f"bytes {offset}-{offset + length - 1}", "x-page-write": "clear"}
        return self.request("PUT", _blob_path(account, container, blob), params={"comp": "page"}, headers=headers)

    def page_ranges(self, account: str, container: str, blob: str) -> List[List[int]]:
        return self.json("GET", _blob_path(account, container, blob), params={"comp": "pageranges"})["ranges"]
