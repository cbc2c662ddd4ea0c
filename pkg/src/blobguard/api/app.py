"""HTTP gateway.

Every data-path request runs the same pipeline: authenticate the bearer
token to a session (401), check access (403), admit against the user's
transaction quota (429), execute against the blob store, then append one
audit record whatever the outcome. Quota is consumed only when execution
succeeds, and the user's counter is held for the duration of the execution
so concurrent requests cannot overshoot the limit.
"""

from __future__ import annotations

import base64
import binascii
import logging
import re
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass
from typing import Any, Callable, List, Optional

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool
from starlette.exceptions import HTTPException as StarletteHTTPException

from ..blobstore import content_digest
from ..errors import BadRequest, EngineError, InvalidBlockId, InvalidName, InvalidPolicy, SessionExpired
from ..quota import QuotaPolicy
from ..rbac import Action, Permission, Session
from ..service import Service
from . import schemas

logger = logging.getLogger(__name__)

RESERVED_ACCOUNTS = frozenset({"admin", "auth"})
POLICY_SCOPE = "*"
_RANGE_RE = re.compile(r"^bytes=(\d+)-(\d*)$")
_CONTENT_RANGE_RE = re.compile(r"^bytes (\d+)-(\d+)(?:/(\d+|\*))?$")


class ApiError(Exception):
    def __init__(self, status: int, reason: str, message: str = "", headers: Optional[dict] = None) -> None:
        super().__init__(message or reason)
        self.status = status
        self.reason = reason
        self.message = message or reason
        self.headers = headers or {}


def _error_response(status: int, reason: str, message: str = "", headers: Optional[dict] = None) -> JSONResponse:
    return JSONResponse({"error": reason, "message": message or reason}, status_code=status, headers=headers)


def _bearer(request: Request) -> Optional[str]:
    header = request.headers.get("authorization", "")
    scheme, _, token = header.partition(" ")
    if scheme.lower() != "bearer" or not token.strip():
        return None
    return token.strip()


def _authenticate(svc: Service, request: Request) -> Session:
    token = _bearer(request)
    if token is None:
        raise ApiError(401, "NoSession", "missing bearer token")
    try:
        return svc.policy.get_session(token)
    except SessionExpired as exc:
        raise ApiError(401, "NoSession", str(exc)) from None


def decode_block_id(text: str) -> bytes:
    text = text.strip()
    try:
        raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError):
        raise BadRequest("block id is not url-safe base64") from None
    if not 1 <= len(raw) <= 64:
        raise InvalidBlockId("block ids are 1-64 bytes after decoding")
    return raw


def encode_block_id(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).decode().rstrip("=")


def _int_param(params, name: str, default: Optional[int] = None) -> Optional[int]:
    value = params.get(name)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError:
        raise BadRequest(f"query parameter {name!r} must be an integer") from None


def _bool_param(params, name: str) -> bool:
    value = (params.get(name) or "false").lower()
    if value not in ("true", "false", "1", "0", "yes", "no"):
        raise BadRequest(f"query parameter {name!r} must be a boolean")
    return value in ("true", "1", "yes")


@dataclass
class DataCall:
    action: Action
    resource: str
    execute: Callable[[], Response]


def _run_data_call(svc: Service, request: Request, call: Callable[[], DataCall]) -> Response:
    request_id = uuid.uuid4().hex
    user: Optional[str] = None
    action, resource = "?", request.url.path
    decision, reason, status = "Deny", None, 500
    try:
        data_call = call()
        action, resource = data_call.action.value, data_call.resource
        if request.path_params.get("acct") in RESERVED_ACCOUNTS:
            # a mistyped /admin or /auth path; never reaches the engines
            raise ApiError(404, "NoSuchRoute", f"no route for {request.method} {request.url.path}")
        session = _authenticate(svc, request)
        user = session.user_id
        try:
            granted = svc.policy.check_access(session.id, data_call.action, data_call.resource)
        except InvalidPolicy as exc:
            raise BadRequest(str(exc)) from None
        if not granted:
            raise ApiError(403, granted.reason.value if granted.reason else "NoPermission")
        with svc.quota.admit(user) as admission:
            if not admission.allowed:
                decision = "Throttled"
                retry = admission.decision.retry_after_seconds
                raise ApiError(429, "Throttled", f"retry after {retry} s", {"Retry-After": str(retry)})
            decision = "Grant"
            response = data_call.execute()
            remaining = admission.consume().remaining
        response.headers["x-quota-remaining"] = "unbounded" if remaining is None else str(remaining)
        status = response.status_code
        return response
    except ApiError as exc:
        reason, status = exc.reason, exc.status
        return _error_response(exc.status, exc.reason, exc.message, exc.headers)
    except EngineError as exc:
        reason, status = exc.reason, exc.status_code
        return _error_response(exc.status_code, exc.reason, str(exc))
    except Exception:
        logger.exception("internal error on %s %s", request.method, request.url.path)
        reason, status = "InternalError", 500
        return _error_response(500, "InternalError")
    finally:
        svc.audit.append(
            request_id=request_id, user=user, action=action, resource=resource,
            decision=decision, reason=reason, status=status,
        )


def _blob_response(data: bytes, info, ranged: Optional[tuple]) -> Response:
    if ranged is None and info.content_hash:
        digest = info.content_hash
    else:
        digest = content_digest(data)
    headers = {"ETag": f'"{info.etag}"', "x-content-hash": digest, "x-blob-type": info.blob_type}
    status = 200
    if ranged is not None:
        status = 206
        headers["Content-Range"] = f"bytes {ranged[0]}-{ranged[1] - 1}/{info.size}"
    return Response(content=data, status_code=status, headers=headers, media_type="application/octet-stream")


def _parse_range(header: Optional[str]) -> Optional[tuple]:
    if not header:
        return None
    m = _RANGE_RE.match(header.strip())
    if not m:
        raise BadRequest(f"unsupported Range header {header!r}")
    start = int(m.group(1))
    end = int(m.group(2)) + 1 if m.group(2) else None
    return start, end


def create_app(service: Service, manage_lifecycle: bool = False) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if manage_lifecycle:
            service.start_snapshot_timer()
        try:
            yield
        finally:
            if manage_lifecycle:
                service.close()

    app = FastAPI(title="blobguard", lifespan=lifespan)
    app.state.service = service
    svc = service

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return _error_response(exc.status, exc.reason, exc.message, exc.headers)

    @app.exception_handler(EngineError)
    async def _engine_error(request: Request, exc: EngineError):
        return _error_response(exc.status_code, exc.reason, str(exc))

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request: Request, exc: StarletteHTTPException):
        reason = {404: "NoSuchRoute", 405: "MethodNotAllowed"}.get(exc.status_code, "HttpError")
        return _error_response(exc.status_code, reason, str(exc.detail), getattr(exc, "headers", None))

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return _error_response(400, "InvalidRequest", str(exc.errors()))

    # -- admin helper -------------------------------------------------------
    def admin_call(request: Request, label: str, resource: str, fn: Callable[[], Any], mutating: bool = True):
        request_id = uuid.uuid4().hex
        user, decision, reason, status = None, "Deny", None, 200
        try:
            session = _authenticate(svc, request)
            user = session.user_id
            if not svc.policy.check_access(session.id, Action.ADMIN, resource):
                raise ApiError(403, "NoPermission", f"Admin on {resource!r} required")
            decision = "Grant"
            return svc.admin(fn) if mutating else fn()
        except ApiError as exc:
            reason, status = exc.reason, exc.status
            raise
        except EngineError as exc:
            reason, status = exc.reason, exc.status_code
            raise
        finally:
            svc.audit.append(
                request_id=request_id, user=user, action=f"Admin:{label}", resource=resource,
                decision=decision, reason=reason, status=status,
            )

    def quota_body(body: schemas.QuotaBody) -> QuotaPolicy:
        return QuotaPolicy(body.limit, body.window or svc.config.quota_window)

    def role_out(role_id: str) -> schemas.RoleOut:
        role = svc.policy.roles[role_id]
        return schemas.RoleOut(
            id=role.id, name=role.name, max_members=role.max_members,
            members=sorted(svc.policy.members(role.id)),
            quota=schemas.QuotaBody(limit=role.default_quota.base_limit, window=role.default_quota.window_seconds),
            permissions=sorted(str(p) for p in role.permissions),
        )

    def quota_status(user_id: str) -> schemas.QuotaStatus:
        usage = svc.quota.usage(user_id)
        return schemas.QuotaStatus(
            user=user_id, count=usage.count, limit=usage.limit, remaining=usage.remaining,
            window_start=usage.window_start, window_seconds=usage.window_seconds,
        )

    def permission(body: schemas.PermissionBody) -> Permission:
        return Permission.parse(f"{body.action}:{body.scope}")

    # -- sessions -----------------------------------------------------------
    @app.post("/auth/sessions", status_code=201, response_model=schemas.SessionInfo)
    def create_session(body: schemas.SessionRequest):
        request_id = uuid.uuid4().hex
        decision, reason, status = "Deny", None, 201
        try:
            session = svc.policy.create_session(body.user, body.credential, body.roles)
            decision = "Grant"
            return schemas.SessionInfo(
                token=session.id, user=session.user_id, active_roles=sorted(session.active_roles),
                created_at=session.created_at, expires_at=session.expires_at,
            )
        except EngineError as exc:
            reason, status = exc.reason, exc.status_code
            raise
        finally:
            svc.audit.append(
                request_id=request_id, user=body.user, action="CreateSession", resource="session",
                decision=decision, reason=reason, status=status,
            )

    @app.get("/auth/sessions/current", response_model=schemas.SessionInfo)
    def current_session(request: Request):
        session = _authenticate(svc, request)
        return schemas.SessionInfo(
            user=session.user_id, active_roles=sorted(session.active_roles),
            created_at=session.created_at, expires_at=session.expires_at,
        )

    @app.delete("/auth/sessions/current", status_code=204)
    def end_session(request: Request):
        session = _authenticate(svc, request)
        svc.policy.revoke_session(session.id)
        svc.audit.append(
            request_id=uuid.uuid4().hex, user=session.user_id, action="RevokeSession",
            resource="session", decision="Grant", reason=None, status=204,
        )
        return Response(status_code=204)

    @app.put("/auth/sessions/current/roles/{role}", status_code=204)
    def activate(role: str, request: Request):
        session = _authenticate(svc, request)
        svc.policy.activate_role(session.id, role)
        return Response(status_code=204)

    @app.delete("/auth/sessions/current/roles/{role}", status_code=204)
    def deactivate(role: str, request: Request):
        session = _authenticate(svc, request)
        svc.policy.deactivate_role(session.id, role)
        return Response(status_code=204)

    @app.get("/auth/quota", response_model=schemas.QuotaStatus)
    def my_quota(request: Request):
        session = _authenticate(svc, request)
        return quota_status(session.user_id)

    # -- admin: accounts ----------------------------------------------------
    @app.post("/admin/accounts", status_code=201, response_model=schemas.AccountOut)
    def admin_create_account(body: schemas.AccountCreate, request: Request):
        def run():
            if body.name in RESERVED_ACCOUNTS:
                raise InvalidName(f"account name {body.name!r} is reserved")
            info = svc.store.create_account(body.name, body.cap)
            return schemas.AccountOut(name=info.name, cap=info.size_cap_bytes, used=info.used_bytes)

        return admin_call(request, "CreateAccount", body.name, run)

    @app.get("/admin/accounts", response_model=List[schemas.AccountOut])
    def admin_list_accounts(request: Request):
        return admin_call(
            request, "ListAccounts", POLICY_SCOPE,
            lambda: [schemas.AccountOut(name=a.name, cap=a.size_cap_bytes, used=a.used_bytes) for a in svc.store.accounts()],
            mutating=False,
        )

    # -- admin: users -------------------------------------------------------
    @app.post("/admin/users", status_code=201, response_model=schemas.UserCreated)
    def admin_create_user(body: schemas.UserCreate, request: Request):
        def run():
            secret = svc.policy.create_user(body.id, body.display_name, body.secret)
            return schemas.UserCreated(id=body.id, secret=secret)

        return admin_call(request, "CreateUser", POLICY_SCOPE, run)

    @app.post("/admin/users/{user_id}/credential", response_model=schemas.UserCreated)
    def admin_reset_credential(user_id: str, request: Request):
        return admin_call(
            request, "ResetCredential", POLICY_SCOPE,
            lambda: schemas.UserCreated(id=user_id, secret=svc.policy.set_credential(user_id)),
        )

    @app.post("/admin/users/{user_id}/permissions", status_code=201)
    def admin_grant_user(user_id: str, body: schemas.PermissionBody, request: Request):
        admin_call(request, "GrantUser", POLICY_SCOPE, lambda: svc.policy.grant_permission_to_user(user_id, permission(body)))
        return {"user": user_id, "permission": str(permission(body))}

    @app.delete("/admin/users/{user_id}/permissions", status_code=204)
    def admin_revoke_user(user_id: str, action: str, scope: str, request: Request):
        perm = permission(schemas.PermissionBody(action=action, scope=scope))
        admin_call(request, "RevokeUser", POLICY_SCOPE, lambda: svc.policy.revoke_permission_from_user(user_id, perm))
        return Response(status_code=204)

    # -- admin: roles -------------------------------------------------------
    @app.post("/admin/roles", status_code=201, response_model=schemas.RoleOut)
    def admin_create_role(body: schemas.RoleCreate, request: Request):
        def run():
            role = svc.policy.create_role(body.name, body.max_members, quota_body(body.quota))
            return role_out(role.id)

        return admin_call(request, "CreateRole", POLICY_SCOPE, run)

    @app.get("/admin/roles", response_model=List[schemas.RoleOut])
    def admin_list_roles(request: Request):
        return admin_call(request, "ListRoles", POLICY_SCOPE, lambda: [role_out(r) for r in sorted(svc.policy.roles)], mutating=False)

    @app.get("/admin/roles/{role_id}", response_model=schemas.RoleOut)
    def admin_get_role(role_id: str, request: Request):
        def run():
            svc.policy._role(role_id)
            return role_out(role_id)

        return admin_call(request, "GetRole", POLICY_SCOPE, run, mutating=False)

    @app.put("/admin/roles/{role_id}/cardinality", response_model=schemas.RoleOut)
    def admin_set_cardinality(role_id: str, body: schemas.CardinalityBody, request: Request):
        def run():
            svc.policy.set_role_cardinality(role_id, body.max_members)
            return role_out(role_id)

        return admin_call(request, "SetCardinality", POLICY_SCOPE, run)

    @app.put("/admin/roles/{role_id}/quota", response_model=schemas.RoleOut)
    def admin_set_role_quota(role_id: str, body: schemas.QuotaBody, request: Request):
        def run():
            svc.policy.set_role_quota(role_id, quota_body(body))
            return role_out(role_id)

        return admin_call(request, "SetRoleQuota", POLICY_SCOPE, run)

    @app.post("/admin/roles/{role_id}/permissions", status_code=201)
    def admin_grant_role(role_id: str, body: schemas.PermissionBody, request: Request):
        admin_call(request, "GrantRole", POLICY_SCOPE, lambda: svc.policy.grant_permission_to_role(role_id, permission(body)))
        return {"role": role_id, "permission": str(permission(body))}

    @app.delete("/admin/roles/{role_id}/permissions", status_code=204)
    def admin_revoke_role(role_id: str, action: str, scope: str, request: Request):
        perm = permission(schemas.PermissionBody(action=action, scope=scope))
        admin_call(request, "RevokeRole", POLICY_SCOPE, lambda: svc.policy.revoke_permission_from_role(role_id, perm))
        return Response(status_code=204)

    # -- admin: assignments, hierarchy, constraints, tiers, quotas ------------
    @app.post("/admin/assignments", status_code=201, response_model=schemas.AssignmentOut)
    def admin_assign(body: schemas.AssignmentCreate, request: Request):
        def run():
            a = svc.policy.assign_user(body.user, body.role, body.tier)
            return schemas.AssignmentOut(user=a.user_id, role=a.role_id, tier=a.tier)

        return admin_call(request, "Assign", POLICY_SCOPE, run)

    @app.delete("/admin/assignments/{user_id}/{role_id}", status_code=204)
    def admin_revoke_assignment(user_id: str, role_id: str, request: Request):
        admin_call(request, "Revoke", POLICY_SCOPE, lambda: svc.policy.revoke_user(user_id, role_id))
        return Response(status_code=204)

    @app.post("/admin/hierarchy", status_code=201)
    def admin_inherit(body: schemas.InheritanceBody, request: Request):
        admin_call(request, "AddInheritance", POLICY_SCOPE, lambda: svc.policy.add_inheritance(body.senior, body.junior))
        return {"senior": body.senior, "junior": body.junior}

    @app.delete("/admin/hierarchy/{senior}/{junior}", status_code=204)
    def admin_uninherit(senior: str, junior: str, request: Request):
        admin_call(request, "RemoveInheritance", POLICY_SCOPE, lambda: svc.policy.remove_inheritance(senior, junior))
        return Response(status_code=204)

    @app.post("/admin/ssd", status_code=201)
    def admin_ssd(body: schemas.PairBody, request: Request):
        admin_call(request, "AddSsd", POLICY_SCOPE, lambda: svc.policy.add_ssd_pair(*body.roles))
        return {"ssd": sorted(body.roles)}

    @app.post("/admin/dsd", status_code=201)
    def admin_dsd(body: schemas.PairBody, request: Request):
        admin_call(request, "AddDsd", POLICY_SCOPE, lambda: svc.policy.add_dsd_pair(*body.roles))
        return {"dsd": sorted(body.roles)}

    @app.put("/admin/tiers/{name}", response_model=schemas.TierOut)
    def admin_define_tier(name: str, body: schemas.TierBody, request: Request):
        def run():
            tier = svc.policy.define_tier(name, body.multiplier)
            return schemas.TierOut(name=tier.name, multiplier=str(tier.quota_multiplier))

        return admin_call(request, "DefineTier", POLICY_SCOPE, run)

    @app.get("/admin/tiers", response_model=List[schemas.TierOut])
    def admin_list_tiers(request: Request):
        return admin_call(
            request, "ListTiers", POLICY_SCOPE,
            lambda: [schemas.TierOut(name=t.name, multiplier=str(t.quota_multiplier)) for t in svc.policy.tiers.values()],
            mutating=False,
        )

    @app.put("/admin/quotas/{user_id}", response_model=schemas.QuotaStatus)
    def admin_set_override(user_id: str, body: schemas.QuotaBody, request: Request):
        def run():
            svc.quota.set_user_quota_override(user_id, quota_body(body))
            return quota_status(user_id)

        return admin_call(request, "SetQuotaOverride", POLICY_SCOPE, run)

    @app.delete("/admin/quotas/{user_id}", response_model=schemas.QuotaStatus)
    def admin_clear_override(user_id: str, request: Request):
        def run():
            svc.quota.set_user_quota_override(user_id, None)
            return quota_status(user_id)

        return admin_call(request, "ClearQuotaOverride", POLICY_SCOPE, run)

    @app.get("/admin/quotas/{user_id}", response_model=schemas.QuotaStatus)
    def admin_quota_status(user_id: str, request: Request):
        return admin_call(request, "QuotaStatus", POLICY_SCOPE, lambda: quota_status(user_id), mutating=False)

    @app.post("/admin/snapshot", status_code=204)
    def admin_snapshot(request: Request):
        admin_call(request, "Snapshot", POLICY_SCOPE, lambda: None)
        return Response(status_code=204)

    # -- data path: containers ----------------------------------------------
    @app.put("/{acct}/{cont}")
    async def put_container(acct: str, cont: str, request: Request):
        def call() -> DataCall:
            def execute() -> Response:
                svc.store.create_container(acct, cont)
                return Response(status_code=201)

            return DataCall(Action.CREATE_CONTAINER, f"{acct}/{cont}", execute)

        return await run_in_threadpool(_run_data_call, svc, request, call)

    @app.delete("/{acct}/{cont}")
    async def delete_container(acct: str, cont: str, request: Request):
        def call() -> DataCall:
            def execute() -> Response:
                svc.store.delete_container(acct, cont, force=_bool_param(request.query_params, "force"))
                return Response(status_code=204)

            return DataCall(Action.DELETE_CONTAINER, f"{acct}/{cont}", execute)

        return await run_in_threadpool(_run_data_call, svc, request, call)

    @app.get("/{acct}/{cont}")
    async def list_container(acct: str, cont: str, request: Request):
        def call() -> DataCall:
            def execute() -> Response:
                params = request.query_params
                items, next_marker = svc.store.list_blobs(
                    acct, cont, prefix=params.get("prefix", ""), marker=params.get("marker") or None,
                    max_results=_int_param(params, "max"),
                )
                body = schemas.BlobListing(
                    blobs=[schemas.BlobItem(name=i.name, type=i.blob_type, size=i.size, etag=i.etag,
                                            content_hash=i.content_hash) for i in items],
                    next_marker=next_marker,
                )
                return JSONResponse(body.model_dump())

            return DataCall(Action.LIST, f"{acct}/{cont}", execute)

        return await run_in_threadpool(_run_data_call, svc, request, call)

    # -- data path: blobs ---------------------------------------------------
    @app.put("/{acct}/{cont}/{blob:path}")
    async def put_blob(acct: str, cont: str, blob: str, request: Request):
        body = await request.body()
        params = request.query_params
        comp = params.get("comp")

        def execute() -> Response:
            if comp is None:
                etag, digest = svc.store.put_blob(acct, cont, blob, body)
                return Response(status_code=201, headers={"ETag": f'"{etag}"', "x-content-hash": digest})
            if comp == "block":
                block_id = decode_block_id(params.get("blockid", ""))
                svc.store.put_block(acct, cont, blob, block_id, body)
                return Response(status_code=201)
            if comp == "blocklist":
                ids = [decode_block_id(line) for line in body.decode(errors="replace").splitlines() if line.strip()]
                etag, digest = svc.store.commit_block_list(acct, cont, blob, ids)
                return Response(status_code=201, headers={"ETag": f'"{etag}"', "x-content-hash": digest})
            if comp == "page":
                header = request.headers.get("content-range", "")
                m = _CONTENT_RANGE_RE.match(header.strip())
                if not m:
                    raise BadRequest("page writes need 'Content-Range: bytes start-end'")
                start, end = int(m.group(1)), int(m.group(2)) + 1
                if request.headers.get("x-page-write", "update").lower() == "clear":
                    etag = svc.store.clear_pages(acct, cont, blob, start, end - start)
                else:
                    if len(body) != end - start:
                        raise BadRequest(f"body is {len(body)} bytes, Content-Range spans {end - start}")
                    etag = svc.store.put_pages(acct, cont, blob, start, body)
                return Response(status_code=201, headers={"ETag": f'"{etag}"'})
            raise BadRequest(f"unknown comp {comp!r} for PUT")

        def call() -> DataCall:
            return DataCall(Action.WRITE, f"{acct}/{cont}/{blob}", execute)

        return await run_in_threadpool(_run_data_call, svc, request, call)

    @app.post("/{acct}/{cont}/{blob:path}")
    async def post_blob(acct: str, cont: str, blob: str, request: Request):
        params = request.query_params

        def execute() -> Response:
            if params.get("comp") != "pageblob":
                raise BadRequest("POST on a blob needs comp=pageblob")
            size = _int_param(params, "size")
            if size is None:
                raise BadRequest("comp=pageblob needs size=N")
            etag = svc.store.create_page_blob(acct, cont, blob, size)
            return Response(status_code=201, headers={"ETag": f'"{etag}"'})

        def call() -> DataCall:
            return DataCall(Action.WRITE, f"{acct}/{cont}/{blob}", execute)

        return await run_in_threadpool(_run_data_call, svc, request, call)

    @app.get("/{acct}/{cont}/{blob:path}")
    async def get_blob(acct: str, cont: str, blob: str, request: Request):
        params = request.query_params

        def execute() -> Response:
            comp = params.get("comp")
            if comp == "pageranges":
                ranges = svc.store.get_page_ranges(acct, cont, blob)
                return JSONResponse({"ranges": [list(r) for r in ranges]})
            if comp is not None:
                raise BadRequest(f"unknown comp {comp!r} for GET")
            wanted = _parse_range(request.headers.get("range"))
            if wanted is not None and wanted[1] is None:
                size = svc.store.get_properties(acct, cont, blob).size
                wanted = (wanted[0], size)
            data, info = svc.store.read_blob(acct, cont, blob, wanted)
            return _blob_response(data, info, wanted)

        def call() -> DataCall:
            return DataCall(Action.READ, f"{acct}/{cont}/{blob}", execute)

        return await run_in_threadpool(_run_data_call, svc, request, call)

    @app.delete("/{acct}/{cont}/{blob:path}")
    async def delete_blob(acct: str, cont: str, blob: str, request: Request):
        def call() -> DataCall:
            def execute() -> Response:
                svc.store.delete_blob(acct, cont, blob)
                return Response(status_code=204)

            return DataCall(Action.DELETE, f"{acct}/{cont}/{blob}", execute)

        return await run_in_threadpool(_run_data_call, svc, request, call)

    return app
