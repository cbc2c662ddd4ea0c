"""Command-line client and server launcher.

Exit codes:
    0  success
    1  server start failure (bad config, unusable data dir, address in use)
    2  network failure reaching the server
    3  API error (any non-2xx other than 429), reason printed verbatim
    4  throttled (429); Retry-After seconds printed
    5  downloaded content does not match the advertised hash
    64 command-line usage error
"""

from __future__ import annotations

import base64
import concurrent.futures
import hashlib
import json
import os
import socket
import sys
from pathlib import Path
from typing import Any, Callable, Optional

import click
import httpx

from .client import ApiFailure, GatewayClient, HashMismatch, block_id_for, split_path
from .config import ConfigError, ServerConfig, parse_size

EXIT_SERVE = 1
EXIT_NETWORK = 2
EXIT_API = 3
EXIT_THROTTLED = 4
EXIT_HASH = 5
EXIT_USAGE = 64

DEFAULT_SERVER = "http://127.0.0.1:8470"
DEFAULT_TOKEN_FILE = "~/.config/blobguard/token"


class Ctx:
    def __init__(self, server: str, token_file: str, structured: bool) -> None:
        self.server = server
        self.token_file = Path(token_file).expanduser()
        self.structured = structured

    def token(self) -> Optional[str]:
        try:
            return self.token_file.read_text().strip() or None
        except OSError:
            return None

    def save_token(self, token: str) -> None:
        self.token_file.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(self.token_file, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as fh:
            fh.write(token + "\n")
        os.chmod(self.token_file, 0o600)

    def client(self) -> GatewayClient:
        return GatewayClient(self.server, self.token())

    def emit(self, doc: Any, human: Optional[str] = None) -> None:
        if self.structured:
            click.echo(json.dumps(doc, sort_keys=True))
        elif human is not None:
            click.echo(human)
        else:
            click.echo(json.dumps(doc, indent=2, sort_keys=True))


def _fail(ctx: Ctx, code: int, error: str, message: str, **extra: Any) -> None:
    if ctx.structured:
        click.echo(json.dumps({"ok": False, "error": error, "message": message, **extra}, sort_keys=True))
    click.echo(f"error: {error}: {message}" if message else f"error: {error}", err=True)
    sys.exit(code)


def call(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Map client exceptions onto the documented exit codes."""

    def wrapper(*args: Any, **kwargs: Any) -> Any:
        ctx: Ctx = click.get_current_context().find_object(Ctx)
        try:
            return fn(*args, **kwargs)
        except ApiFailure as exc:
            if exc.status == 429:
                _fail(ctx, EXIT_THROTTLED, exc.reason, f"retry after {exc.retry_after} s",
                      status=429, retry_after=exc.retry_after)
            _fail(ctx, EXIT_API, exc.reason, exc.message, status=exc.status)
        except HashMismatch as exc:
            _fail(ctx, EXIT_HASH, "HashMismatch", str(exc))
        except httpx.HTTPError as exc:
            _fail(ctx, EXIT_NETWORK, "NetworkError", f"{ctx.server}: {exc}")
        except ValueError as exc:
            _fail(ctx, EXIT_USAGE, "UsageError", str(exc))

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _limit(text: Optional[str]) -> Optional[int]:
    if text is None or text.lower() in ("unbounded", "none", "inf"):
        return None
    return int(text)


pass_ctx = click.make_pass_decorator(Ctx)


@click.group()
@click.option("--server", envvar="BLOBGUARD_SERVER", default=DEFAULT_SERVER, show_default=True, help="Gateway base URL.")
@click.option("--token-file", envvar="BLOBGUARD_TOKEN_FILE", default=DEFAULT_TOKEN_FILE, show_default=True)
@click.option("--json", "structured", is_flag=True, help="Emit one JSON document per invocation.")
@click.pass_context
def cli(ctx: click.Context, server: str, token_file: str, structured: bool) -> None:
    """Role-gated blob storage: server, admin and data commands."""
    ctx.obj = Ctx(server, token_file, structured)


# -- server -----------------------------------------------------------------
@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
def serve(config_path: str) -> None:
    """Run the gateway until interrupted; a final snapshot is written on shutdown."""
    import uvicorn

    from .api import create_app
    from .service import Service

    try:
        config = ServerConfig.load(config_path)
        host, port = config.address
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_SERVE)
    if not config.data_dir.exists():
        if not config.data_dir.parent.exists():
            click.echo(f"error: data directory parent {config.data_dir.parent} does not exist", err=True)
            sys.exit(EXIT_SERVE)
        config.data_dir.mkdir()
    sock = socket.socket(socket.AF_INET6 if ":" in host else socket.AF_INET, socket.SOCK_STREAM)
    try:
        sock.bind((host, port))
        sock.listen(128)
    except OSError as exc:
        click.echo(f"error: cannot bind {host}:{port}: {exc.strerror}", err=True)
        sys.exit(EXIT_SERVE)
    try:
        service = Service(config)
    except Exception as exc:
        click.echo(f"error: cannot open data directory {config.data_dir}: {exc}", err=True)
        sys.exit(EXIT_SERVE)
    app = create_app(service, manage_lifecycle=True)
    bound_host, bound_port = sock.getsockname()[:2]
    click.echo(f"blobguard listening on http://{bound_host}:{bound_port}", err=False)
    sys.stdout.flush()
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning", lifespan="on"))
    server.run(sockets=[sock])


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--user", default="admin", show_default=True)
@click.option("--secret", default=None, help="Use this secret instead of a generated one.")
@pass_ctx
def bootstrap(ctx: Ctx, config_path: str, user: str, secret: Optional[str]) -> None:
    """Offline: create (or reset) an administrator in the data directory. Run while the server is stopped."""
    from .service import Service

    try:
        config = ServerConfig.load(config_path)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_SERVE)
    service = Service(config)
    try:
        token = service.bootstrap_admin(user, secret)
    finally:
        service.close()
    ctx.emit({"user": user, "secret": token}, f"administrator {user!r} secret: {token}")


# -- sessions ---------------------------------------------------------------
@cli.command()
@click.argument("user")
@click.option("--secret", envvar="BLOBGUARD_SECRET", prompt=True, hide_input=True)
@click.option("--role", "roles", multiple=True, help="Role to activate (repeatable).")
@pass_ctx
@call
def login(ctx: Ctx, user: str, secret: str, roles: tuple) -> None:
    """Open a session and cache its token."""
    with GatewayClient(ctx.server) as client:
        info = client.login(user, secret, roles)
    ctx.save_token(info["token"])
    ctx.emit({k: v for k, v in info.items() if k != "token"},
             f"logged in as {user}; active roles: {', '.join(info['active_roles']) or '(none)'}")


@cli.command()
@pass_ctx
@call
def logout(ctx: Ctx) -> None:
    """Revoke the cached session."""
    with ctx.client() as client:
        client.logout()
    ctx.token_file.unlink(missing_ok=True)
    ctx.emit({"ok": True}, "logged out")


# -- admin ------------------------------------------------------------------
@cli.group()
def account() -> None:
    """Storage accounts."""


@account.command("create")
@click.argument("name")
@click.option("--cap", default=None, help="Size cap, e.g. 10MiB (server default when omitted).")
@pass_ctx
@call
def account_create(ctx: Ctx, name: str, cap: Optional[str]) -> None:
    body = {"name": name, "cap": parse_size(cap) if cap else None}
    with ctx.client() as client:
        out = client.json("POST", "/admin/accounts", json=body)
    ctx.emit(out, f"account {out['name']} cap {out['cap']} bytes")


@account.command("list")
@pass_ctx
@call
def account_list(ctx: Ctx) -> None:
    with ctx.client() as client:
        out = client.json("GET", "/admin/accounts")
    ctx.emit(out, "\n".join(f"{a['name']}\t{a['used']}/{a['cap']}" for a in out))


@cli.group()
def user() -> None:
    """Users."""


@user.command("create")
@click.argument("user_id")
@click.option("--display-name", default="")
@click.option("--secret", default=None)
@pass_ctx
@call
def user_create(ctx: Ctx, user_id: str, display_name: str, secret: Optional[str]) -> None:
    with ctx.client() as client:
        out = client.json("POST", "/admin/users", json={"id": user_id, "display_name": display_name, "secret": secret})
    ctx.emit(out, f"user {out['id']} secret: {out['secret']}")


@cli.group()
def role() -> None:
    """Roles."""


@role.command("create")
@click.argument("name")
@click.option("--max-members", default=None, help="Member cap (omit or 'unbounded' for none).")
@click.option("--quota-limit", default=None, help="Transactions per window (omit or 'unbounded').")
@click.option("--quota-window", type=int, default=None, help="Window length in seconds.")
@pass_ctx
@call
def role_create(ctx: Ctx, name: str, max_members: Optional[str], quota_limit: Optional[str], quota_window: Optional[int]) -> None:
    body = {"name": name, "max_members": _limit(max_members),
            "quota": {"limit": _limit(quota_limit), "window": quota_window}}
    with ctx.client() as client:
        out = client.json("POST", "/admin/roles", json=body)
    ctx.emit(out, f"role {out['id']} (max members {out['max_members'] or 'unbounded'}, "
                  f"quota {out['quota']['limit'] if out['quota']['limit'] is not None else 'unbounded'}"
                  f"/{out['quota']['window']}s)")


@role.command("set-cardinality")
@click.argument("name")
@click.argument("max_members")
@pass_ctx
@call
def role_set_cardinality(ctx: Ctx, name: str, max_members: str) -> None:
    with ctx.client() as client:
        out = client.json("PUT", f"/admin/roles/{name}/cardinality", json={"max_members": _limit(max_members)})
    ctx.emit(out, f"role {name} max members {out['max_members'] or 'unbounded'}")


@role.command("show")
@click.argument("name")
@pass_ctx
@call
def role_show(ctx: Ctx, name: str) -> None:
    with ctx.client() as client:
        out = client.json("GET", f"/admin/roles/{name}")
    ctx.emit(out)


@cli.command()
@click.argument("user_id")
@click.argument("role_id")
@click.option("--tier", default="Basic", show_default=True)
@pass_ctx
@call
def assign(ctx: Ctx, user_id: str, role_id: str, tier: str) -> None:
    """Make USER a member of ROLE at a membership tier."""
    with ctx.client() as client:
        out = client.json("POST", "/admin/assignments", json={"user": user_id, "role": role_id, "tier": tier})
    ctx.emit(out, f"{user_id} -> {role_id} ({tier})")


@cli.command()
@click.argument("user_id")
@click.argument("role_id")
@pass_ctx
@call
def revoke(ctx: Ctx, user_id: str, role_id: str) -> None:
    """Remove USER from ROLE."""
    with ctx.client() as client:
        client.request("DELETE", f"/admin/assignments/{user_id}/{role_id}")
    ctx.emit({"user": user_id, "role": role_id, "revoked": True}, f"revoked {user_id} from {role_id}")


def _pair_group(name: str, path: str, doc: str) -> None:
    group = click.Group(name, help=doc)

    @group.command("add")
    @click.argument("role1")
    @click.argument("role2")
    @pass_ctx
    @call
    def add(ctx: Ctx, role1: str, role2: str) -> None:
        with ctx.client() as client:
            out = client.json("POST", path, json={"roles": [role1, role2]})
        ctx.emit(out, f"{name} pair {role1} / {role2} added")

    cli.add_command(group)


_pair_group("ssd", "/admin/ssd", "Static separation-of-duty pairs.")
_pair_group("dsd", "/admin/dsd", "Dynamic separation-of-duty pairs.")


@cli.group()
def inherit() -> None:
    """Role hierarchy edges (senior inherits junior's permissions)."""


@inherit.command("add")
@click.argument("senior")
@click.argument("junior")
@pass_ctx
@call
def inherit_add(ctx: Ctx, senior: str, junior: str) -> None:
    with ctx.client() as client:
        out = client.json("POST", "/admin/hierarchy", json={"senior": senior, "junior": junior})
    ctx.emit(out, f"{senior} inherits {junior}")


@cli.group()
def perm() -> None:
    """Permissions: ACTION is Read, Write, Delete, List, CreateContainer, DeleteContainer or Admin;
    SCOPE is account[/container[/blob]] with '*' wildcards."""


@perm.command("grant-role")
@click.argument("role_id")
@click.argument("action")
@click.argument("scope")
@pass_ctx
@call
def perm_grant_role(ctx: Ctx, role_id: str, action: str, scope: str) -> None:
    with ctx.client() as client:
        out = client.json("POST", f"/admin/roles/{role_id}/permissions", json={"action": action, "scope": scope})
    ctx.emit(out, f"{role_id} may {out['permission']}")


@perm.command("grant-user")
@click.argument("user_id")
@click.argument("action")
@click.argument("scope")
@pass_ctx
@call
def perm_grant_user(ctx: Ctx, user_id: str, action: str, scope: str) -> None:
    with ctx.client() as client:
        out = client.json("POST", f"/admin/users/{user_id}/permissions", json={"action": action, "scope": scope})
    ctx.emit(out, f"{user_id} may {out['permission']} (direct grant)")


@cli.group()
def tier() -> None:
    """Membership tiers."""


@tier.command("define")
@click.argument("name")
@click.option("--multiplier", required=True, help="Quota multiplier >= 1, e.g. 2 or 3/2.")
@pass_ctx
@call
def tier_define(ctx: Ctx, name: str, multiplier: str) -> None:
    with ctx.client() as client:
        out = client.json("PUT", f"/admin/tiers/{name}", json={"multiplier": multiplier})
    ctx.emit(out, f"tier {out['name']} x{out['multiplier']}")


@cli.group()
def quota() -> None:
    """Transaction quotas."""


def _quota_human(out: dict) -> str:
    limit = "unbounded" if out["limit"] is None else out["limit"]
    remaining = "unbounded" if out["remaining"] is None else out["remaining"]
    return (f"{out['user']}: {out['count']} used, {remaining} remaining of {limit} "
            f"in the {out['window_seconds']}s window starting {out['window_start']}")


@quota.command("status")
@click.argument("user_id", required=False)
@pass_ctx
@call
def quota_status(ctx: Ctx, user_id: Optional[str]) -> None:
    """Current window usage (own, or USER's with admin rights). Does not consume quota."""
    with ctx.client() as client:
        out = client.quota(user_id)
    ctx.emit(out, _quota_human(out))


@quota.command("override")
@click.argument("user_id")
@click.option("--limit", "limit", required=True, help="Base transactions per window, or 'unbounded'.")
@click.option("--window", type=int, default=None)
@pass_ctx
@call
def quota_override(ctx: Ctx, user_id: str, limit: str, window: Optional[int]) -> None:
    with ctx.client() as client:
        out = client.json("PUT", f"/admin/quotas/{user_id}", json={"limit": _limit(limit), "window": window})
    ctx.emit(out, _quota_human(out))


@quota.command("clear")
@click.argument("user_id")
@pass_ctx
@call
def quota_clear(ctx: Ctx, user_id: str) -> None:
    with ctx.client() as client:
        out = client.json("DELETE", f"/admin/quotas/{user_id}")
    ctx.emit(out, _quota_human(out))


# -- data path --------------------------------------------------------------
@cli.group()
def container() -> None:
    """Containers (ACCOUNT/CONTAINER)."""


@container.command("create")
@click.argument("path")
@pass_ctx
@call
def container_create(ctx: Ctx, path: str) -> None:
    acct, cont = split_path(path, 2)
    with ctx.client() as client:
        client.create_container(acct, cont)
    ctx.emit({"container": path, "created": True}, f"created {path}")


@container.command("rm")
@click.argument("path")
@click.option("--force", is_flag=True, help="Delete contained blobs too.")
@pass_ctx
@call
def container_rm(ctx: Ctx, path: str, force: bool) -> None:
    acct, cont = split_path(path, 2)
    with ctx.client() as client:
        client.delete_container(acct, cont, force)
    ctx.emit({"container": path, "deleted": True}, f"deleted {path}")


@cli.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.argument("path")
@pass_ctx
@call
def put(ctx: Ctx, file: str, path: str) -> None:
    """Upload FILE as ACCOUNT/CONTAINER/BLOB in one request."""
    acct, cont, blob = split_path(path, 3)
    data = Path(file).read_bytes()
    with ctx.client() as client:
        resp = client.put_blob(acct, cont, blob, data)
    _report_upload(ctx, path, data, resp)


def _report_upload(ctx: Ctx, path: str, data: bytes, resp: httpx.Response, **extra: Any) -> None:
    remote = resp.headers.get("x-content-hash")
    local = hashlib.sha256(data).hexdigest()
    if remote != local:
        _fail(ctx, EXIT_HASH, "HashMismatch", f"server hash {remote} != local {local}")
    ctx.emit({"blob": path, "size": len(data), "content_hash": remote,
              "etag": resp.headers.get("etag", "").strip('"'), **extra},
             f"uploaded {path} ({len(data)} bytes) sha256 {remote}")


@cli.command("put-blocks")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.argument("path")
@click.option("--block-size", default="4MiB", show_default=True)
@click.option("--parallel", type=click.IntRange(1, 64), default=4, show_default=True)
@pass_ctx
@call
def put_blocks(ctx: Ctx, file: str, path: str, block_size: str, parallel: int) -> None:
    """Upload FILE by staging blocks, then committing the block list."""
    acct, cont, blob = split_path(path, 3)
    size = parse_size(block_size)
    if size < 1:
        raise ValueError("block size must be positive")
    data = Path(file).read_bytes()
    chunks = [data[i:i + size] for i in range(0, len(data), size)]
    ids = [block_id_for(i) for i in range(len(chunks))]
    with ctx.client() as client:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(client.put_block, acct, cont, blob, bid, chunk) for bid, chunk in zip(ids, chunks)]
            for fut in futures:
                fut.result()
        resp = client.commit(acct, cont, blob, ids)
    _report_upload(ctx, path, data, resp, blocks=len(ids))


def _parse_cli_range(text: str) -> tuple:
    start, sep, end = text.partition("-")
    if not sep or not start.isdigit() or not end.isdigit():
        raise ValueError("--range takes START-END (inclusive byte offsets)")
    return int(start), int(end)


@cli.command()
@click.argument("path")
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None, help="Write here instead of stdout.")
@click.option("--range", "byte_range", default=None, help="Inclusive byte range START-END.")
@pass_ctx
@call
def get(ctx: Ctx, path: str, output: Optional[str], byte_range: Optional[str]) -> None:
    """Download ACCOUNT/CONTAINER/BLOB, verifying the advertised content hash."""
    acct, cont, blob = split_path(path, 3)
    wanted = _parse_cli_range(byte_range) if byte_range else None
    with ctx.client() as client:
        resp = client.get_blob(acct, cont, blob, wanted)
    digest = resp.headers.get("x-content-hash")
    if output:
        Path(output).write_bytes(resp.content)
        ctx.emit({"blob": path, "size": len(resp.content), "content_hash": digest, "output": output},
                 f"downloaded {path} ({len(resp.content)} bytes) -> {output}")
    elif ctx.structured:
        ctx.emit({"blob": path, "size": len(resp.content), "content_hash": digest,
                  "data_base64": base64.b64encode(resp.content).decode()})
    else:
        sys.stdout.buffer.write(resp.content)
        sys.stdout.flush()


@cli.command()
@click.argument("path")
@pass_ctx
@call
def rm(ctx: Ctx, path: str) -> None:
    """Delete ACCOUNT/CONTAINER/BLOB."""
    acct, cont, blob = split_path(path, 3)
    with ctx.client() as client:
        client.delete_blob(acct, cont, blob)
    ctx.emit({"blob": path, "deleted": True}, f"deleted {path}")


@cli.command()
@click.argument("path")
@click.option("--prefix", default="")
@click.option("--max", "page_size", type=int, default=None, help="Page size used while following markers.")
@pass_ctx
@call
def ls(ctx: Ctx, path: str, prefix: str, page_size: Optional[int]) -> None:
    """List blobs in ACCOUNT/CONTAINER."""
    acct, cont = split_path(path, 2)
    with ctx.client() as client:
        items = client.list_all(acct, cont, prefix, page_size)
    ctx.emit({"container": path, "blobs": items},
             "\n".join(f"{i['type']:5} {i['size']:>12} {i['name']}" for i in items))


@cli.group()
def pages() -> None:
    """Page blobs (512-byte aligned)."""


@pages.command("create")
@click.argument("path")
@click.option("--size", required=True, help="Declared size, a multiple of 512.")
@pass_ctx
@call
def pages_create(ctx: Ctx, path: str, size: str) -> None:
    acct, cont, blob = split_path(path, 3)
    with ctx.client() as client:
        client.create_page_blob(acct, cont, blob, parse_size(size))
    ctx.emit({"blob": path, "size": parse_size(size)}, f"created page blob {path}")


@pages.command("write")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.argument("path")
@click.option("--offset", type=int, required=True)
@pass_ctx
@call
def pages_write(ctx: Ctx, file: str, path: str, offset: int) -> None:
    acct, cont, blob = split_path(path, 3)
    data = Path(file).read_bytes()
    with ctx.client() as client:
        client.write_pages(acct, cont, blob, offset, data)
    ctx.emit({"blob": path, "offset": offset, "length": len(data)}, f"wrote {len(data)} bytes at {offset}")


@pages.command("clear")
@click.argument("path")
@click.option("--offset", type=int, required=True)
@click.option("--length", type=int, required=True)
@pass_ctx
@call
def pages_clear(ctx: Ctx, path: str, offset: int, length: int) -> None:
    acct, cont, blob = split_path(path, 3)
    with ctx.client() as client:
        client.clear_pages(acct, cont, blob, offset, length)
    ctx.emit({"blob": path, "offset": offset, "length": length}, f"cleared {length} bytes at {offset}")


@pages.command("ranges")
@click.argument("path")
@pass_ctx
@call
def pages_ranges(ctx: Ctx, path: str) -> None:
    acct, cont, blob = split_path(path, 3)
    with ctx.client() as client:
        ranges = client.page_ranges(acct, cont, blob)
    ctx.emit({"blob": path, "ranges": ranges}, "\n".join(f"[{s}, {e})" for s, e in ranges) or "(no pages written)")


def main(argv: Optional[list] = None) -> None:
    try:
        cli.main(args=argv, prog_name="blobguard", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(EXIT_USAGE)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()
