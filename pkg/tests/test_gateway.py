from __future__ import annotations

import hashlib

import pytest

from blobguard.client import ApiFailure, block_id_for
from blobguard.persistence import replay_audit


@pytest.fixture
def world(harness):
    a = harness.admin
    a.json("POST", "/admin/accounts", json={"name": "acme", "cap": 1 << 20})
    a.create_container("acme", "box")
    a.json("POST", "/admin/roles", json={"name": "rw", "max_members": 2, "quota": {"limit": 5, "window": 60}})
    for action in ("Read", "Write", "Delete", "List"):
        a.json("POST", "/admin/roles/rw/permissions", json={"action": action, "scope": "acme/box/*"})
    a.json("POST", "/admin/roles/rw/permissions", json={"action": "List", "scope": "acme/box"})
    a.json("POST", "/admin/roles", json={"name": "nobody", "quota": {"limit": 5}})
    return harness


def failure(fn, *args, **kwargs) -> ApiFailure:
    with pytest.raises(ApiFailure) as err:
        fn(*args, **kwargs)
    return err.value


def audit(harness):
    return list(replay_audit(harness.config.audit_log))


class TestHappyPath:
    def test_put_get(self, world):
        u = world.add_user("alice", ["rw"])
        u.put_blob("acme", "box", "dir/a b?.txt", b"hello")
        resp = u.get_blob("acme", "box", "dir/a b?.txt")
        assert resp.status_code == 200 and resp.content == b"hello"
        assert resp.headers["x-content-hash"] == hashlib.sha256(b"hello").hexdigest()
        assert resp.headers["x-blob-type"] == "block"
        assert resp.headers["x-quota-remaining"] == "3"

    def test_range(self, world):
        u = world.add_user("alice", ["rw"])
        u.put_blob("acme", "box", "x", b"abcde")
        resp = u.get_blob("acme", "box", "x", (1, 3))
        assert resp.status_code == 206 and resp.content == b"bcd"
        assert resp.headers["content-range"] == "bytes 1-3/5"
        assert failure(u.get_blob, "acme", "box", "x", (2, 9)).status == 416

    def test_blocks(self, world):
        u = world.add_user("alice", ["rw"])
        ids = [block_id_for(i) for i in range(2)]
        u.put_block("acme", "box", "b", ids[1], b"de")
        u.put_block("acme", "box", "b", ids[0], b"abc")
        u.commit("acme", "box", "b", ids)
        assert u.get_blob("acme", "box", "b").content == b"abcde"

    def test_pages(self, world):
        u = world.add_user("alice", ["rw"])
        world.admin.json("PUT", "/admin/quotas/alice", json={"limit": 50})
        u.create_page_blob("acme", "box", "disk", 2048)
        u.write_pages("acme", "box", "disk", 512, b"\x07" * 512)
        assert u.page_ranges("acme", "box", "disk") == [[512, 1024]]
        body = u.get_blob("acme", "box", "disk").content
        assert body == bytes(512) + b"\x07" * 512 + bytes(1024)
        u.clear_pages("acme", "box", "disk", 512, 512)
        assert u.page_ranges("acme", "box", "disk") == []
        assert failure(u.write_pages, "acme", "box", "disk", 100, bytes(512)).reason == "NotAligned"
        assert failure(u.create_page_blob, "acme", "box", "odd", 1000).reason == "SizeNotAligned"

    def test_listing(self, world):
        u = world.add_user("alice", ["rw"])
        world.admin.json("PUT", "/admin/quotas/alice", json={"limit": 50})
        for n in ("b", "a", "c"):
            u.put_blob("acme", "box", n, b"1")
        assert [i["name"] for i in u.list_all("acme", "box", page_size=2)] == ["a", "b", "c"]


class TestPipeline:
    def test_missing_token(self, world):
        anon = world.client()
        err = failure(anon.put_blob, "acme", "box", "x", b"1")
        assert (err.status, err.reason) == (401, "NoSession")

    def test_revoked_token(self, world):
        u = world.add_user("alice", ["rw"])
        u.logout()
        assert failure(u.get_blob, "acme", "box", "x").status == 401

    def test_expired_token(self, world):
        u = world.add_user("alice", ["rw"])
        world.clock.advance(3601)
        assert failure(u.get_blob, "acme", "box", "x").status == 401

    def test_forbidden_does_not_consume(self, world):
        u = world.add_user("bob", ["nobody"])
        digest = world.service.store.state_digest()
        err = failure(u.put_blob, "acme", "box", "x", b"1")
        assert (err.status, err.reason) == (403, "NoPermission")
        assert u.quota()["count"] == 0
        assert world.service.store.state_digest() == digest

    def test_throttled(self, world):
        world.clock.now = 1_000_040.0  # windows start at multiples of 60; 40 s remain
        u = world.add_user("alice", ["rw"])
        u.put_blob("acme", "box", "x", b"1")
        for _ in range(4):
            u.get_blob("acme", "box", "x")
        digest = world.service.store.state_digest()
        err = failure(u.put_blob, "acme", "box", "x", b"changed")
        assert (err.status, err.reason, err.retry_after) == (429, "Throttled", 40)
        assert world.service.store.state_digest() == digest
        world.clock.advance(40)
        assert u.get_blob("acme", "box", "x").content == b"1"

    def test_failed_execution_is_free(self, world):
        u = world.add_user("alice", ["rw"])
        assert failure(u.get_blob, "acme", "box", "missing").status == 404
        assert u.quota()["count"] == 0

    def test_status_mapping(self, world):
        u = world.add_user("alice", ["rw"])
        world.admin.json("PUT", "/admin/quotas/alice", json={"limit": 100})
        u.create_page_blob("acme", "box", "pg", 512)
        cases = [
            (lambda: u.put_blob("acme", "box", "pg", b"x"), 409, "WrongBlobType"),
            (lambda: u.commit("acme", "box", "nb", [block_id_for(9)]), 400, "MissingBlock"),
            (lambda: u.put_block("acme", "box", "b", block_id_for(1), bytes(4 * 2**20 + 1)), 413, "BlockTooLarge"),
            (lambda: u.put_blob("acme", "box", "big", bytes((1 << 20) + 1)), 413, "AccountCapExceeded"),
            (lambda: u.request("PUT", "/acme/box/x", params={"comp": "block", "blockid": "!!"}), 400, "InvalidBlockId"),
            (lambda: world.admin.get_blob("acme", "nobox", "x"), 404, "NoSuchContainer"),
        ]
        for fn, status, reason in cases:
            err = failure(fn)
            assert (err.status, err.reason) == (status, reason)

    def test_unroutable(self, world):
        before = world.service.store.mutations
        err = failure(world.admin.request, "GET", "/admin/nonexistent")
        assert (err.status, err.reason) == (404, "NoSuchRoute")
        err = failure(world.client().request, "GET", "/justone")
        assert err.status == 404
        assert world.service.store.mutations == before

    def test_every_request_audited(self, world):
        u = world.add_user("alice", ["rw"])
        start = len(audit(world))
        u.put_blob("acme", "box", "x", b"1")
        failure(world.client().get_blob, "acme", "box", "x")
        failure(u.get_blob, "acme", "box", "missing")
        records = audit(world)[start:]
        assert [(r.action, r.status, r.decision) for r in records] == [
            ("Write", 201, "Grant"), ("Read", 401, "Deny"), ("Read", 404, "Grant"),
        ]
        assert records[0].user == "alice" and records[1].user is None
        assert records[0].resource == "acme/box/x"


class TestSessions:
    def test_login_errors(self, world):
        world.admin.json("POST", "/admin/users", json={"id": "carol", "secret": "pw"})
        c = world.client()
        assert failure(c.login, "carol", "bad").status == 401
        err = failure(c.login, "carol", "pw", ["rw"])
        assert (err.status, err.reason) == (409, "RoleNotAssigned")
        info = c.login("carol", "pw")
        assert info["active_roles"] == [] and len(info["token"]) >= 43

    def test_activation_endpoints(self, world):
        u = world.add_user("alice", ["rw"])
        u.request("DELETE", "/auth/sessions/current/roles/rw")
        assert u.json("GET", "/auth/sessions/current")["active_roles"] == []
        assert failure(u.put_blob, "acme", "box", "x", b"1").status == 403
        u.request("PUT", "/auth/sessions/current/roles/rw")
        u.put_blob("acme", "box", "x", b"1")


class TestAdmin:
    def test_role_and_cardinality(self, world):
        a = world.admin
        role = a.json("POST", "/admin/roles", json={"name": "auditor", "max_members": 2})
        assert role["max_members"] == 2 and role["members"] == []
        for u in ("u1", "u2", "u3"):
            a.json("POST", "/admin/users", json={"id": u})
        a.json("POST", "/admin/assignments", json={"user": "u1", "role": "auditor"})
        a.json("POST", "/admin/assignments", json={"user": "u2", "role": "auditor"})
        err = failure(a.json, "POST", "/admin/assignments", json={"user": "u3", "role": "auditor"})
        assert (err.status, err.reason) == (409, "CardinalityExceeded")

    def test_non_admin_forbidden(self, world):
        u = world.add_user("alice", ["rw"])
        for method, path, body in [
            ("POST", "/admin/roles", {"name": "x"}),
            ("GET", "/admin/roles", None),
            ("POST", "/admin/accounts", {"name": "evil"}),
            ("PUT", "/admin/quotas/alice", {"limit": 1000}),
        ]:
            err = failure(u.request, method, path, json=body)
            assert err.status == 403
        assert [r.name for r in world.service.store.accounts()] == ["acme"]

    def test_validation(self, world):
        a = world.admin
        assert failure(a.json, "POST", "/admin/roles", json={"name": "x", "max_members": 0}).reason == "InvalidRequest"
        assert failure(a.json, "POST", "/admin/roles", json={"nam": "x"}).reason == "InvalidRequest"
        assert failure(a.json, "POST", "/admin/ssd", json={"roles": ["rw"]}).status == 400
        assert failure(a.json, "POST", "/admin/hierarchy", json={"senior": "rw", "junior": "rw"}).reason == "CycleDetected"
        assert failure(a.json, "POST", "/admin/accounts", json={"name": "admin"}).reason == "InvalidName"

    def test_tiers_and_quota_status(self, world):
        a = world.admin
        a.json("PUT", "/admin/tiers/premium", json={"multiplier": "2"})
        world.add_user("alice", ["rw"], tier="premium")
        assert a.quota("alice")["limit"] == 10
        a.json("PUT", "/admin/quotas/alice", json={"limit": 100})
        assert a.quota("alice")["limit"] == 200
        a.json("DELETE", "/admin/quotas/alice")
        assert a.quota("alice")["limit"] == 10

    def test_direct_grant_for_roleless_user(self, world):
        a = world.admin
        a.json("POST", "/admin/users", json={"id": "dora", "secret": "pw"})
        a.json("POST", "/admin/users/dora/permissions", json={"action": "Read", "scope": "acme/box/x"})
        a.json("PUT", "/admin/quotas/dora", json={"limit": 3})
        world.add_user("alice", ["rw"]).put_blob("acme", "box", "x", b"shared")
        d = world.client_for("dora", "pw")
        assert d.get_blob("acme", "box", "x").content == b"shared"
        assert failure(d.get_blob, "acme", "box", "y").status == 403

    def test_admin_calls_persist_snapshot(self, world):
        world.admin.json("POST", "/admin/roles", json={"name": "fresh"})
        from blobguard.persistence import load_snapshot

        assert "fresh" in {r["id"] for r in load_snapshot(world.config.snapshot)["policy"]["roles"]}
