from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, precondition, rule

from blobguard.errors import (
    AuthFailed,
    CardinalityExceeded,
    CycleDetected,
    DsdViolation,
    DuplicateAssignment,
    DuplicateRoleName,
    ExistingViolation,
    InvalidPolicy,
    NoSuchAssignment,
    NoSuchRole,
    NoSuchUser,
    RoleNotAssigned,
    SessionExpired,
    SsdViolation,
)
from blobguard.quota import QuotaPolicy
from blobguard.rbac import Action, DenyReason, Permission, PolicyStore, scope_matches
from oracles import brute_effective, closure_matrix, pattern_regex


def perm(text: str) -> Permission:
    return Permission.parse(text)


def user_with_session(policy: PolicyStore, user: str, roles=()):
    secret = policy.create_user(user)
    for r in roles:
        policy.assign_user(user, r)
    return secret, policy.create_session(user, secret, set(roles))


class TestScopes:
    @pytest.mark.parametrize(
        "pattern,resource,expected",
        [
            ("acme/*", "acme/photos/cat.jpg", True),
            ("acme/*", "acme/photos", True),
            ("acme/*", "acme", False),
            ("acme/photos/*", "acme/photos/a/b/c.png", True),
            ("acme/photos/*", "acme/videos/a", False),
            ("*/photos/*", "other/photos/x", True),
            ("*/photos/*", "other/videos/x", False),
            ("acme/photos", "acme/photos", True),
            ("acme/photos", "acme/photos/x", False),
            ("acme", "acme", True),
            ("acme", "acme/photos", False),
            ("*", "anything/at/all", True),
            ("acme/photos/cat.jpg", "acme/photos/cat.jpg", True),
            ("acme/photos/cat.jpg", "acme/photos/cat.jpg2", False),
        ],
    )
    def test_examples(self, pattern, resource, expected):
        assert scope_matches(pattern, resource) is expected

    seg = st.sampled_from(["acme", "beta", "photos", "logs", "a.txt", "x/y", "*"])

    @given(st.lists(seg, min_size=1, max_size=3), st.lists(st.sampled_from(["acme", "beta", "photos", "logs", "a.txt"]), min_size=1, max_size=3), st.sampled_from(["", "/deep/er"]))
    def test_agrees_with_regex_oracle(self, pattern_parts, resource_parts, tail):
        if any("/" in p for p in pattern_parts[:-1]):
            return
        pattern = "/".join(pattern_parts)
        resource = "/".join(resource_parts) + (tail if len(resource_parts) == 3 else "")
        assert scope_matches(pattern, resource) == bool(pattern_regex(pattern).match(resource))

    def test_admin_never_matches_data_actions(self):
        admin = perm("Admin:*")
        for action in Action:
            if action is not Action.ADMIN:
                assert not admin.matches(action, "acme/photos/x")

    @pytest.mark.parametrize("bad", ["Read", "Fly:acme", "Read:", "Read:acme//x"])
    def test_bad_permissions_rejected(self, bad):
        with pytest.raises(InvalidPolicy):
            Permission.parse(bad)


class TestRoles:
    def test_create_role_fresh(self, policy):
        role = policy.create_role("auditor", 2, QuotaPolicy(10, 60))
        assert role.max_members == 2
        assert policy.member_count("auditor") == 0

    def test_duplicate_role_name(self, policy):
        policy.create_role("auditor", 2)
        with pytest.raises(DuplicateRoleName):
            policy.create_role("auditor", 3)

    def test_unbounded_role(self, policy):
        policy.create_role("ops", None)
        for i in range(50):
            policy.create_user(f"u{i}")
            policy.assign_user(f"u{i}", "ops")
        assert policy.member_count("ops") == 50

    @pytest.mark.parametrize("cap", [0, -1])
    def test_bad_cap(self, policy, cap):
        with pytest.raises(InvalidPolicy):
            policy.create_role("r", cap)


class TestAssignments:
    def test_cardinality_exceeded(self, policy):
        policy.create_role("auditor", 2)
        for u in ("a", "b", "c"):
            policy.create_user(u)
        policy.assign_user("a", "auditor")
        policy.assign_user("b", "auditor")
        with pytest.raises(CardinalityExceeded):
            policy.assign_user("c", "auditor")

    def test_ssd_violation(self, policy):
        policy.create_role("r1")
        policy.create_role("r2")
        policy.add_ssd_pair("r1", "r2")
        policy.create_user("u")
        policy.assign_user("u", "r1")
        with pytest.raises(SsdViolation):
            policy.assign_user("u", "r2")

    def test_fresh_assignment_is_basic(self, policy):
        policy.create_role("r", 5)
        policy.create_user("u")
        a = policy.assign_user("u", "r")
        assert a.tier == "Basic"

    def test_duplicate_assignment(self, policy):
        policy.create_role("r")
        policy.create_user("u")
        policy.assign_user("u", "r")
        with pytest.raises(DuplicateAssignment):
            policy.assign_user("u", "r")

    def test_unknown_parties(self, policy):
        policy.create_role("r")
        with pytest.raises(NoSuchUser):
            policy.assign_user("ghost", "r")
        policy.create_user("u")
        with pytest.raises(NoSuchRole):
            policy.assign_user("u", "ghost")

    def test_revoke(self, policy):
        policy.create_role("r")
        policy.create_user("u")
        policy.assign_user("u", "r")
        policy.revoke_user("u", "r")
        assert policy.member_count("r") == 0
        with pytest.raises(NoSuchAssignment):
            policy.revoke_user("u", "r")

    def test_revoke_shrinks_live_sessions(self, policy):
        policy.create_role("r1")
        policy.create_role("r2")
        _, session = user_with_session(policy, "u", ["r1", "r2"])
        policy.revoke_user("u", "r1")
        assert session.active_roles == {"r2"}


class TestPermissions:
    def test_grant_idempotent(self, policy):
        policy.create_role("r")
        policy.grant_permission_to_role("r", perm("Read:acme/*"))
        policy.grant_permission_to_role("r", perm("Read:acme/*"))
        assert policy.roles["r"].permissions == {perm("Read:acme/*")}

    def test_grant_unknown_role(self, policy):
        with pytest.raises(NoSuchRole):
            policy.grant_permission_to_role("ghost", perm("Read:acme/*"))

    def test_role_grant_enables_access(self, policy):
        policy.create_role("r")
        policy.grant_permission_to_role("r", perm("Write:acct/c1/*"))
        _, session = user_with_session(policy, "u", ["r"])
        assert policy.check_access(session.id, Action.WRITE, "acct/c1/b").granted
        # oracle: closure of {r} holds exactly the granted permission, which the regex matches
        expected = brute_effective(set(), {"r": {("Write", "acct/c1/*")}}, ["r"], [], ["r"])
        assert {(p.action.value, p.scope) for p in policy.effective_permissions("u", {"r"})} == expected

    def test_direct_grant_without_roles(self, policy):
        _, session = user_with_session(policy, "u")
        policy.grant_permission_to_user("u", perm("Read:acct/c/b"))
        policy.grant_permission_to_user("u", perm("Read:acct/c/b"))
        assert policy.users["u"].direct_permissions == {perm("Read:acct/c/b")}
        assert policy.check_access(session.id, "Read", "acct/c/b").granted

    def test_direct_grant_unknown_user(self, policy):
        with pytest.raises(NoSuchUser):
            policy.grant_permission_to_user("ghost", perm("Read:acct/c/b"))


class TestHierarchy:
    def test_cycle_rejected(self, policy):
        policy.create_role("a")
        policy.create_role("b")
        policy.add_inheritance("a", "b")
        with pytest.raises(CycleDetected):
            policy.add_inheritance("b", "a")

    def test_self_edge_rejected(self, policy):
        policy.create_role("a")
        with pytest.raises(CycleDetected):
            policy.add_inheritance("a", "a")

    def test_senior_inherits(self, policy):
        policy.create_role("a")
        policy.create_role("b")
        policy.grant_permission_to_role("b", perm("Read:p/*"))
        policy.add_inheritance("a", "b")
        policy.create_user("u")
        policy.assign_user("u", "a")
        assert perm("Read:p/*") in policy.effective_permissions("u", {"a"})
        assert closure_matrix(["a", "b"], [("a", "b")])["a"] == {"a", "b"}

    def test_diamond_counted_once(self, policy):
        for r in "abcd":
            policy.create_role(r)
            policy.grant_permission_to_role(r, perm(f"Read:acct/{r}xx/*"))
        edges = [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]
        for s, j in edges:
            policy.add_inheritance(s, j)
        policy.create_user("u")
        policy.assign_user("u", "a")
        got = policy.effective_permissions("u", {"a"})
        oracle = brute_effective(
            set(), {r: {("Read", f"acct/{r}xx/*")} for r in "abcd"}, list("abcd"), edges, ["a"]
        )
        assert {(p.action.value, p.scope) for p in got} == oracle
        assert len(got) == 4

    def test_unknown_role_edge(self, policy):
        policy.create_role("a")
        with pytest.raises(NoSuchRole):
            policy.add_inheritance("a", "ghost")

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=40))
    def test_graph_stays_acyclic(self, edge_attempts):
        policy = PolicyStore(hash_iterations=1)
        roles = [f"r{i}" for i in range(8)]
        for r in roles:
            policy.create_role(r)
        for s, j in edge_attempts:
            try:
                policy.add_inheritance(roles[s], roles[j])
            except CycleDetected:
                # oracle agrees it would close a cycle
                assert roles[s] in closure_matrix(roles, policy.edges)[roles[j]]
        # Kahn's algorithm consumes every node iff the graph is a DAG
        indeg = {r: 0 for r in roles}
        for _, j in policy.edges:
            indeg[j] += 1
        ready = [r for r in roles if indeg[r] == 0]
        seen = 0
        while ready:
            r = ready.pop()
            seen += 1
            for s, j in policy.edges:
                if s == r:
                    indeg[j] -= 1
                    if indeg[j] == 0:
                        ready.append(j)
        assert seen == len(roles)


class TestSeparationOfDuty:
    def test_ssd_pair_added_for_disjoint_roles(self, policy):
        policy.create_role("r1")
        policy.create_role("r2")
        policy.add_ssd_pair("r1", "r2")
        assert frozenset({"r1", "r2"}) in policy.ssd_pairs

    def test_ssd_existing_violation(self, policy):
        policy.create_role("r1")
        policy.create_role("r2")
        policy.create_user("u")
        policy.assign_user("u", "r1")
        policy.assign_user("u", "r2")
        with pytest.raises(ExistingViolation):
            policy.add_ssd_pair("r1", "r2")

    def test_degenerate_pair(self, policy):
        policy.create_role("r1")
        with pytest.raises(InvalidPolicy):
            policy.add_ssd_pair("r1", "r1")
        with pytest.raises(InvalidPolicy):
            policy.add_dsd_pair("r1", "r1")

    def test_dsd_existing_violation(self, policy):
        policy.create_role("r1")
        policy.create_role("r2")
        user_with_session(policy, "u", ["r1", "r2"])
        with pytest.raises(ExistingViolation):
            policy.add_dsd_pair("r1", "r2")

    def test_dsd_ignores_expired_sessions(self, policy, clock):
        policy.create_role("r1")
        policy.create_role("r2")
        user_with_session(policy, "u", ["r1", "r2"])
        clock.advance(policy.session_ttl + 1)
        policy.add_dsd_pair("r1", "r2")


class TestSessions:
    def setup_roles(self, policy):
        policy.create_role("r1")
        policy.create_role("r2")
        policy.create_role("r3")
        policy.add_dsd_pair("r1", "r2")
        secret = policy.create_user("u")
        for r in ("r1", "r2", "r3"):
            policy.assign_user("u", r)
        return secret

    def test_bad_credential(self, policy):
        policy.create_user("u", secret="right")
        with pytest.raises(AuthFailed):
            policy.create_session("u", "wrong")
        with pytest.raises(AuthFailed):
            policy.create_session("ghost", "right")

    def test_unassigned_role_requested(self, policy):
        policy.create_role("r1")
        policy.create_role("r2")
        secret = policy.create_user("u")
        policy.assign_user("u", "r1")
        with pytest.raises(RoleNotAssigned):
            policy.create_session("u", secret, {"r1", "r2"})

    def test_dsd_at_creation(self, policy):
        secret = self.setup_roles(policy)
        with pytest.raises(DsdViolation):
            policy.create_session("u", secret, {"r1", "r2"})

    def test_empty_activation_uses_direct_grants(self, policy):
        secret = policy.create_user("u")
        policy.grant_permission_to_user("u", perm("Read:a/b/c"))
        session = policy.create_session("u", secret, set())
        assert session.active_roles == set()
        assert policy.check_access(session.id, "Read", "a/b/c").granted

    def test_token_is_long_random(self, policy):
        secret = policy.create_user("u")
        tokens = {policy.create_session("u", secret).id for _ in range(20)}
        assert len(tokens) == 20
        assert all(len(t) >= 43 for t in tokens)  # 32 random bytes, url-safe base64

    def test_ttl(self, policy, clock):
        secret = policy.create_user("u")
        session = policy.create_session("u", secret)
        assert session.expires_at == session.created_at + 3600
        clock.advance(3600)
        assert policy.check_access(session.id, "Read", "a/b/c").reason is DenyReason.NO_SESSION
        with pytest.raises(SessionExpired):
            policy.activate_role(session.id, "x")

    def test_activation(self, policy):
        secret = self.setup_roles(policy)
        session = policy.create_session("u", secret, {"r1"})
        with pytest.raises(DsdViolation):
            policy.activate_role(session.id, "r2")
        policy.deactivate_role(session.id, "r3")  # not active: no-op
        policy.activate_role(session.id, "r3")
        assert session.active_roles == {"r1", "r3"}
        policy.deactivate_role(session.id, "r1")
        policy.activate_role(session.id, "r2")
        assert session.active_roles == {"r2", "r3"}

    def test_activate_unassigned(self, policy):
        secret = policy.create_user("u")
        policy.create_role("r")
        session = policy.create_session("u", secret)
        with pytest.raises(RoleNotAssigned):
            policy.activate_role(session.id, "r")


class TestCheckAccess:
    def test_empty_union_denies(self, policy):
        _, session = user_with_session(policy, "u")
        d = policy.check_access(session.id, "Read", "a/b/c")
        assert not d.granted and d.reason is DenyReason.NO_PERMISSION

    def test_unknown_session(self, policy):
        assert policy.check_access("nope", "Read", "a/b/c").reason is DenyReason.NO_SESSION

    def test_inactive_role_does_not_count(self, policy):
        policy.create_role("r")
        policy.grant_permission_to_role("r", perm("Read:a/*"))
        secret = policy.create_user("u")
        policy.assign_user("u", "r")
        session = policy.create_session("u", secret, set())
        assert not policy.check_access(session.id, "Read", "a/b/c").granted
        policy.activate_role(session.id, "r")
        assert policy.check_access(session.id, "Read", "a/b/c").granted

    def test_deterministic(self, policy):
        policy.create_role("r")
        policy.grant_permission_to_role("r", perm("Read:a/*"))
        _, session = user_with_session(policy, "u", ["r"])
        decisions = {policy.check_access(session.id, "Read", "a/b/c") for _ in range(10)}
        assert len(decisions) == 1


class TestCardinalityChanges:
    def test_lowering_freezes(self, policy):
        policy.create_role("r", 3)
        for u in "abcd":
            policy.create_user(u)
        for u in "abc":
            policy.assign_user(u, "r")
        policy.set_role_cardinality("r", 2)
        assert policy.member_count("r") == 3
        with pytest.raises(CardinalityExceeded):
            policy.assign_user("d", "r")
        policy.revoke_user("a", "r")
        with pytest.raises(CardinalityExceeded):
            policy.assign_user("d", "r")  # 2 members, cap 2
        policy.set_role_cardinality("r", 4)
        policy.assign_user("d", "r")

    def test_zero_cap_rejected(self, policy):
        policy.create_role("r", 3)
        with pytest.raises(InvalidPolicy):
            policy.set_role_cardinality("r", 0)

    def test_unknown_role(self, policy):
        with pytest.raises(NoSuchRole):
            policy.set_role_cardinality("ghost", 2)


class TestTiers:
    def test_defaults(self, policy):
        assert policy.tiers["Basic"].quota_multiplier == 1
        assert policy.tiers["Premium"].quota_multiplier == 2

    def test_multiplier_floor(self, policy):
        with pytest.raises(InvalidPolicy):
            policy.define_tier("Cheap", "1/2")
        with pytest.raises(InvalidPolicy):
            policy.define_tier("Basic", 3)
        assert policy.define_tier("Gold", "3/2").quota_multiplier == pytest.approx(1.5)


class PolicyMachine(RuleBasedStateMachine):
    """Random interleavings of every mutating operation; invariants after each."""

    users = [f"u{i}" for i in range(4)]
    roles = [f"r{i}" for i in range(4)]

    def __init__(self) -> None:
        super().__init__()
        self.clock_now = 0.0
        self.policy = PolicyStore(clock=lambda: self.clock_now, hash_iterations=1)
        self.secrets = {u: self.policy.create_user(u) for u in self.users}
        for r in self.roles:
            self.policy.create_role(r, 2)
        self.lowered: set = set()
        self.sessions = []

    @rule(u=st.sampled_from(users), r=st.sampled_from(roles))
    def assign(self, u, r):
        before = self.policy.member_count(r)
        cap = self.policy.roles[r].max_members
        try:
            self.policy.assign_user(u, r)
        except (CardinalityExceeded, SsdViolation, DuplicateAssignment):
            return
        assert cap is None or before < cap

    @rule(u=st.sampled_from(users), r=st.sampled_from(roles))
    def revoke(self, u, r):
        try:
            self.policy.revoke_user(u, r)
        except NoSuchAssignment:
            pass

    @rule(r=st.sampled_from(roles), cap=st.one_of(st.none(), st.integers(1, 4)))
    def set_cap(self, r, cap):
        self.policy.set_role_cardinality(r, cap)

    @rule(a=st.sampled_from(roles), b=st.sampled_from(roles))
    def ssd(self, a, b):
        try:
            self.policy.add_ssd_pair(a, b)
        except (ExistingViolation, InvalidPolicy):
            pass

    @rule(a=st.sampled_from(roles), b=st.sampled_from(roles))
    def dsd(self, a, b):
        try:
            self.policy.add_dsd_pair(a, b)
        except (ExistingViolation, InvalidPolicy):
            pass

    @rule(u=st.sampled_from(users), want=st.sets(st.sampled_from(roles), max_size=3))
    def open_session(self, u, want):
        try:
            self.sessions.append(self.policy.create_session(u, self.secrets[u], want))
        except (RoleNotAssigned, DsdViolation):
            pass

    @precondition(lambda self: self.sessions)
    @rule(i=st.integers(0, 100), r=st.sampled_from(roles))
    def activate(self, i, r):
        s = self.sessions[i % len(self.sessions)]
        try:
            self.policy.activate_role(s.id, r)
        except (RoleNotAssigned, DsdViolation, SessionExpired):
            pass

    @rule()
    def tick(self):
        self.clock_now += 600

    @invariant()
    def constraints_hold(self):
        p = self.policy
        for u in self.users:
            held = p.assigned_roles(u)
            for pair in p.ssd_pairs:
                assert not pair <= held
        for s in p.sessions.values():
            assert s.active_roles <= p.assigned_roles(s.user_id)
            if s.live(self.clock_now):
                for pair in p.dsd_pairs:
                    assert not pair <= s.active_roles


TestPolicyMachine = PolicyMachine.TestCase
TestPolicyMachine.settings = settings(max_examples=60, stateful_step_count=40, deadline=None)
