from collections import deque
from ipaddress import IPv4Address

import pytest
from hypothesis import given
from hypothesis import strategies as st

from treenet.lifecycle import (Action, Ev, EventBuffer, ParentInfo, State, decode_ack, encode_ack,
                               rank_candidates, transition)
from treenet.network import Network
from treenet.routing import INFINITY
from treenet.scenario import parse
from treenet.wire import HEADER, Category, LifecycleType

S, E = State, Ev


def test_root_goes_straight_to_active():
    assert transition(S.INIT, E.START, True) == (S.ACTIVE, [Action.BECOME_ROOT])


def test_non_root_starts_by_searching():
    assert transition(S.INIT, E.START, False) == (S.SEARCH, [Action.SCAN])


def test_parent_loss_starts_recovery_and_alerts_children():
    new, acts = transition(S.ACTIVE, E.PARENT_LOST, False)
    assert new == S.PARENT_RECOVERY
    assert acts == [Action.SEND_TBA, Action.RECOVER]


def test_restored_notice_reactivates():
    assert transition(S.RECOVERY_AWAIT, E.TRN, False)[0] == S.ACTIVE


@pytest.mark.parametrize("state,event,target", [
    (S.SEARCH, E.CANDIDATES_FOUND, S.JOIN_NETWORK),
    (S.SEARCH, E.NO_CANDIDATES, S.SEARCH),
    (S.JOIN_NETWORK, E.JOINED, S.ACTIVE),
    (S.JOIN_NETWORK, E.JOIN_FAILED, S.SEARCH),
    (S.ACTIVE, E.JOB_STARTED, S.EXECUTE_JOB),
    (S.EXECUTE_JOB, E.JOB_FINISHED, S.ACTIVE),
    (S.EXECUTE_JOB, E.PARENT_LOST, S.PARENT_RECOVERY),
    (S.PARENT_RECOVERY, E.RECOVERED, S.ACTIVE),
    (S.PARENT_RECOVERY, E.RECOVERY_FAILED, S.NODE_RESTART),
    (S.NODE_RESTART, E.RESTART_DONE, S.SEARCH),
    (S.ACTIVE, E.TBA, S.RECOVERY_AWAIT),
    (S.ACTIVE, E.ROOT_UNREACHABLE, S.RECOVERY_AWAIT),
    (S.RECOVERY_AWAIT, E.PRN, S.PARENT_RECOVERY),
    (S.RECOVERY_AWAIT, E.ROOT_REACHABLE, S.ACTIVE),
])
def test_transition_table(state, event, target):
    assert transition(state, event, False)[0] == target


@pytest.mark.parametrize("state", list(State))
@pytest.mark.parametrize("event", list(Ev))
def test_root_never_leaves_operational_states(state, event):
    res = transition(state, event, True)
    if res is not None:
        assert res[0] in (S.INIT, S.ACTIVE, S.EXECUTE_JOB)


def test_root_ignores_safeguard_and_alerts():
    for ev in (E.ROOT_UNREACHABLE, E.TBA, E.PARENT_LOST, E.PRN):
        assert transition(S.ACTIVE, ev, True) is None


def test_invalid_events_have_no_transition():
    assert transition(S.SEARCH, E.TRN, False) is None
    assert transition(S.INIT, E.JOINED, False) is None


def test_buffer_is_fifo():
    b = EventBuffer(4)
    for x in "abc":
        b.push(x)
    assert list(b.drain()) == ["a", "b", "c"]
    with pytest.raises(IndexError):
        b.pop()


def test_full_buffer_overwrites_oldest():
    b = EventBuffer(3)
    for x in "abcde":
        b.push(x)
    assert b.overwritten == 2
    assert list(b.drain()) == ["c", "d", "e"]


@given(st.integers(1, 8), st.lists(st.one_of(st.integers(0, 99), st.none()), max_size=80))
def test_buffer_matches_bounded_deque(cap, ops):
    b = EventBuffer(cap)
    ref: deque = deque(maxlen=cap)
    dropped = 0
    for op in ops:
        if op is None:
            if ref:
                assert b.pop() == ref.popleft()
        else:
            if len(ref) == cap:
                dropped += 1
            ref.append(op)
            b.push(op)
        assert len(b) == len(ref)
    assert b.overwritten == dropped
    assert list(b.drain()) == list(ref)


def info(ip, hops, children, quality=1.0, accepting=True):
    return ParentInfo(IPv4Address(ip), hops, children, S.ACTIVE, accepting, quality)


def test_ranking_prefers_shallow_then_sparse_then_quality_then_address():
    a = info("10.0.5.1", 2, 0)
    b = info("10.0.4.1", 1, 3)
    c = info("10.0.3.1", 1, 1, quality=0.5)
    d = info("10.0.2.1", 1, 1, quality=0.9)
    e = info("10.0.1.1", 1, 1, quality=0.9)
    f = info("10.0.0.1", 0, 0, accepting=False)
    assert rank_candidates([a, b, c, d, e, f]) == [e, d, c, b, a]


def test_pir_round_trip():
    p = ParentInfo(IPv4Address("10.1.2.1"), 3, 2, S.RECOVERY_AWAIT, False)
    assert ParentInfo.decode(p.ap_ip, p.encode()) == p


def test_pir_clamps_infinite_hops():
    p = ParentInfo(IPv4Address("10.1.2.1"), 999, 0, S.ACTIVE, True)
    assert ParentInfo.decode(p.ap_ip, p.encode()).hops_to_root == INFINITY


def test_ack_round_trip():
    assert decode_ack(encode_ack(True, IPv4Address("10.0.1.1"), 2)) == (True, IPv4Address("10.0.1.1"), 2)


# -- behaviour inside running networks ----------------------------------

def build(nodes, edges, order, **extra):
    specs = []
    for i, n in enumerate(nodes):
        specs.append(dict(id=n, mac=f"02:00:00:00:01:{i + 1:02x}", kind="class-32", root=i == 0))
    data = dict(name="t", seed=extra.pop("seed", 0), duration=extra.pop("duration", 120_000), nodes=specs,
                visibility=[list(e) for e in edges], join_order=order)
    data.update(extra)
    return Network(parse(data))


def states_of(net, node):
    return [(r.t, r.fields.get("frm"), r.fields["to"], r.fields.get("ev")) for r in net.sim.records
            if r.kind == "state" and r.node == node]


def tap(net):
    """Record (src, dst, lifecycle type) for every lifecycle frame offered to the radio."""
    seen: list[tuple[str, str, int]] = []

    def flt(frame, src, dst):
        if len(frame) >= HEADER.size and frame[2] == Category.LIFECYCLE:
            seen.append((src, dst, frame[3]))
        return False
    net.radio.drop_filters.insert(0, flt)
    return seen


def test_single_candidate_join_takes_four_frames():
    net = build(["R", "A"], [("R", "A")], ["A"])
    seen = tap(net)
    net.run(20_000)
    assert net.nodes["A"].state == S.ACTIVE
    assert sorted(t for _, _, t in seen) == sorted([LifecycleType.PDR, LifecycleType.PIR,
                                                    LifecycleType.CRR, LifecycleType.ACK])


def test_ack_loss_falls_back_to_second_candidate():
    # A prefers the root (fewer hops) but never hears its ACK
    net = build(["R", "P", "A"], [("R", "P"), ("R", "A"), ("P", "A")], ["P", "A"],
                drops=[dict(category="lifecycle", type="ack", src="R", dst="A")])
    seen = tap(net)
    net.run(40_000)
    assert net.parent_map()["A"] == "P"
    crr_to_root = [x for x in seen if x[:2] == ("A", "R") and x[2] == LifecycleType.CRR]
    assert len(crr_to_root) == 1 + net.timers.crr_retries
    assert net.nodes["A"].state == S.ACTIVE


def test_no_answers_means_back_to_search():
    net = build(["R", "A"], [("R", "A")], ["A"], drops=[dict(category="lifecycle", type="pir", end=6_000)])
    net.run(20_000)
    hist = states_of(net, "A")
    assert any(frm == "JoinNetwork" and to == "Search" for _, frm, to, _ in hist)
    assert net.nodes["A"].state == S.ACTIVE


def test_recovery_keeps_subtree_and_replaces_one_edge():
    net = build(["R", "P", "A", "B"], [("R", "P"), ("P", "A"), ("A", "B")], ["P", "A", "B"],
                faults=[dict(at=30_000, link_up=["R", "A"]), dict(at=40_000, kill="P")])
    net.run(39_000)
    assert net.parent_map() == {"A": "P", "B": "A", "P": "R"}
    net.run(80_000)
    pm = net.parent_map()
    assert pm["A"] == "R" and pm["B"] == "A"
    assert all(net.nodes[n].state == S.ACTIVE for n in ("A", "B"))
    b_hist = [to for t, _, to, _ in states_of(net, "B") if t >= 40_000]
    assert b_hist == ["RecoveryAwait", "Active"]


def test_no_alternative_restarts_layer_by_layer():
    net = build(["R", "P", "A", "B", "C"], [("R", "P"), ("P", "A"), ("A", "B"), ("B", "C")], ["P", "A", "B", "C"],
                faults=[dict(at=40_000, kill="P")], duration=60_000)
    net.run()
    a_states = [to for t, _, to, _ in states_of(net, "A") if t >= 40_000]
    assert "NodeRestart" in a_states
    b_moves = [(t, frm, to, ev) for t, frm, to, ev in states_of(net, "B") if t >= 40_000]
    assert b_moves[0][2] == "RecoveryAwait"
    b_recovery = next(t for t, frm, to, ev in b_moves if to == "ParentRecovery")
    assert next(ev for t, frm, to, ev in b_moves if to == "ParentRecovery") == "prn"
    c_moves = [(t, to) for t, _, to, _ in states_of(net, "C") if t >= 40_000]
    # C is still suspended while its parent B is looking for a new parent
    c_before = [to for t, to in c_moves if t <= b_recovery]
    assert c_before == ["RecoveryAwait"]
    c_recovery = [t for t, to in c_moves if to == "ParentRecovery"]
    assert not c_recovery or c_recovery[0] > b_recovery


def test_lost_trn_recovered_by_routing_safeguard():
    net = build(["R", "P", "A", "B"], [("R", "P"), ("P", "A"), ("A", "B")], ["P", "A", "B"],
                faults=[dict(at=30_000, link_up=["R", "A"]), dict(at=40_000, kill="P")],
                drops=[dict(category="lifecycle", type="trn", start=40_000)])
    net.run(80_000)
    b = [(to, ev) for t, _, to, ev in states_of(net, "B") if t >= 40_000]
    assert b == [("RecoveryAwait", "tba"), ("Active", "root-reachable")]


def test_lost_tba_still_suspends_descendants():
    net = build(["R", "P", "A", "B"], [("R", "P"), ("P", "A"), ("A", "B")], ["P", "A", "B"],
                faults=[dict(at=30_000, link_up=["R", "A"]), dict(at=40_000, kill="P")],
                drops=[dict(category="lifecycle", type="tba", start=40_000)])
    net.run(80_000)
    b = [(to, ev) for t, _, to, ev in states_of(net, "B") if t >= 40_000]
    assert b[0] == ("RecoveryAwait", "root-unreachable")
    assert net.nodes["B"].state == S.ACTIVE


def test_restart_sends_one_prn_per_child_and_clears_table():
    net = build(["R", "P", "A", "B1", "B2"], [("R", "P"), ("P", "A"), ("A", "B1"), ("A", "B2")],
                ["P", "A", "B1", "B2"], faults=[dict(at=40_000, kill="P")], duration=44_000)
    seen = tap(net)
    a = net.nodes["A"]
    sizes = []

    def on_state(rec):
        if rec.kind == "state" and rec.node == "A" and rec.fields["to"] == "Search" and rec.t > 40_000:
            sizes.append(len(a.table.entries))
    net.sim.sinks.append(on_state)
    net.run()
    prn = [x for x in seen if x[0] == "A" and x[2] == LifecycleType.PRN]
    assert sorted(d for _, d, _ in prn) == ["B1", "B2"]
    assert sizes and sizes[0] == 0


def test_restarted_node_regains_full_table():
    # P dies; A has nowhere to go until P comes back as a link to R via a new edge
    net = build(["R", "P", "A", "B"], [("R", "P"), ("P", "A"), ("A", "B")], ["P", "A", "B"],
                faults=[dict(at=40_000, kill="P"), dict(at=50_000, link_up=["R", "A"])],
                duration=50_000 + 2 * 5 * 60_000)
    net.run()
    a = net.nodes["A"]
    assert a.state == S.ACTIVE
    for other in ("R", "B"):
        e = a.table.get(net.nodes[other].ap_ip)
        assert e is not None and e.reachable and e.hops == 1


def test_integration_total_is_sum_of_states():
    net = build(["R", "A", "B"], [("R", "A"), ("A", "B")], ["A", "B"])
    net.run(30_000)
    recs = [r for r in net.sim.records if r.kind == "obs" and r.fields.get("what") == "integration"]
    assert len(recs) == 2
    for r in recs:
        f = r.fields
        assert f["total"] == f["init"] + f["search"] + f["join"]


def test_invalid_event_ignored_with_note():
    net = build(["R", "A"], [("R", "A")], ["A"])
    net.run(20_000)
    a = net.nodes["A"]
    a.push(Ev.TRN)
    net.run(20_100)
    assert a.state == S.ACTIVE
    assert any(r.kind == "lifecycle" and r.fields.get("ignored") == "trn" for r in net.sim.records)
