"""One test per acceptance criterion; the terminal summary prints a PASS/FAIL line for each."""
import random
import time
from pathlib import Path
from statistics import mean

import numpy as np
import pytest

from helpers import ADVERTS, D, ME, STORED, S, loop_free, reference, route_mismatches
from treenet.network import Network, expected_inputs
from treenet.nn.oracle import forward
from treenet.routing import INFINITY, RouteEntry, RoutingTable, UpdateKind
from treenet.runner import run_scenario
from treenet.scenario import RandomModelSpec, load, random_tree
from treenet.scenario import testbed as five_node

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
SEEDS = range(10)
WORKERS = ("E1", "E2", "E3", "Pi")


def conserved(net, report) -> bool:
    """Every frame the radio handed the observer lands in exactly one bucket."""
    observer = report.observer
    delivered = sum(c.delivered for (_, dst), c in net.radio.counters.items() if dst == observer)
    rx = [r for r in net.sim.records if r.kind == "rx" and r.node == observer]
    return (sum(report.frames.values()) == len(rx) == delivered
            and report.total == sum(int(r.fields["size"]) for r in rx))


# -- 1 ------------------------------------------------------------------

@pytest.mark.parametrize("n,seed", [(5, 0), (7, 1), (12, 2), (20, 3), (33, 4), (50, 5), (50, 6)])
def test_criterion_01_routing_convergence(n, seed):
    cfg, parent = random_tree(n, seed)
    net = Network(cfg)
    began = time.perf_counter()
    last_join = max(cfg.start_times().values())
    stabilized = last_join + 60_000
    net.run(stabilized + 2 * cfg.timers.fru_every * cfg.timers.routing_period)
    elapsed = time.perf_counter() - began
    assert net.parent_map() == dict(sorted(parent.items()))
    assert route_mismatches(net, parent) == []
    assert loop_free(net) == []
    assert elapsed < 10.0


# -- 2 ------------------------------------------------------------------

def test_criterion_02_distance_vector_rules():
    checked = 0
    for stored in STORED:
        for hops, seq in ADVERTS:
            t = RoutingTable(ME)
            if stored is not None:
                t.entries[D] = RouteEntry(D, *stored)
            kind, want = reference(stored, S, hops, seq)
            assert t.apply_advertisement(S, D, hops, seq).value == kind
            e = t.entries[D]
            assert (e.next_hop, e.hops, e.seq) == want
            assert (e.seq % 2 == 1) == (e.hops == INFINITY)
            checked += 1
    assert checked == len(STORED) * len(ADVERTS)
    # losing a neighbour invalidates everything reached through it and nothing else
    rng = random.Random(2)
    for _ in range(200):
        t = RoutingTable(ME)
        for k in range(2, 30):
            # destinations never coincide with the neighbours S (x.1), x.40 and x.41
            via = rng.choice([S, ME + 256 * 40, ME + 256 * 41])
            t.apply_advertisement(via, via, 0, 2 * rng.randint(1, 5))
            t.apply_advertisement(via, ME + 256 * k, rng.randint(1, 5), 2 * rng.randint(1, 5))
        before = {d: e.next_hop for d, e in t.entries.items() if e.reachable}
        lost = t.mark_neighbor_unreachable(S)
        assert sorted(lost) == sorted(d for d, hop in before.items() if hop == S)
        for d, e in t.entries.items():
            assert e.reachable == (d in before and before[d] != S)
            assert (e.seq % 2 == 1) == (e.hops == INFINITY)
        t.build_update(UpdateKind.FRU)
        assert t.own_seq % 2 == 0


# -- 3 ------------------------------------------------------------------

def descendants(parent: dict[str, str], node: str) -> dict[str, int]:
    """Descendant -> depth below ``node``."""
    out: dict[str, int] = {}
    frontier = {node: 0}
    while frontier:
        nxt = {}
        for p, d in frontier.items():
            for c, pp in parent.items():
                if pp == p:
                    out[c] = d + 1
                    nxt[c] = d + 1
        frontier = nxt
    return out


def recovery_run(seed, victim, drop_alerts):
    kill_at = 40_000
    drops = [dict(category="lifecycle", type="tba")] if drop_alerts else []
    net = Network(five_node("none", seed=seed, workload=False, duration=150_000,
                            faults=[dict(at=kill_at, kill=victim)], drops=drops))
    net.run(kill_at - 1)
    before = net.parent_map()
    net.run()
    return net, before, kill_at


def test_criterion_03_recovery():
    stuck = []
    suspended_without_alert = 0
    for seed in range(25):
        for victim in WORKERS:
            for drop_alerts in (False, True):
                net, before, kill_at = recovery_run(seed, victim, drop_alerts)
                pm = net.parent_map()
                for n in net.alive():
                    x, steps = n.id, 0
                    while x != "R" and steps < 5:
                        x, steps = pm.get(x, "?"), steps + 1
                    if n.state.value != "Active" or x != "R":
                        stuck.append((seed, victim, drop_alerts, n.id, n.state.value))
                below = descendants(before, victim)
                states = [r for r in net.sim.records if r.kind == "state" and r.t >= kill_at]
                back, attached = {}, {}
                for r in net.sim.records:
                    if r.t < kill_at:
                        continue
                    if r.kind == "state" and r.fields["to"] == "Active":
                        back[r.node] = r.t
                    elif r.kind == "link" and r.fields["op"] == "up":
                        attached.setdefault(r.node, r.t)
                # a subtree comes back from the top: nobody reactivates before its parent is attached again
                for c in below:
                    p = pm.get(c)
                    if p in below:
                        assert back[c] >= attached[p], (seed, victim, c, p)
                        if c in attached:
                            assert attached[c] >= attached[p], (seed, victim, c, p)
                if drop_alerts:
                    if any(depth >= 2 for depth in below.values()):
                        assert sum(d.hits for d in net.drop_rules) > 0
                    for c, depth in below.items():
                        if depth < 2:
                            continue
                        evs = [r.fields["ev"] for r in states if r.node == c and r.fields["to"] == "RecoveryAwait"]
                        assert evs and evs[0] == "root-unreachable", (seed, victim, c, evs)
                        suspended_without_alert += 1
    assert stuck == []
    assert suspended_without_alert > 0


# -- 4 ------------------------------------------------------------------

@pytest.mark.parametrize("order,pi_layers", [
    (None, [1, 1, 1, 1, 2]),                     # the stock join order: Pi registers first
    (["E1", "E2", "E3", "Pi"], [1, 2, 2, 2, 2]),
    (["E2", "Pi", "E3", "E1"], None),            # Pi in the middle: only counts and contiguity
], ids=["pi-first", "pi-last", "pi-middle"])
def test_criterion_04_assignment(order, pi_layers):
    cfg = load(SCENARIOS / "testbed-pubsub.yaml")
    cfg = cfg.model_copy(update={"join_order": order or cfg.join_order, "duration": 30_000})
    b = run_scenario(cfg)
    net = b.network
    assert net.model.sizes == [2, 4, 4, 2]
    plans = {k: sorted(n.app.plan.neurons) for k, n in net.nodes.items() if n.app.plan is not None}
    assert {k: len(v) for k, v in plans.items() if v} == {"E1": 1, "E2": 1, "E3": 1, "Pi": 5, "R": 2}
    assert plans["R"] == [(3, 0), (3, 1)]
    if pi_layers is not None:
        # one whole hidden layer plus a single neuron of the other
        assert [layer for layer, _ in plans["Pi"]] == pi_layers
    # contiguous runs handed out in registration order
    by_ip = {n.ap_ip: k for k, n in net.nodes.items()}
    walk = [nid for ip in net.nodes["R"].app.regs if by_ip[ip] in WORKERS for nid in plans[by_ip[ip]]]
    assert walk == net.model.hidden_ids()
    assert all(v.status == "match" for v in b.verdicts)


# -- 5 ------------------------------------------------------------------

def test_criterion_05_inference_oracle():
    began = time.perf_counter()
    failures, nacks, runs = [], 0, 0
    for m in range(100):
        rng = random.Random(f"model:{m}")
        sizes = [rng.randint(1, 8) for _ in range(rng.randint(2, 4))]
        act = rng.choice(["identity", "sigmoid", "tanh", "relu"])
        for kind in ("pubsub", "topology", "inject"):
            b = run_scenario(five_node(kind, seed=m, samples=3, quotas=None,
                                       model=RandomModelSpec(sizes=sizes, seed=m, activation=act)))
            net = b.network
            runs += 1
            nacks += b.nacks
            if len(net.results) != 3:
                failures.append((m, kind, "incomplete"))
            for i, got in net.results.items():
                err = float(np.max(np.abs(np.asarray(got) - forward(net.model, expected_inputs(net, i)))))
                if err > 1e-9:
                    failures.append((m, kind, i, err))
    elapsed = time.perf_counter() - began
    print(f"\n  {runs} runs, {nacks} NACKs, {elapsed:.1f} s")
    assert failures == []
    assert nacks == 0
    assert elapsed < 60.0


# -- 6 ------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["pubsub", "topology", "none"])
def test_criterion_06_fault_semantics(kind):
    lost = run_scenario(five_node(kind, seed=2, drops=[dict(category="data", type="neuron_output",
                                                               start=26_000, count=1)]))
    assert sum(d.hits for d in lost.network.drop_rules) == 1
    assert lost.nacks >= 1 and lost.fallbacks == 0
    assert [v.status for v in lost.verdicts] == ["match"] * 10

    dead = run_scenario(five_node(kind, seed=2, faults=[dict(at=30_500, kill="E3")]))
    assert dead.fallbacks >= 1
    statuses = [v.status for v in dead.verdicts]
    assert "incomplete" not in statuses and "mismatch" not in statuses
    assert "degraded" in statuses


# -- 7, 8, 9 ---------------------------------------------------------------

def forwarded_neuron_bytes(b) -> int:
    return b.throughput.neuron_output_forwarded


def test_criterion_07_forwarded_bytes():
    topo = [forwarded_neuron_bytes(run_scenario(five_node("topology", seed=s))) for s in SEEDS]
    pubsub = [forwarded_neuron_bytes(run_scenario(five_node("pubsub", seed=s))) for s in SEEDS]
    print(f"\n  forwarded neuron-output bytes at root: topology {mean(topo):.0f}, pubsub {mean(pubsub):.0f}")
    assert mean(topo) <= mean(pubsub)
    assert 1 - mean(topo) / mean(pubsub) >= 0.20


def mean_duration(cfg) -> float:
    return run_scenario(cfg).timing.mean_inference()


def test_criterion_08_duration_ordering():
    means = {k: mean(mean_duration(five_node(k, seed=s)) for s in SEEDS) for k in ("inject", "topology", "pubsub")}
    print("\n  mean inference duration (ms): " + ", ".join(f"{k} {v:.1f}" for k, v in means.items()))
    assert means["inject"] < means["topology"] < means["pubsub"]


def test_criterion_09_join_order_sensitivity():
    first, last = [], []
    for s in SEEDS:
        others = ["E1", "E2", "E3"]
        random.Random(s).shuffle(others)
        first.append(mean_duration(five_node("topology", seed=s, join_order=["R", "Pi"] + others)))
        last.append(mean_duration(five_node("topology", seed=s, join_order=["R"] + others + ["Pi"])))
    print(f"\n  cap-3 node first {mean(first):.1f} ms, last {mean(last):.1f} ms")
    assert mean(first) < mean(last)


# -- 10 -----------------------------------------------------------------

def test_criterion_10_throughput_accounting():
    for kind in ("pubsub", "topology", "inject", "none"):
        b = run_scenario(five_node(kind, seed=1))
        assert conserved(b.network, b.throughput), kind
    bare = run_scenario(five_node("none", seed=0, workload=False, duration=600_000))
    rep = bare.throughput
    assert conserved(bare.network, rep)
    assert rep.bytes["data"] == 0 and rep.bytes["middleware"] == 0
    assert bare.config.timers.routing_period == 60_000
    print(f"\n  routing share {rep.share('routing'):.2f}, {rep.rate('routing'):.2f} B/s")
    assert rep.share("routing") >= 0.5
    assert max(rep.bytes, key=rep.bytes.get) == "routing"


# -- 11 -----------------------------------------------------------------

@pytest.mark.parametrize("name", ["testbed-pubsub.yaml", "testbed-topology.yaml", "recovery.yaml"])
def test_criterion_11_determinism(name, tmp_path):
    cfg = load(SCENARIOS / name)
    a = run_scenario(cfg).write(tmp_path / "a")
    b = run_scenario(cfg).write(tmp_path / "b")
    for key in ("trace", "report", "records"):
        assert a[key].read_bytes() == b[key].read_bytes()
    other = run_scenario(cfg, seed=cfg.seed + 1).write(tmp_path / "c")
    assert other["trace"].read_bytes() != a["trace"].read_bytes()
