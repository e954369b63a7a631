"""Post-processing of the observation stream: byte accounting, timings, topology."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from statistics import mean, pstdev
from typing import Any, Iterable

from .sim import TraceRecord
from .wire import Category, DataType, MalformedFrame, decode

CATEGORIES = tuple(c.name.lower() for c in Category)
MALFORMED = "malformed"
NEURON_OUTPUT = int(DataType.NEURON_OUTPUT)


def _flag(v: Any) -> bool:
    return v is True or str(v) in ("1", "True", "true")


def _obs(records: Iterable[TraceRecord], what: str) -> list[TraceRecord]:
    return [r for r in records if r.kind == "obs" and r.fields.get("what") == what]


# -- throughput --------------------------------------------------------

@dataclass
class ThroughputReport:
    window: tuple[int, int]
    observer: str | None = None
    bytes: dict[str, int] = field(default_factory=lambda: {c: 0 for c in (*CATEGORIES, MALFORMED)})
    frames: dict[str, int] = field(default_factory=lambda: {c: 0 for c in (*CATEGORIES, MALFORMED)})
    neuron_output: int = 0
    neuron_output_forwarded: int = 0
    data_forwarded: int = 0

    @property
    def seconds(self) -> float:
        return max(self.window[1] - self.window[0], 1) / 1000.0

    @property
    def total(self) -> int:
        return sum(self.bytes.values())

    def rate(self, bucket: str) -> float:
        return self.bytes[bucket] / self.seconds

    def share(self, bucket: str) -> float:
        return self.bytes[bucket] / self.total if self.total else 0.0

    def add(self, category: str, size: int, dtype: int | None = None, forwarded: bool = False) -> None:
        self.bytes[category] += size
        self.frames[category] += 1
        if category != "data":
            return
        if forwarded:
            self.data_forwarded += size
        if dtype == NEURON_OUTPUT:
            self.neuron_output += size
            if forwarded:
                self.neuron_output_forwarded += size

    def table(self) -> str:
        rows = [(b, str(self.frames[b]), str(self.bytes[b]), f"{self.rate(b):.2f}") for b in self.bytes]
        rows.append(("  neuron-output", "", str(self.neuron_output), f"{self.neuron_output / self.seconds:.2f}"))
        rows.append(("  neuron-output (forwarded)", "", str(self.neuron_output_forwarded),
                     f"{self.neuron_output_forwarded / self.seconds:.2f}"))
        rows.append(("total", str(sum(self.frames.values())), str(self.total), f"{self.total / self.seconds:.2f}"))
        title = f"Throughput at {self.observer or 'root'}, window {self.window[0]}..{self.window[1]} ms"
        return title + "\n" + format_table(("bucket", "frames", "bytes", "B/s"), rows)

    def record(self) -> dict:
        return {"record": "throughput", "window": list(self.window), "observer": self.observer,
                "bytes": dict(self.bytes), "frames": dict(self.frames), "total": self.total,
                "neuron_output": self.neuron_output, "neuron_output_forwarded": self.neuron_output_forwarded,
                "data_forwarded": self.data_forwarded}


class ThroughputMeter:
    """Accumulates bytes received at one observation node."""

    def __init__(self, observer_ip: IPv4Address, window: tuple[int, int], observer: str | None = None) -> None:
        self.observer_ip = observer_ip
        self.report = ThroughputReport(window, observer)

    def record(self, frame: bytes) -> str:
        """Account one raw frame; returns the bucket it landed in."""
        try:
            env = decode(frame)
        except MalformedFrame:
            self.report.add(MALFORMED, len(frame))
            return MALFORMED
        cat = env.category.name.lower()
        self.report.add(cat, env.size, env.type, env.final_destination != self.observer_ip)
        return cat


def throughput(records: Iterable[TraceRecord], window: tuple[int, int], observer: str | None = None) -> ThroughputReport:
    """Byte accounting from ``rx`` records inside ``[start, end)``.

    Without an explicit observer the node that logged receive records is used.
    """
    rx = [r for r in records if r.kind == "rx"]
    if observer is None and rx:
        observer = rx[0].node
    report = ThroughputReport(window, observer)
    start, end = window
    for r in rx:
        if r.node != observer or not start <= r.t < end:
            continue
        f = r.fields
        dtype = int(f["type"]) if "type" in f else None
        report.add(str(f["cat"]), int(f["size"]), dtype, _flag(f.get("fwd")))
    return report


# -- timing ------------------------------------------------------------

@dataclass
class RttStats:
    hops: int
    samples: list[int]
    lost: int = 0

    @property
    def mean(self) -> float:
        return mean(self.samples) if self.samples else float("nan")

    @property
    def stdev(self) -> float:
        return pstdev(self.samples) if len(self.samples) > 1 else 0.0


@dataclass
class TimingReport:
    integration: dict[str, tuple[int, int, int, int]] = field(default_factory=dict)
    recovery: list[tuple[str, str, int, int]] = field(default_factory=list)  # node, from-state, start, duration
    rtt: dict[int, RttStats] = field(default_factory=dict)
    inference: dict[int, int] = field(default_factory=dict)
    init_phase: list[int] = field(default_factory=list)

    def mean_inference(self) -> float:
        return mean(self.inference.values()) if self.inference else float("nan")

    def table(self) -> str:
        parts = []
        rows = [(k, str(a), str(b), str(c), str(t)) for k, (a, b, c, t) in sorted(self.integration.items())]
        parts.append("Integration time (ms)\n" + format_table(("device", "Init", "Search", "Join", "total"), rows))
        rows = [(n, s, str(t0), str(d)) for n, s, t0, d in self.recovery]
        parts.append("Recovery time (ms)\n" + format_table(("device", "from", "at", "duration"), rows))
        rows = [(str(h), str(len(s.samples)), str(s.lost), f"{s.mean:.2f}", f"{s.stdev:.2f}")
                for h, s in sorted(self.rtt.items())]
        parts.append("Round-trip time (ms)\n" + format_table(("hops", "samples", "lost", "mean", "stdev"), rows))
        rows = [(str(i), str(d)) for i, d in sorted(self.inference.items())]
        if self.inference:
            rows.append(("mean", f"{self.mean_inference():.2f}"))
        parts.append("Inference duration (ms)\n" + format_table(("id", "duration"), rows))
        rows = [(str(i + 1), str(d)) for i, d in enumerate(self.init_phase)]
        parts.append("Initialization phase (ms)\n" + format_table(("run", "duration"), rows))
        return "\n\n".join(parts)

    def records(self) -> list[dict]:
        out: list[dict] = []
        for k, (a, b, c, t) in sorted(self.integration.items()):
            out.append({"record": "integration", "device": k, "init": a, "search": b, "join": c, "total": t})
        for n, s, t0, d in self.recovery:
            out.append({"record": "recovery", "device": n, "from": s, "at": t0, "duration": d})
        for h, s in sorted(self.rtt.items()):
            out.append({"record": "rtt", "hops": h, "samples": s.samples, "lost": s.lost})
        for i, d in sorted(self.inference.items()):
            out.append({"record": "inference-duration", "id": i, "duration": d})
        for d in self.init_phase:
            out.append({"record": "init-phase", "duration": d})
        return out


_RECOVERING = ("ParentRecovery", "RecoveryAwait")


def timing(records: Iterable[TraceRecord]) -> TimingReport:
    records = list(records)
    rep = TimingReport()
    # boot records carry each node's AP address, so reports can use names
    names = {str(r.fields["ap_ip"]): r.node for r in records if r.kind == "state" and "ap_ip" in r.fields}
    for r in _obs(records, "integration"):
        f = r.fields
        who = names.get(str(f["node_ip"]), str(f["node_ip"]))
        rep.integration[who] = (int(f["init"]), int(f["search"]), int(f["join"]), int(f["total"]))
    # an episode opens on the first recovering state and closes on the next Active
    open_: dict[str, tuple[str, int]] = {}
    for r in records:
        if r.kind != "state":
            continue
        to = str(r.fields.get("to"))
        if to in _RECOVERING and r.node not in open_:
            open_[r.node] = (to, r.t)
        elif to == "Active" and r.node in open_:
            state, t0 = open_.pop(r.node)
            rep.recovery.append((r.node, state, t0, r.t - t0))
    pings = {(r.node, str(r.fields["probe"])): int(r.fields["hops"]) for r in _obs(records, "ping")}
    answered = set()
    for r in _obs(records, "rtt"):
        hops = int(r.fields["hops"])
        rep.rtt.setdefault(hops, RttStats(hops, [])).samples.append(int(r.fields["rtt"]))
        answered.add((r.node, str(r.fields["probe"])))
    for key, hops in pings.items():
        if key not in answered:
            rep.rtt.setdefault(hops, RttStats(hops, [])).lost += 1
    starts = {int(r.fields["id"]): r.t for r in _obs(records, "inference-start")}
    for r in _obs(records, "inference-done"):
        i = int(r.fields["id"])
        if i in starts and i not in rep.inference:
            rep.inference[i] = r.t - starts[i]
    rep.init_phase = [int(r.fields["duration"]) for r in _obs(records, "init-phase")]
    return rep


# -- topology ----------------------------------------------------------

def topology_log(records: Iterable[TraceRecord]) -> list[tuple[int, dict[str, str]]]:
    """Parent map after every association change, rebuilt from ``link`` records."""
    parents: dict[str, str] = {}
    out = []
    for r in records:
        if r.kind != "link":
            continue
        op = str(r.fields.get("op"))
        if op == "up":
            parents[r.node] = str(r.fields["parent"])
        elif op == "down" and parents.get(r.node) == str(r.fields.get("parent")):
            del parents[r.node]
        else:
            continue
        out.append((r.t, dict(sorted(parents.items()))))
    return out


def topology_table(log: list[tuple[int, dict[str, str]]]) -> str:
    rows = [(str(t), " ".join(f"{c}->{p}" for c, p in snap.items()) or "-") for t, snap in log]
    return "Topology over time\n" + format_table(("t (ms)", "child->parent"), rows)


# -- inference verdicts ------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    inference_id: int
    status: str  # match | mismatch | degraded | incomplete
    error: float | None
    values: tuple[float, ...] = ()


def verdicts(records: Iterable[TraceRecord], expected, tolerance: float = 1e-9) -> list[Verdict]:
    """Compare every started inference against ``expected(inference_id) -> list[float]``.

    A cycle that fell back to stale inputs is ``degraded`` rather than wrong.
    """
    records = list(records)
    started = sorted({int(r.fields["id"]) for r in _obs(records, "inference-start")})
    done: dict[int, list[float]] = {}
    for r in _obs(records, "inference-done"):
        v = r.fields["values"]
        vals = [float(x) for x in (v.split(",") if isinstance(v, str) else v)]
        done.setdefault(int(r.fields["id"]), vals)
    fell_back = {int(r.fields["id"]) for r in _obs(records, "fallback")}
    out = []
    for i in started:
        if i not in done:
            out.append(Verdict(i, "incomplete", None))
            continue
        want = list(expected(i))
        got = done[i]
        err = max((abs(a - b) for a, b in zip(got, want)), default=0.0) if len(got) == len(want) else float("inf")
        if err <= tolerance:
            status = "match"
        else:
            status = "degraded" if i in fell_back else "mismatch"
        out.append(Verdict(i, status, err, tuple(got)))
    return out


def verdict_table(vs: list[Verdict]) -> str:
    rows = [(str(v.inference_id), v.status, "-" if v.error is None else f"{v.error:.3g}",
             " ".join(f"{x:.6f}" for x in v.values)) for v in vs]
    return "Inference results\n" + format_table(("id", "verdict", "max error", "outputs"), rows)


# -- formatting --------------------------------------------------------

def format_table(header: tuple[str, ...], rows: list[tuple[str, ...]]) -> str:
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(header), line(tuple("-" * w for w in widths))]
    out += [line(r) for r in rows]
    return "\n".join(out)


def dump_records(items: Iterable[dict]) -> str:
    return "".join(json.dumps(x, sort_keys=True) + "\n" for x in items)


def count_obs(records: Iterable[TraceRecord], what: str) -> int:
    return len(_obs(records, what))


def nodes_by_state(records: Iterable[TraceRecord]) -> dict[str, str]:
    last: dict[str, str] = {}
    for r in records:
        if r.kind == "state":
            last[r.node] = str(r.fields["to"])
    return last

