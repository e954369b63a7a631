"""Run a scenario end to end and collect its reports."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import monitor
from .monitor import RttStats, ThroughputReport, TimingReport, Verdict
from .network import Network, expected_inputs
from .nn.oracle import forward
from .scenario import ScenarioConfig


@dataclass
class Bundle:
    config: ScenarioConfig
    network: Network
    trace: list[str]
    topology: list[tuple[int, dict[str, str]]]
    throughput: ThroughputReport
    timing: TimingReport
    verdicts: list[Verdict] = field(default_factory=list)
    nacks: int = 0
    fallbacks: int = 0

    @property
    def mismatches(self) -> list[Verdict]:
        return [v for v in self.verdicts if v.status == "mismatch"]

    @property
    def exit_code(self) -> int:
        return 1 if self.mismatches else 0

    def text(self) -> str:
        cfg = self.config
        head = (f"Scenario {cfg.name}  seed={cfg.seed}  duration={cfg.duration} ms  "
                f"strategy={cfg.strategy.kind.value}")
        parts = [head, monitor.topology_table(self.topology), self.throughput.table(), self.timing.table()]
        if self.verdicts:
            parts.append(monitor.verdict_table(self.verdicts))
        parts.append(f"NACKs: {self.nacks}  fallbacks: {self.fallbacks}")
        return "\n\n".join(parts) + "\n"

    def records(self) -> str:
        items: list[dict] = [{"record": "scenario", "name": self.config.name, "seed": self.config.seed,
                              "duration": self.config.duration, "strategy": self.config.strategy.kind.value}]
        items += [{"record": "topology", "t": t, "parents": snap} for t, snap in self.topology]
        items.append(self.throughput.record())
        items += self.timing.records()
        items += [{"record": "inference", "id": v.inference_id, "verdict": v.status, "error": v.error,
                   "values": list(v.values)} for v in self.verdicts]
        items.append({"record": "faults", "nacks": self.nacks, "fallbacks": self.fallbacks})
        return monitor.dump_records(items)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"trace": out / "trace.log", "report": out / "report.txt", "records": out / "report.jsonl"}
        paths["trace"].write_text("".join(line + "\n" for line in self.trace), encoding="utf-8")
        paths["report"].write_text(self.text(), encoding="utf-8")
        paths["records"].write_text(self.records(), encoding="utf-8")
        return paths


def run_scenario(config: ScenarioConfig, *, seed: int | None = None, duration: int | None = None) -> Bundle:
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if duration is not None:
        updates["duration"] = duration
    if updates:
        config = config.model_copy(update=updates)
    net = Network(config)
    net.run()
    records = net.sim.records
    vs: list[Verdict] = []
    if net.model is not None:
        model = net.model
        vs = monitor.verdicts(records, lambda i: forward(model, expected_inputs(net, i)))
    return Bundle(
        config=config, network=net, trace=[r.line() for r in records],
        topology=monitor.topology_log(records),
        throughput=monitor.throughput(records, (0, config.duration), config.observe or config.root_id),
        timing=monitor.timing(records), verdicts=vs,
        nacks=monitor.count_obs(records, "nack"), fallbacks=monitor.count_obs(records, "fallback"))


def rtt_probe(net: Network, a: str, b: str, count: int, *, interval: int = 200,
              settle: int = 2_000) -> RttStats:
    """Ping ``b`` from ``a`` ``count`` times starting now; runs the simulator until the replies are in."""
    start = net.sim.now
    first = len(net.sim.records)
    net.schedule_probes(a, b, count, interval, start)
    net.sim.run_until(start + count * interval + settle)
    rep = monitor.timing(net.sim.records[first:])
    samples: list[int] = []
    lost = 0
    hops = 0
    for h, s in rep.rtt.items():
        hops = h
        samples += s.samples
        lost += s.lost
    return RttStats(hops, samples, lost)
