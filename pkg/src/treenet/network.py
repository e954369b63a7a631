"""Assemble a runnable network from a scenario config."""
from __future__ import annotations

import random
from dataclasses import replace
from ipaddress import IPv4Address
from pathlib import Path

from .link import DEFAULT_PROFILES, WifiLayer
from .middleware.base import ConfigError, Strategy, StrategyKind, compare_int_metrics, int_metric
from .middleware.inject import InjectStrategy
from .middleware.pubsub import PubSubStrategy
from .middleware.topology import TopologyStrategy
from .nn.app import ROLE_NAMES, NNApp, NNConfig, Role
from .nn.model import ModelSpec
from .nn.model import load as load_model
from .node import NodeRuntime, Timers
from .radio import LinkParams, Radio
from .scenario import RandomModelSpec, ScenarioConfig
from .sim import EventKind, Simulator
from .wire import HEADER, Category, DataType, LifecycleType, MonitoringType, RoutingType

_TYPE_ENUMS = {Category.ROUTING: RoutingType, Category.LIFECYCLE: LifecycleType,
               Category.DATA: DataType, Category.MONITORING: MonitoringType}


def make_strategy(kind: StrategyKind, period: int, config: dict) -> Strategy:
    if kind == StrategyKind.NONE:
        return Strategy(period)
    if kind == StrategyKind.PUBSUB:
        return PubSubStrategy(config or None, period=period)
    comparator = compare_int_metrics if config.get("comparator") == "capacity" else None
    if kind == StrategyKind.INJECT:
        return InjectStrategy(comparator, period=period)
    if kind == StrategyKind.TOPOLOGY:
        return TopologyStrategy(comparator, period=period)
    raise ConfigError(f"unknown strategy {kind}")


def build_model(spec, base_dir: str | None) -> ModelSpec:
    if isinstance(spec, RandomModelSpec):
        return ModelSpec.random(random.Random(spec.seed), spec.sizes, spec.activation)
    path = Path(spec)
    if not path.is_absolute() and base_dir:
        path = Path(base_dir) / path
    return load_model(path)


class DropRule:
    """Environment-side frame filter used to inject targeted losses."""

    def __init__(self, spec, sim: Simulator) -> None:
        self.spec = spec
        self.sim = sim
        self.category = Category[spec.category.upper()]
        self.type = None
        if spec.type is not None:
            enum = _TYPE_ENUMS.get(self.category)
            self.type = int(enum[spec.type.upper()]) if enum is not None and not spec.type.isdigit() else int(spec.type)
        self.remaining = spec.count
        self.hits = 0

    def __call__(self, frame: bytes, src: str, dst: str) -> bool:
        s = self.spec
        now = self.sim.now
        if now < s.start or (s.end is not None and now >= s.end) or self.remaining == 0:
            return False
        if len(frame) < HEADER.size or frame[2] != self.category or (self.type is not None and frame[3] != self.type):
            return False
        if (s.src is not None and src != s.src) or (s.dst is not None and dst != s.dst):
            return False
        self.hits += 1
        if self.remaining is not None:
            self.remaining -= 1
        return True


class Network:
    def __init__(self, config: ScenarioConfig) -> None:
        self.config = config
        self.sim = Simulator()
        self.radio = Radio(self.sim, config.seed, LinkParams(config.link.loss, config.link.latency_base,
                                                              config.link.latency_jitter, config.link.quality))
        self.wifi = WifiLayer(self.sim, self.radio)
        t = config.timers
        self.timers = Timers(routing_period=t.routing_period, fru_every=t.fru_every,
                             middleware_period=config.strategy.period, pdr_window=t.pdr_window,
                             crr_timeout=t.crr_timeout, crr_retries=t.crr_retries,
                             max_recovery_attempts=t.max_recovery_attempts, search_retry=t.search_retry,
                             placement_timeout=t.placement_timeout, event_buffer=t.event_buffer,
                             threshold_fraction=t.threshold_fraction)
        self.nodes: dict[str, NodeRuntime] = {}
        self.model: ModelSpec | None = None
        self.nn_config: NNConfig | None = None
        self.results: dict[int, list[float]] = {}
        self._probe = 0
        self.drop_rules = [DropRule(d, self.sim) for d in config.drops]
        self.radio.drop_filters.extend(self.drop_rules)
        self._build()

    def _build(self) -> None:
        cfg = self.config
        for spec in cfg.nodes:
            profile = DEFAULT_PROFILES[spec.kind]
            if spec.max_children is not None:
                profile = replace(profile, max_children=spec.max_children)
            if spec.frame_delay is not None:
                profile = replace(profile, frame_delay=spec.frame_delay)
            strategy = make_strategy(cfg.strategy.kind, cfg.strategy.period, cfg.strategy.config)
            node = NodeRuntime(spec.id, spec.mac, profile, is_root=spec.root, sim=self.sim, radio=self.radio,
                               wifi=self.wifi, timers=self.timers, strategy=strategy)
            self.nodes[spec.id] = node
        for e in cfg.edges():
            self.radio.set_visibility(e.a, e.b, True,
                                      LinkParams(e.loss, e.latency_base, e.latency_jitter, e.quality))
        observer = cfg.observe or cfg.root_id
        self.nodes[observer].observe_rx = True
        if cfg.nn is not None:
            self._build_nn()
        elif cfg.strategy.kind in (StrategyKind.INJECT, StrategyKind.TOPOLOGY):
            for node in self.nodes.values():
                node.strategy.set_metric(node.strategy.metric or _capacity_metric(node))
        for node_id, at in cfg.start_times().items():
            node = self.nodes[node_id]
            self.sim.at(at, node.start, target=node_id, kind=EventKind.NODE_START, label="start")
        for f in cfg.faults:
            self._schedule_fault(f)
        for p in cfg.probes:
            self.schedule_probes(p.src, p.dst, p.count, p.interval, p.at)

    def _build_nn(self) -> None:
        cfg = self.config
        nn = cfg.nn
        self.model = build_model(nn.model, cfg.base_dir)
        coord = next(n for n in cfg.nodes if "coordinator" in n.roles)
        self.nn_config = NNConfig(
            coordinator_ip=self.nodes[coord.id].ap_ip, model=None, seed=cfg.seed,
            hidden_workers=nn.hidden_workers, generators=nn.generators, output_workers=nn.output_workers,
            fixed_inputs=None if nn.inputs == "seeded" else nn.inputs, quota_timeout=nn.quota_timeout,
            start_delay=nn.start_delay, inference_period=nn.inference_period, samples=nn.samples,
            input_deadline=nn.input_deadline, fallback_window=nn.fallback_window)
        for spec in cfg.nodes:
            roles = Role(0)
            for r in spec.roles:
                roles |= ROLE_NAMES[r]
            node = self.nodes[spec.id]
            node_cfg = self.nn_config
            if roles & Role.COORDINATOR:
                node_cfg = replace(self.nn_config, model=self.model)
            NNApp(node, node_cfg, roles, spec.quota,
                  on_result=self._on_result if roles & Role.COORDINATOR else None)

    def _on_result(self, inference_id: int, values: list[float]) -> None:
        self.results[inference_id] = values

    def _schedule_fault(self, f) -> None:
        if f.kill is not None:
            node = self.nodes[f.kill]
            self.sim.at(f.at, node.kill, target=f.kill, kind=EventKind.NODE_KILL, label="kill")
        else:
            a, b = f.link_down or f.link_up
            visible = f.link_up is not None
            self.sim.at(f.at, lambda: self.radio.set_visibility(a, b, visible), target=None,
                        kind=EventKind.LINK_CHANGE, label="link-up" if visible else "link-down")

    def schedule_probes(self, src: str, dst: str, count: int, interval: int, at: int) -> None:
        a, b = self.nodes[src], self.nodes[dst]

        def fire() -> None:
            if a.alive:
                self._probe += 1
                a.ping(b.ap_ip, self._probe)
        for k in range(count):
            self.sim.at(at + k * interval, fire, target=src, label="probe")

    # -- running -------------------------------------------------------
    def run(self, until: int | None = None) -> int:
        return self.sim.run_until(self.config.duration if until is None else until)

    # -- ground truth --------------------------------------------------
    def by_ip(self) -> dict[IPv4Address, NodeRuntime]:
        return {n.ap_ip: n for n in self.nodes.values()}

    def parent_map(self) -> dict[str, str]:
        return dict(sorted(self.wifi.parent.items()))

    def alive(self) -> list[NodeRuntime]:
        return [n for n in self.nodes.values() if n.alive]

    def states(self) -> dict[str, str]:
        return {k: n.state.value for k, n in self.nodes.items()}


def _capacity_metric(node: NodeRuntime) -> bytes:
    return int_metric(node.profile.capacity)


def expected_inputs(net: Network, inference_id: int) -> list[float]:
    return [net.nn_config.input_for(inference_id, i) for i in range(net.model.sizes[0])]
