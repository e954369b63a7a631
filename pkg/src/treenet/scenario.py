"""Scenario files: YAML on disk, validated into typed models with field paths in errors."""
from __future__ import annotations

import random
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .link import DEFAULT_PROFILES, DeviceKind, MacAddress, derive_ap_ip
from .middleware.base import StrategyKind

ROLE_CHOICES = ("coordinator", "input-generator", "hidden-worker", "output-worker")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LinkSpec(_Strict):
    loss: float = Field(0.0, ge=0.0, le=1.0)
    latency_base: int = Field(15, ge=0)
    latency_jitter: int = Field(10, ge=0)
    quality: float = 1.0


class EdgeSpec(LinkSpec):
    a: str
    b: str


class NodeSpec(_Strict):
    id: str
    mac: str
    kind: DeviceKind
    root: bool = False
    roles: list[Literal["coordinator", "input-generator", "hidden-worker", "output-worker"]] = []
    quota: Optional[int] = Field(None, ge=0)
    start_at: Optional[int] = Field(None, ge=0)
    max_children: Optional[int] = Field(None, ge=1)
    frame_delay: Optional[int] = Field(None, ge=0)

    @field_validator("mac")
    @classmethod
    def _mac(cls, v: str) -> str:
        MacAddress(v)
        return v


class TimersSpec(_Strict):
    routing_period: int = Field(60_000, gt=0)
    fru_every: int = Field(5, ge=1)
    pdr_window: int = Field(2_000, gt=0)
    crr_timeout: int = Field(1_000, gt=0)
    crr_retries: int = Field(2, ge=0)
    max_recovery_attempts: int = Field(3, ge=1)
    search_retry: int = Field(1_000, gt=0)
    placement_timeout: int = Field(3_000, gt=0)
    event_buffer: int = Field(32, ge=1)
    threshold_fraction: float = Field(0.75, gt=0.0, le=1.0)


class StrategySpec(_Strict):
    kind: StrategyKind = StrategyKind.NONE
    period: int = Field(120_000, gt=0)
    config: dict = {}

    @model_validator(mode="after")
    def _check(self) -> "StrategySpec":
        keys = set(self.config)
        if self.kind == StrategyKind.PUBSUB and keys:
            raise ValueError("pubsub takes no configuration")
        if self.kind in (StrategyKind.INJECT, StrategyKind.TOPOLOGY):
            if self.config.get("comparator") != "capacity":
                raise ValueError(f"{self.kind.value} needs config.comparator (supported: capacity)")
            allowed = {"comparator"} | ({"selector"} if self.kind == StrategyKind.TOPOLOGY else set())
            if keys - allowed:
                raise ValueError(f"unknown strategy config keys {sorted(keys - allowed)}")
            if self.config.get("selector", "max-capacity") != "max-capacity":
                raise ValueError("supported selector: max-capacity")
        if self.kind == StrategyKind.NONE and keys:
            raise ValueError("the none strategy takes no configuration")
        return self


class RandomModelSpec(_Strict):
    sizes: list[int]
    seed: int = 0
    activation: Literal["identity", "sigmoid", "tanh", "relu"] = "sigmoid"


class NNSpec(_Strict):
    model: Union[str, RandomModelSpec]
    hidden_workers: int = Field(1, ge=0)
    generators: int = Field(1, ge=1)
    output_workers: int = Field(0, ge=0, le=1)
    inputs: Union[Literal["seeded"], list[list[float]]] = "seeded"
    samples: Optional[int] = Field(10, ge=1)
    start_delay: int = Field(2_000, ge=0)
    inference_period: int = Field(2_000, gt=0)
    input_deadline: int = Field(500, gt=0)
    fallback_window: int = Field(500, gt=0)
    quota_timeout: int = Field(10_000, gt=0)


class DropSpec(_Strict):
    category: Literal["routing", "lifecycle", "middleware", "data", "monitoring"]
    type: Optional[str] = None
    src: Optional[str] = None
    dst: Optional[str] = None
    start: int = Field(0, ge=0)
    end: Optional[int] = None
    count: Optional[int] = Field(None, ge=1)


class FaultSpec(_Strict):
    at: int = Field(ge=0)
    kill: Optional[str] = None
    link_down: Optional[tuple[str, str]] = None
    link_up: Optional[tuple[str, str]] = None

    @model_validator(mode="after")
    def _one(self) -> "FaultSpec":
        if sum(x is not None for x in (self.kill, self.link_down, self.link_up)) != 1:
            raise ValueError("a fault needs exactly one of kill, link_down, link_up")
        return self


class ProbeSpec(_Strict):
    at: int = Field(ge=0)
    src: str
    dst: str
    count: int = Field(10, ge=1)
    interval: int = Field(200, gt=0)


class ScenarioConfig(_Strict):
    name: str = "scenario"
    seed: int = 0
    duration: int = Field(120_000, gt=0)
    link: LinkSpec = LinkSpec()
    timers: TimersSpec = TimersSpec()
    nodes: list[NodeSpec]
    visibility: list[Union[tuple[str, str], EdgeSpec]] = []
    join_order: Optional[list[str]] = None
    join_spacing: int = Field(5_000, ge=0)
    faults: list[FaultSpec] = []
    drops: list[DropSpec] = []
    probes: list[ProbeSpec] = []
    strategy: StrategySpec = StrategySpec()
    nn: Optional[NNSpec] = None
    observe: Optional[str] = None
    base_dir: Optional[str] = None

    @model_validator(mode="after")
    def _consistency(self) -> "ScenarioConfig":
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        roots = [n.id for n in self.nodes if n.root]
        if len(roots) != 1:
            raise ValueError(f"exactly one root required, found {len(roots)}")
        seen: dict = {}
        for n in self.nodes:
            ip = derive_ap_ip(MacAddress(n.mac))
            if ip in seen:
                raise ValueError(f"nodes {seen[ip]} and {n.id} derive the same AP address {ip}")
            seen[ip] = n.id
        known = set(ids)
        for e in self.edges():
            if e.a not in known or e.b not in known:
                raise ValueError(f"visibility references unknown node in {e.a}-{e.b}")
            if e.a == e.b:
                raise ValueError(f"visibility pair {e.a}-{e.b} names one node twice")
        if self.join_order is not None and set(self.join_order) - known:
            raise ValueError(f"join_order names unknown nodes {sorted(set(self.join_order) - known)}")
        for f in self.faults:
            for name in [f.kill] + list(f.link_down or ()) + list(f.link_up or ()):
                if name is not None and name not in known:
                    raise ValueError(f"fault references unknown node {name}")
        for p in self.probes:
            if p.src not in known or p.dst not in known:
                raise ValueError(f"probe references unknown node in {p.src}->{p.dst}")
        if self.observe is not None and self.observe not in known:
            raise ValueError(f"observe names unknown node {self.observe}")
        if self.nn is not None:
            self._check_nn()
        elif any(n.roles for n in self.nodes):
            raise ValueError("roles given but no nn section")
        return self

    def _check_nn(self) -> None:
        nn = self.nn
        coords = [n.id for n in self.nodes if "coordinator" in n.roles]
        if len(coords) != 1:
            raise ValueError(f"exactly one coordinator required, found {len(coords)}")

        def count(role: str) -> int:
            return sum(role in n.roles for n in self.nodes)
        if count("hidden-worker") < nn.hidden_workers:
            raise ValueError(f"nn.hidden_workers={nn.hidden_workers} but only {count('hidden-worker')} nodes carry the role")
        if count("input-generator") < nn.generators:
            raise ValueError(f"nn.generators={nn.generators} but only {count('input-generator')} nodes carry the role")
        if count("output-worker") < nn.output_workers:
            raise ValueError("not enough output-worker nodes for nn.output_workers")
        for n in self.nodes:
            if "coordinator" in n.roles and "input-generator" in n.roles:
                raise ValueError(f"node {n.id}: the coordinator cannot also generate inputs")
        if self.strategy.kind == StrategyKind.INJECT:
            full = [n for n in self.nodes if "hidden-worker" in n.roles and "output-worker" in n.roles]
            if nn.hidden_workers != 1 or nn.output_workers != 1 or not full:
                raise ValueError("inject supports only the centralized case: one node holding the hidden "
                                 "and output roles (hidden_workers=1, output_workers=1)")

    def edges(self) -> list[EdgeSpec]:
        out = []
        for v in self.visibility:
            if isinstance(v, EdgeSpec):
                out.append(v)
            else:
                out.append(EdgeSpec(a=v[0], b=v[1], **self.link.model_dump()))
        return out

    def start_times(self) -> dict[str, int]:
        out = {}
        order = self.join_order or []
        for n in self.nodes:
            if n.start_at is not None:
                out[n.id] = n.start_at
            elif n.root:
                out[n.id] = 0
            elif n.id in order:
                out[n.id] = self.join_spacing * (order.index(n.id) + 1)
            else:
                out[n.id] = self.join_spacing * (len(order) + 1)
        return out

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def root_id(self) -> str:
        return next(n.id for n in self.nodes if n.root)


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]) -> None:
        super().__init__("\n".join(problems))
        self.problems = problems


def _path(loc: tuple) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def parse(data: dict, base_dir: str | Path | None = None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError(["<root>: scenario must be a mapping"])
    if base_dir is not None and "base_dir" not in data:
        data = {**data, "base_dir": str(base_dir)}
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError([f"{_path(e['loc'])}: {e['msg']}" for e in exc.errors()]) from None


def load(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError([f"<file>: {exc}"]) from None
    return parse(data, base_dir=path.parent)


# -- stock scenarios ----------------------------------------------------

TESTBED_NODES = ("R", "E1", "E2", "E3", "Pi")
TESTBED_EDGES = [("R", "E1"), ("R", "Pi"), ("E1", "E2"), ("E1", "Pi"), ("Pi", "E2"), ("Pi", "E3"), ("E2", "E3")]


def testbed(strategy: StrategyKind | str = StrategyKind.PUBSUB, *, seed: int = 0,
            join_order: list[str] | None = None, samples: int = 10, loss: float = 0.0,
            model: str | RandomModelSpec | None = None, centralized: bool | None = None,
            duration: int | None = None, workload: bool = True,
            quotas: tuple[int, int, int, int] | None = (1, 1, 1, 5), **overrides) -> ScenarioConfig:
    """Five devices: a class-8266 root/coordinator, three class-32 boards and one class-pi.

    ``workload=False`` drops the inference roles and leaves a bare network.
    ``quotas`` are the explicit hidden-neuron quotas of E1, E2, E3 and Pi;
    ``None`` splits hidden neurons by device capacity instead.
    """
    kind = StrategyKind(strategy)
    centralized = kind == StrategyKind.INJECT if centralized is None else centralized
    if join_order is None:
        join_order = ["E1", "E2", "E3", "Pi"]
        random.Random(f"{seed}:join-order").shuffle(join_order)
    worker_roles = ["hidden-worker"]
    nodes = [
        dict(id="R", mac="02:00:00:00:00:01", kind="class-8266", root=True, roles=["coordinator"]),
        dict(id="E1", mac="02:00:00:00:00:11", kind="class-32", roles=["input-generator"] + ([] if centralized else worker_roles), quota=None if centralized else 1),
        dict(id="E2", mac="02:00:00:00:00:12", kind="class-32", roles=["input-generator"] + ([] if centralized else worker_roles), quota=None if centralized else 1),
        dict(id="E3", mac="02:00:00:00:00:13", kind="class-32", roles=[] if centralized else worker_roles, quota=None if centralized else 1),
        dict(id="Pi", mac="02:00:00:00:00:21", kind="class-pi",
             roles=["hidden-worker", "output-worker"] if centralized else worker_roles,
             quota=None if centralized else 5),
    ]
    config = {}
    if kind in (StrategyKind.INJECT, StrategyKind.TOPOLOGY):
        config = {"comparator": "capacity"}
    data = dict(
        name=f"testbed-{kind.value}", seed=seed, duration=duration or 80_000,
        link=dict(loss=loss), nodes=nodes, visibility=[list(e) for e in TESTBED_EDGES],
        join_order=join_order, strategy=dict(kind=kind.value, config=config),
        nn=dict(model=model or RandomModelSpec(sizes=[2, 4, 4, 2], seed=seed).model_dump(),
                hidden_workers=1 if centralized else 4, generators=2,
                output_workers=1 if centralized else 0, samples=samples, start_delay=2_000,
                inference_period=2_000),
    )
    if quotas is None or centralized:
        for n in nodes:
            n["quota"] = None
    else:
        for n, q in zip(nodes[1:], quotas):
            n["quota"] = q
    if not workload:
        del data["nn"]
        for n in nodes:
            n["roles"], n["quota"] = [], None
    data.update(overrides)
    return parse(data)


def random_tree(n: int, seed: int, *, kind_weights: tuple[int, int, int] = (1, 2, 1),
                spacing: int = 3_000, **overrides) -> tuple[ScenarioConfig, dict[str, str]]:
    """Random tree of ``n`` nodes whose visibility graph is exactly the tree.

    Returns the config and the intended parent map. Nodes start in BFS order so
    every node's only visible active AP is its intended parent.
    """
    rng = random.Random(f"tree:{seed}:{n}")
    kinds = [DeviceKind.ESP8266] * kind_weights[0] + [DeviceKind.ESP32] * kind_weights[1] + [DeviceKind.PI] * kind_weights[2]
    ids = [f"N{i}" for i in range(n)]
    parent: dict[str, str] = {}
    children: dict[str, int] = {i: 0 for i in ids}
    nodes = []
    for i, node_id in enumerate(ids):
        kind = rng.choice(kinds)
        if i:
            options = [p for p in ids[:i] if children[p] < DEFAULT_PROFILES[nodes[ids.index(p)]["kind"]].max_children]
            p = rng.choice(options)
            parent[node_id] = p
            children[p] += 1
        nodes.append(dict(id=node_id, mac=f"02:00:00:00:{(i + 1) >> 8:02x}:{(i + 1) & 0xFF:02x}", kind=kind,
                          root=i == 0))
    depth = {ids[0]: 0}
    for node_id in ids[1:]:
        depth[node_id] = depth[parent[node_id]] + 1
    order = sorted(ids[1:], key=lambda x: (depth[x], ids.index(x)))
    data = dict(name=f"tree-{n}-{seed}", seed=seed, nodes=nodes,
                visibility=[[parent[c], c] for c in ids[1:]], join_order=order, join_spacing=spacing,
                duration=spacing * n + 400_000)
    data.update(overrides)
    return parse(data), parent
