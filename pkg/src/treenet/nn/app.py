"""Distributed MLP inference running on top of a node's middleware strategy."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntFlag
from ipaddress import IPv4Address
from typing import TYPE_CHECKING, Callable

from ..middleware.base import StrategyKind, int_metric
from ..sim import SimEvent
from ..wire import DataType, Envelope, pack_ips, unpack_ips
from .assign import Assignment, AssignmentError, WorkerInfo, assign_neurons
from .model import ACTIVATIONS, ModelSpec, input_value, neuron_output

if TYPE_CHECKING:
    from ..node import NodeRuntime


class Role(IntFlag):
    COORDINATOR = 1
    GENERATOR = 2
    HIDDEN = 4
    OUTPUT = 8


ROLE_NAMES = {"coordinator": Role.COORDINATOR, "input-generator": Role.GENERATOR,
              "hidden-worker": Role.HIDDEN, "output-worker": Role.OUTPUT}

_REG = struct.Struct("!BBB")
_ID = struct.Struct("!I")
_HEAD = struct.Struct("!IBB")  # inference id, layer, count
_VAL = struct.Struct("!Bd")
_EPOCH = struct.Struct("!H")
_D = struct.Struct("!d")
NO_QUOTA = 255


@dataclass
class NNConfig:
    coordinator_ip: IPv4Address
    model: ModelSpec | None = None  # only the coordinator holds it
    seed: int = 0
    hidden_workers: int = 1
    generators: int = 1
    output_workers: int = 0
    fixed_inputs: list[list[float]] | None = None
    quota_timeout: int = 10_000
    register_retry: int = 1_000
    assign_retry: int = 1_000
    assign_retries: int = 5
    start_delay: int = 2_000
    inference_period: int = 2_000
    samples: int | None = 10
    input_deadline: int = 500
    fallback_window: int = 500
    keep_cycles: int = 4

    def input_for(self, inference_id: int, index: int) -> float:
        if self.fixed_inputs:
            vec = self.fixed_inputs[(inference_id - 1) % len(self.fixed_inputs)]
            return float(vec[index])
        return input_value(self.seed, inference_id, index)


def encode_outputs(inference_id: int, layer: int, values: dict[int, float]) -> bytes:
    items = sorted(values.items())
    return _HEAD.pack(inference_id, layer, len(items)) + b"".join(_VAL.pack(i, v) for i, v in items)


def decode_outputs(payload: bytes) -> tuple[int, int, dict[int, float]]:
    inference_id, layer, n = _HEAD.unpack_from(payload)
    off = _HEAD.size
    out = {}
    for _ in range(n):
        i, v = _VAL.unpack_from(payload, off)
        out[i] = v
        off += _VAL.size
    return inference_id, layer, out


@dataclass
class WorkPlan:
    """What one device was told to do by the coordinator."""
    epoch: int
    sizes: list[int]
    activations: list[str]
    inputs: list[int]
    neurons: dict[tuple[int, int], tuple[float, tuple[float, ...]]]
    is_output: bool
    consumers: dict[int, list[IPv4Address]] = field(default_factory=dict)

    @property
    def output_layer(self) -> int:
        return len(self.sizes) - 1

    def layers(self) -> list[int]:
        return sorted({l for l, _ in self.neurons})

    def encode(self) -> bytes:
        parts = [_EPOCH.pack(self.epoch), bytes([len(self.sizes)]), bytes(self.sizes),
                 bytes(ACTIVATIONS.index(a) for a in self.activations),
                 bytes([len(self.inputs)]), bytes(self.inputs),
                 struct.pack("!H", len(self.neurons))]
        for (l, i), (bias, weights) in sorted(self.neurons.items()):
            parts.append(bytes([l, i]) + _D.pack(bias) + b"".join(_D.pack(w) for w in weights))
        parts.append(bytes([int(self.is_output), len(self.consumers)]))
        for layer, ips in sorted(self.consumers.items()):
            parts.append(bytes([layer]) + pack_ips(ips))
        return b"".join(parts)

    @classmethod
    def decode(cls, buf: bytes) -> "WorkPlan":
        epoch = _EPOCH.unpack_from(buf)[0]
        off = _EPOCH.size
        n = buf[off]
        sizes = list(buf[off + 1: off + 1 + n])
        off += 1 + n
        acts = [ACTIVATIONS[c] for c in buf[off: off + n - 1]]
        off += n - 1
        k = buf[off]
        inputs = list(buf[off + 1: off + 1 + k])
        off += 1 + k
        count = struct.unpack_from("!H", buf, off)[0]
        off += 2
        neurons = {}
        for _ in range(count):
            l, i = buf[off], buf[off + 1]
            off += 2
            bias = _D.unpack_from(buf, off)[0]
            off += 8
            w = tuple(_D.unpack_from(buf, off + 8 * j)[0] for j in range(sizes[l - 1]))
            off += 8 * sizes[l - 1]
            neurons[(l, i)] = (bias, w)
        is_output, nc = bool(buf[off]), buf[off + 1]
        off += 2
        consumers = {}
        for _ in range(nc):
            layer = buf[off]
            ips, off = unpack_ips(buf, off + 1)
            consumers[layer] = ips
        return cls(epoch, sizes, acts, inputs, neurons, is_output, consumers)


class NNApp:
    def __init__(self, node: "NodeRuntime", config: NNConfig, roles: Role, quota: int | None = None,
                 on_result: Callable[[int, list[float]], None] | None = None) -> None:
        self.node = node
        self.cfg = config
        self.roles = roles
        self.quota = quota
        self.on_result = on_result
        self.mode = node.strategy.kind
        self.is_coordinator = bool(roles & Role.COORDINATOR)
        if self.is_coordinator and config.model is None:
            raise AssignmentError("the coordinator needs a model")
        node.app = self
        if self.mode in (StrategyKind.TOPOLOGY, StrategyKind.INJECT):
            self._publish_metric()
        if self.mode == StrategyKind.INJECT:
            node.strategy.on_intercept = self._intercept
        # worker side
        self.plan: WorkPlan | None = None
        self.registered = False
        self.current_id = 0
        self.cycle_start = 0
        self.received: dict[int, dict[int, float]] = {}
        self.done: set[int] = set()
        self.computing: set[int] = set()
        self.prev: dict[tuple[int, int], float] = {}
        self.produced: dict[int, dict[int, dict[int, float]]] = {}
        self.cycle_timers: list[SimEvent] = []
        self.nacks_sent = 0
        self.fallbacks = 0
        # coordinator side
        self.regs: dict[IPv4Address, tuple[Role, int, int | None]] = {}
        self.epoch = 0
        self.assignment: Assignment | None = None
        self.pending_acks: dict[IPv4Address, bytes] = {}
        self.assign_attempts = 0
        self.assign_started = 0
        self.output_fallback = config.output_workers == 0
        self.started = False
        self.issued = 0
        self.results: dict[int, list[float]] = {}

    def _publish_metric(self) -> None:
        # only nodes able to host the whole model advertise under inject
        if self.mode == StrategyKind.INJECT and not (self.roles & Role.HIDDEN and self.roles & Role.OUTPUT):
            return
        self.node.strategy.set_metric(int_metric(self.node.profile.capacity))

    # -- lifecycle hooks -----------------------------------------------
    def on_active(self, first: bool) -> None:
        if not first:
            for layer in self.plan.layers() if self.plan else []:
                self._try_compute(layer)
            return
        if self.is_coordinator:
            if self.roles & ~Role.COORDINATOR:
                self._record_registration(self.node.ap_ip, self.roles, self.node.profile.capacity, self.quota)
            if not self.output_fallback:
                self.node.timer(self.cfg.quota_timeout, self._quota_timeout, "nn-quota")
            self._check_quota()
        elif self.roles:
            self._register()

    def _register(self) -> None:
        if self.registered:
            return
        q = NO_QUOTA if self.quota is None else self.quota
        self.node.send_data(self.cfg.coordinator_ip, DataType.NN_REGISTER,
                            _REG.pack(int(self.roles), self.node.profile.capacity, q))
        self.node.timer(self.cfg.register_retry, self._register, "nn-register")

    # -- coordinator ---------------------------------------------------
    def _record_registration(self, ip: IPv4Address, roles: Role, capacity: int, quota: int | None) -> None:
        if ip not in self.regs:
            self.regs[ip] = (roles, capacity, quota)
            self.node.sim.trace(self.node.id, "nn", registered=ip, roles=int(roles))

    def _quota_timeout(self) -> None:
        if self.assignment is None and not self.output_fallback:
            self.output_fallback = True
            self.node.sim.trace(self.node.id, "nn", quota_timeout="outputs-to-coordinator")
            self._check_quota()

    def _with_role(self, role: Role) -> list[IPv4Address]:
        return [ip for ip, (r, _, _) in self.regs.items() if r & role]

    def _check_quota(self) -> None:
        if self.assignment is not None:
            return
        cfg = self.cfg
        hidden, gens, outs = self._with_role(Role.HIDDEN), self._with_role(Role.GENERATOR), self._with_role(Role.OUTPUT)
        if len(hidden) < cfg.hidden_workers or len(gens) < cfg.generators:
            return
        if outs:
            output_device = outs[0]
        elif self.output_fallback:
            output_device = self.node.ap_ip
        else:
            return
        workers = [WorkerInfo(ip, self.regs[ip][1], self.regs[ip][2]) for ip in hidden[:cfg.hidden_workers]]
        self.assignment = assign_neurons(cfg.model, workers, output_device, gens[:cfg.generators])
        self._ship()

    def _plan_for(self, ip: IPv4Address) -> WorkPlan:
        model, a = self.cfg.model, self.assignment
        neurons = {}
        for nid in a.neurons.get(ip, []):
            n = model.neurons[nid]
            neurons[nid] = (n.bias, n.weights)
        plan = WorkPlan(self.epoch, list(model.sizes), list(model.activations), list(a.inputs.get(ip, [])),
                        neurons, a.output_device == ip)
        produced = ([0] if plan.inputs else []) + [l for l in plan.layers() if l < model.output_layer]
        for layer in produced:
            if self.mode == StrategyKind.INJECT:
                plan.consumers[layer] = [self.node.ap_ip] if layer == 0 else []
            elif self.mode != StrategyKind.PUBSUB:
                plan.consumers[layer] = a.consumers(layer, model)
        return plan

    def _ship(self) -> None:
        self.epoch += 1
        a = self.assignment
        if self.mode == StrategyKind.INJECT:
            holders = [ip for ip, ids in a.neurons.items() if ids]
            if len(holders) != 1:
                raise AssignmentError("inject supports only the centralized case: every neuron on one device")
        devices = list(dict.fromkeys(list(a.neurons) + list(a.inputs)))
        self.pending_acks = {}
        self.assign_started = self.node.sim.now
        self.assign_attempts = 0
        self.node.sim.trace(self.node.id, "nn", assign_epoch=self.epoch,
                            plan=[f"{ip}:{len(a.neurons.get(ip, []))}" for ip in devices])
        for ip in devices:
            payload = self._plan_for(ip).encode()
            if ip == self.node.ap_ip:
                self._apply_plan(WorkPlan.decode(payload))
            else:
                self.pending_acks[ip] = payload
        self._send_pending()

    def _send_pending(self) -> None:
        if not self.pending_acks:
            self._assignment_complete()
            return
        if self.assign_attempts >= self.cfg.assign_retries:
            dead = list(self.pending_acks)
            self.node.sim.trace(self.node.id, "nn", reassign=dead)
            for ip in dead:
                self.regs.pop(ip, None)
            self.assignment = None
            self._check_quota()
            return
        self.assign_attempts += 1
        for ip, payload in self.pending_acks.items():
            self.node.send_data(ip, DataType.NN_ASSIGN, payload)
        epoch = self.epoch
        self.node.timer(self.cfg.assign_retry, lambda: self._send_pending() if self.epoch == epoch else None,
                        "nn-assign")

    def _assignment_complete(self) -> None:
        if self.started:
            return
        self.started = True
        self.node.sim.trace(self.node.id, "obs", what="init-phase", duration=self.node.sim.now - self.assign_started)
        self.node.timer(self.cfg.start_delay, self._start_inference, "nn-start")

    def _start_inference(self) -> None:
        if self.cfg.samples is not None and self.issued >= self.cfg.samples:
            return
        self.issued += 1
        inference_id = self.issued
        self.node.sim.trace(self.node.id, "obs", what="inference-start", id=inference_id)
        self.node.broadcast(DataType.NN_START, _ID.pack(inference_id))
        self._on_start(inference_id)
        self.node.timer(self.cfg.inference_period, self._start_inference, "nn-start")

    # -- worker --------------------------------------------------------
    def _apply_plan(self, plan: WorkPlan) -> None:
        if self.plan is not None and plan.epoch <= self.plan.epoch:
            return
        old = self.plan
        self.plan = plan
        self.node.sim.trace(self.node.id, "nn", assigned=len(plan.neurons), inputs=len(plan.inputs),
                            output=plan.is_output, epoch=plan.epoch)
        if self.mode == StrategyKind.PUBSUB:
            ps = self.node.strategy
            if old is not None:
                for t in list(ps.local.publishes):
                    ps.withdraw(t)
                for t in list(ps.local.subscribes):
                    ps.unsubscribe(t)
            if plan.inputs:
                ps.publish(0)
            for layer in plan.layers():
                ps.subscribe(layer - 1)
                if layer < plan.output_layer:
                    ps.publish(layer)

    def _new_cycle(self, inference_id: int) -> None:
        for t in self.cycle_timers:
            t.cancel()
        self.cycle_timers = []
        self.current_id = inference_id
        self.cycle_start = self.node.sim.now
        self.received = {}
        self.done = set()
        self.computing = set()
        for old in [k for k in self.produced if k <= inference_id - self.cfg.keep_cycles]:
            del self.produced[old]
        if self.plan is None:
            return
        for layer in self.plan.layers():
            t = self.node.timer(layer * self.cfg.input_deadline, lambda l=layer: self._deadline(l), "nn-deadline")
            self.cycle_timers.append(t)

    def _on_start(self, inference_id: int) -> None:
        if inference_id < self.current_id:
            return
        if inference_id > self.current_id:
            self._new_cycle(inference_id)
        # a peer's output may have opened this cycle before our START arrived
        sent = 0 in self.produced.get(inference_id, {})
        if self.plan is not None and self.plan.inputs and not sent:
            values = {i: self.cfg.input_for(inference_id, i) for i in self.plan.inputs}
            self._emit(0, values)

    def _store(self, inference_id: int, layer: int, values: dict[int, float]) -> None:
        if inference_id < self.current_id:
            self.node.sim.trace(self.node.id, "nn", stale=inference_id, current=self.current_id)
            return
        if inference_id > self.current_id:
            self._new_cycle(inference_id)
        self.received.setdefault(layer, {}).update(values)
        self._try_compute(layer + 1)

    def _needed(self, layer: int) -> int:
        return self.plan.sizes[layer - 1]

    def _try_compute(self, layer: int) -> None:
        plan = self.plan
        if plan is None or layer not in plan.layers() or layer in self.done or layer in self.computing:
            return
        if len(self.received.get(layer - 1, {})) < self._needed(layer) or not self.node.operational:
            return
        self._compute(layer)

    def _compute(self, layer: int) -> None:
        have = self.received.get(layer - 1, {})
        inputs = [have[j] if j in have else self.prev.get((layer - 1, j), 0.0) for j in range(self._needed(layer))]
        self.computing.add(layer)
        mine = sorted(i for l, i in self.plan.neurons if l == layer)
        delay = self.node.profile.compute_delay_per_neuron * len(mine)
        inference_id = self.current_id
        self.node.job_started()

        def finish() -> None:
            self.node.job_finished()
            if inference_id != self.current_id:
                return
            act = self.plan.activations[layer - 1]
            values = {i: neuron_output(self.plan.neurons[(layer, i)][1], self.plan.neurons[(layer, i)][0],
                                       inputs, act) for i in mine}
            self.computing.discard(layer)
            self.done.add(layer)
            for j, v in enumerate(inputs):
                self.prev[(layer - 1, j)] = v
            self._emit(layer, values)
        self.node.timer(delay, finish, "nn-compute")

    def _emit(self, layer: int, values: dict[int, float]) -> None:
        inference_id = self.current_id
        self.produced.setdefault(inference_id, {}).setdefault(layer, {}).update(values)
        plan = self.plan
        if layer == plan.output_layer:
            self._complete(inference_id, values)
            return
        payload = encode_outputs(inference_id, layer, values)
        if self.mode == StrategyKind.PUBSUB:
            self.node.strategy.publish_data(layer, DataType.NEURON_OUTPUT, payload)
        else:
            for ip in plan.consumers.get(layer, []):
                if ip == self.node.ap_ip:
                    continue
                if self.mode == StrategyKind.INJECT:
                    self.node.strategy.send(DataType.NEURON_OUTPUT, payload, ip)
                else:
                    self.node.send_data(ip, DataType.NEURON_OUTPUT, payload)
        # feed our own next layer without a frame
        self._store(inference_id, layer, values)

    def _complete(self, inference_id: int, values: dict[int, float]) -> None:
        vec = [values[i] for i in sorted(values)]
        self.node.sim.trace(self.node.id, "obs", what="inference-done", id=inference_id,
                            duration=self.node.sim.now - self.cycle_start, values=vec)
        payload = encode_outputs(inference_id, self.plan.output_layer, values)
        if self.is_coordinator:
            self._on_result(inference_id, vec)
        else:
            self.node.send_data(self.cfg.coordinator_ip, DataType.NN_RESULT, payload)

    def _on_result(self, inference_id: int, vec: list[float]) -> None:
        self.results[inference_id] = vec
        if self.on_result is not None:
            self.on_result(inference_id, vec)

    def _own(self, layer: int) -> set[int]:
        if layer == 0:
            return set(self.plan.inputs)
        return {i for l, i in self.plan.neurons if l == layer}

    def _deadline(self, layer: int) -> None:
        if layer in self.done or layer in self.computing:
            return
        have = self.received.get(layer - 1, {})
        missing = [j for j in range(self._needed(layer)) if j not in have and j not in self._own(layer - 1)]
        if missing:
            self.nacks_sent += 1
            body = _ID.pack(self.current_id) + bytes([len(missing)]) + b"".join(bytes([layer - 1, j]) for j in missing)
            self.node.sim.trace(self.node.id, "obs", what="nack", id=self.current_id, layer=layer - 1, missing=missing)
            self.node.broadcast(DataType.NN_NACK, body)
        t = self.node.timer(self.cfg.fallback_window, lambda: self._fallback(layer), "nn-fallback")
        self.cycle_timers.append(t)

    def _fallback(self, layer: int) -> None:
        if layer in self.done or layer in self.computing:
            return
        have = self.received.get(layer - 1, {})
        missing = [j for j in range(self._needed(layer)) if j not in have]
        if layer - 1 in self.computing:
            # our own producer layer is still running; its values are on the way
            t = self.node.timer(self.cfg.fallback_window, lambda: self._fallback(layer), "nn-fallback")
            self.cycle_timers.append(t)
            return
        self.fallbacks += 1
        self.node.sim.trace(self.node.id, "obs", what="fallback", id=self.current_id, layer=layer - 1,
                            missing=missing)
        self._compute(layer)

    def _on_nack(self, env: Envelope) -> None:
        inference_id = _ID.unpack_from(env.payload)[0]
        n = env.payload[_ID.size]
        wanted: dict[int, dict[int, float]] = {}
        held = self.produced.get(inference_id, {})
        for k in range(n):
            layer, j = env.payload[_ID.size + 1 + 2 * k], env.payload[_ID.size + 2 + 2 * k]
            if j in held.get(layer, {}) and j in self._own(layer):
                wanted.setdefault(layer, {})[j] = held[layer][j]
        for layer, values in wanted.items():
            self.node.sim.trace(self.node.id, "nn", resend=inference_id, layer=layer, to=env.src)
            self.node.send_data(env.src, DataType.NEURON_OUTPUT, encode_outputs(inference_id, layer, values))

    # -- frames --------------------------------------------------------
    def _intercept(self, env: Envelope) -> bytes | None:
        """Outer-destination hook under inject: consume inputs meant for the model."""
        if env.type == DataType.NEURON_OUTPUT and self.plan is not None:
            self.on_data(env)
            return None
        return env.payload

    def on_data(self, env: Envelope) -> None:
        t = env.type
        if t == DataType.NN_REGISTER and self.is_coordinator:
            roles, capacity, q = _REG.unpack_from(env.payload)
            self._record_registration(env.src, Role(roles), capacity, None if q == NO_QUOTA else q)
            self.node.send_data(env.src, DataType.NN_REGISTER_ACK, b"")
            self._check_quota()
        elif t == DataType.NN_REGISTER_ACK:
            self.registered = True
        elif t == DataType.NN_ASSIGN:
            plan = WorkPlan.decode(env.payload)
            self._apply_plan(plan)
            self.node.send_data(env.src, DataType.NN_ASSIGN_ACK, _EPOCH.pack(plan.epoch))
        elif t == DataType.NN_ASSIGN_ACK and self.is_coordinator:
            if _EPOCH.unpack_from(env.payload)[0] == self.epoch and self.pending_acks.pop(env.src, None) is not None:
                if not self.pending_acks:
                    self._assignment_complete()
        elif t == DataType.NN_START:
            self._on_start(_ID.unpack_from(env.payload)[0])
        elif t == DataType.NEURON_OUTPUT:
            if self.plan is None:
                return
            inference_id, layer, values = decode_outputs(env.payload)
            self._store(inference_id, layer, values)
        elif t == DataType.NN_NACK:
            if self.plan is not None:
                self._on_nack(env)
        elif t == DataType.NN_RESULT and self.is_coordinator:
            inference_id, _, values = decode_outputs(env.payload)
            self._on_result(inference_id, [values[i] for i in sorted(values)])
