import math
import random
from ipaddress import IPv4Address
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treenet.network import expected_inputs
from treenet.nn import (AssignmentError, ModelSpec, WorkerInfo, activate, assign_neurons, dumps, largest_remainder,
                        load, loads)
from treenet.nn.app import WorkPlan, decode_outputs, encode_outputs
from treenet.nn.model import neuron_output
from treenet.nn.oracle import forward
from treenet.runner import run_scenario
from treenet.scenario import testbed as five_node

MODELS = Path(__file__).resolve().parents[1] / "scenarios" / "models"


def ip(k):
    return IPv4Address(f"10.0.{k}.1")


# -- model ---------------------------------------------------------------

def test_identity_all_ones_doubles_and_sums():
    m = ModelSpec.uniform([2, 4, 4, 2], 1.0, 0.0, "identity")
    # (1 + 1) -> 2 per hidden neuron -> 8 -> 32
    assert list(forward(m, [1.0, 1.0])) == [32.0, 32.0]


def test_zero_weight_sigmoid_is_one_half():
    m = ModelSpec.uniform([3, 5, 2], 0.0, 0.0, "sigmoid")
    assert list(forward(m, [0.3, -7.0, 11.0])) == [0.5, 0.5]


@pytest.mark.parametrize("tag,x,want", [
    ("identity", -2.5, -2.5), ("relu", -2.5, 0.0), ("relu", 2.5, 2.5),
    ("sigmoid", 0.0, 0.5), ("tanh", 0.0, 0.0),
])
def test_activation_values(tag, x, want):
    assert activate(tag, x) == want


def test_sigmoid_is_stable_for_large_inputs():
    assert activate("sigmoid", -1000.0) == 0.0
    assert activate("sigmoid", 1000.0) == 1.0


def test_unknown_activation():
    with pytest.raises(ValueError):
        activate("softplus", 1.0)


def test_model_shape_checks():
    with pytest.raises(ValueError):
        ModelSpec([3], [], {})
    m = ModelSpec.uniform([2, 2], 1.0, 0.0)
    del m.neurons[(1, 1)]
    with pytest.raises(ValueError):
        ModelSpec(m.sizes, m.activations, m.neurons)


def test_text_format_round_trip():
    m = ModelSpec.random(random.Random(3), [3, 4, 2], ["relu", "tanh"])
    again = loads(dumps(m))
    assert again == m


def test_stock_model_loads():
    m = load(MODELS / "mlp-2-4-4-2.txt")
    assert m.sizes == [2, 4, 4, 2]
    assert len(m.hidden_ids()) == 8


def test_model_file_needs_header():
    with pytest.raises(ValueError):
        loads("1 0 0.0 1.0\n")


@given(st.integers(0, 2**31), st.lists(st.integers(1, 6), min_size=2, max_size=4),
       st.sampled_from(["identity", "sigmoid", "tanh", "relu"]))
def test_scalar_forward_agrees_with_matrix_oracle(seed, sizes, act):
    m = ModelSpec.random(random.Random(seed), sizes, act)
    x = [random.Random(seed + 1).uniform(-1, 1) for _ in range(sizes[0])]
    for layer in range(1, len(sizes)):
        x = [neuron_output(m.neurons[(layer, i)].weights, m.neurons[(layer, i)].bias, x, act)
             for i in range(sizes[layer])]
    assert np.allclose(x, forward(m, [random.Random(seed + 1).uniform(-1, 1) for _ in range(sizes[0])]),
                       rtol=0, atol=1e-12)


# -- assignment ------------------------------------------------------------

def test_largest_remainder_examples():
    assert largest_remainder(8, [2, 2, 2, 3]) == [2, 2, 2, 2]
    assert largest_remainder(10, [1, 1, 1]) == [4, 3, 3]
    assert largest_remainder(5, [3, 1]) == [4, 1]


@given(st.integers(0, 200), st.lists(st.integers(1, 50), min_size=1, max_size=10))
def test_largest_remainder_properties(total, weights):
    q = largest_remainder(total, weights)
    assert sum(q) == total
    s = sum(weights)
    for qi, w in zip(q, weights):
        exact = total * w / s
        assert math.floor(exact) <= qi <= math.floor(exact) + 1


def test_largest_remainder_rejects_zero_weights():
    with pytest.raises(AssignmentError):
        largest_remainder(3, [0, 0])


def test_explicit_quotas_must_cover_hidden_layers():
    m = ModelSpec.uniform([2, 4, 4, 2], 1.0, 0.0)
    workers = [WorkerInfo(ip(1), 2, 1), WorkerInfo(ip(2), 2, 1)]
    with pytest.raises(AssignmentError):
        assign_neurons(m, workers, ip(0), [ip(1)])


def test_assignment_is_contiguous_and_complete():
    m = ModelSpec.uniform([3, 4, 4, 2], 1.0, 0.0)
    workers = [WorkerInfo(ip(1), 2, 3), WorkerInfo(ip(2), 2, 5)]
    a = assign_neurons(m, workers, ip(0), [ip(1), ip(2)])
    assert a.neurons[ip(1)] == [(1, 0), (1, 1), (1, 2)]
    assert a.neurons[ip(2)] == [(1, 3), (2, 0), (2, 1), (2, 2), (2, 3)]
    assert a.neurons[ip(0)] == [(3, 0), (3, 1)]
    assert a.inputs == {ip(1): [0, 1], ip(2): [2]}
    assert a.devices_for_layer(2, m) == [ip(2)]
    assert a.consumers(1, m) == [ip(2)]
    assert a.consumers(3, m) == []


def test_testbed_assignment_counts():
    b = run_scenario(five_node("pubsub", seed=0, samples=1))
    counts = {k: len(n.app.plan.neurons) for k, n in b.network.nodes.items()}
    assert counts == {"E1": 1, "E2": 1, "E3": 1, "Pi": 5, "R": 2}


def test_centralized_testbed_puts_everything_on_pi():
    b = run_scenario(five_node("inject", seed=0, samples=1))
    counts = {k: len(n.app.plan.neurons) for k, n in b.network.nodes.items() if n.app.plan is not None}
    assert counts["Pi"] == 10
    assert all(v == 0 for k, v in counts.items() if k != "Pi")


# -- wire payloads --------------------------------------------------------------

@given(st.integers(0, 2**32 - 1), st.integers(0, 255),
       st.dictionaries(st.integers(0, 255), st.floats(allow_nan=False), max_size=20))
def test_outputs_round_trip(inference_id, layer, values):
    assert decode_outputs(encode_outputs(inference_id, layer, values)) == (inference_id, layer, values)


def test_work_plan_round_trip():
    m = ModelSpec.random(random.Random(9), [2, 3, 2], ["tanh", "sigmoid"])
    plan = WorkPlan(epoch=4, sizes=m.sizes, activations=m.activations, inputs=[1],
                    neurons={(1, 2): (m.neurons[(1, 2)].bias, m.neurons[(1, 2)].weights),
                             (2, 0): (m.neurons[(2, 0)].bias, m.neurons[(2, 0)].weights)},
                    is_output=True, consumers={1: [ip(3), ip(4)]})
    assert WorkPlan.decode(plan.encode()) == plan
    assert plan.layers() == [1, 2]


# -- fault handling ------------------------------------------------------------

def test_single_lost_output_is_recovered_exactly():
    b = run_scenario(five_node("pubsub", seed=2, drops=[dict(category="data", type="neuron_output",
                                                                start=26_000, count=1)]))
    assert sum(d.hits for d in b.network.drop_rules) == 1
    assert b.nacks >= 1
    assert [v.status for v in b.verdicts] == ["match"] * 10


def stale_oracle(model, x, overrides):
    """Forward pass with some neuron outputs pinned to given values."""
    x = np.asarray(x, dtype=np.float64)
    for layer in range(1, model.n_layers):
        w = np.array([model.neurons[(layer, i)].weights for i in range(model.sizes[layer])])
        bias = np.array([model.neurons[(layer, i)].bias for i in range(model.sizes[layer])])
        z = w @ x + bias
        x = {"identity": z, "relu": np.maximum(z, 0.0), "tanh": np.tanh(z),
             "sigmoid": 1.0 / (1.0 + np.exp(-z))}[model.activation(layer)]
        for (l, i), v in overrides.items():
            if l == layer:
                x[i] = v
    return x


def test_dead_worker_leaves_last_value_in_place():
    b = run_scenario(five_node("pubsub", seed=2, faults=[dict(at=30_500, kill="E3")]))
    net = b.network
    statuses = [v.status for v in b.verdicts]
    assert statuses[:4] == ["match"] * 4
    assert statuses[4:] == ["degraded"] * 6
    dead = net.nodes["E3"].app
    (nid,) = dead.plan.neurons
    stale = dead.produced[max(dead.produced)][nid[0]][nid[1]]
    for v in b.verdicts[4:]:
        want = stale_oracle(net.model, expected_inputs(net, v.inference_id), {nid: stale})
        assert np.max(np.abs(want - np.array(v.values))) <= 1e-9
