from .assign import Assignment, AssignmentError, WorkerInfo, assign_neurons, largest_remainder
from .model import ModelSpec, Neuron, activate, input_value, load, loads, dumps

__all__ = [
    "Assignment", "AssignmentError", "ModelSpec", "Neuron", "WorkerInfo", "activate", "assign_neurons",
    "dumps", "input_value", "largest_remainder", "load", "loads",
]
