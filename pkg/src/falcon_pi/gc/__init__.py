from .circuit import (
    EVALUATOR, GARBLER, MAX_WIDTH, CircuitBuilder, CircuitError, CircuitGraph, Cost, Gate,
    GateCount, Kind, Port, WireBundle, gate_count, simd_cost,
)
from .garble import GarbledCircuit, garble
from .ot import ObliviousTransferConfig
from .twoparty import CircuitMismatch, run_two_party

__all__ = [name for name in dir() if not name.startswith("_")]
