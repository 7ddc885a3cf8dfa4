"""Alternating layered ansatz circuits, parameter layout, and light cones.

Circuit family ALA(n, m, r, L): L layers of disjoint blocks.  Odd-numbered
layers tile the n qubits with n/m blocks of width m; even-numbered layers
are offset by half a block, so their first and last blocks have width m/2.
A block of width w consists of r sublayers, each being one rotation per
qubit (axes alternating Y, Z, Y, ... by sublayer) followed by a CZ chain
across the block, giving r*w parameters per block (p = r*m for full-width
blocks).

Parameter slots are ordered (layer, block, sublayer, qubit-within-block),
row-major, so flat parameter vectors are portable across implementations
of the same layout tag.  With even r the CZ chains cancel pairwise at zero
angles and the whole circuit is exactly the identity.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass

import numpy as np

from .core import StateVector, PauliString, PauliSum, _cz_inplace, _rotate_inplace

LAYOUT_VERSION = "ala-v1"


@dataclass(frozen=True)
class Gate:
    """A rotation (kind="rot", one qubit, axis, parameter slot) or a CZ."""

    kind: str
    qubits: tuple[int, ...]
    axis: str = ""
    param: int = -1


@dataclass(frozen=True)
class Block:
    layer: int  # 1-based layer index
    start: int  # first qubit
    stop: int  # one past the last qubit
    param_start: int
    param_stop: int

    @property
    def width(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class AlaCircuit:
    n: int
    m: int
    r: int
    L: int
    blocks: tuple[Block, ...]
    gates: tuple[Gate, ...]
    num_params: int

    def __post_init__(self):
        seen = set()
        for g in self.gates:
            for q in g.qubits:
                if not 0 <= q < self.n:
                    raise ValueError(f"gate qubit {q} out of range for n={self.n}")
            if g.kind == "rot":
                if g.param in seen:
                    raise ValueError(f"parameter slot {g.param} used twice")
                seen.add(g.param)
        if seen and (min(seen) != 0 or max(seen) != self.num_params - 1):
            raise ValueError("parameter slots must cover 0..num_params-1")
        if len(seen) != self.num_params:
            raise ValueError(
                f"{len(seen)} rotation slots but num_params={self.num_params}"
            )

    @property
    def p(self) -> int:
        """Parameters per full-width block."""
        return self.r * self.m

    @property
    def layout_tag(self) -> str:
        return f"{LAYOUT_VERSION}:n{self.n}-m{self.m}-r{self.r}-L{self.L}"


def _layer_ranges(n: int, m: int, layer: int) -> list[tuple[int, int]]:
    """Qubit ranges of the blocks in a 1-based layer index."""
    if layer % 2 == 1:
        return [(i * m, (i + 1) * m) for i in range(n // m)]
    half = m // 2
    ranges = [(0, half)]
    ranges += [(half + i * m, half + (i + 1) * m) for i in range(n // m - 1)]
    ranges.append((n - half, n))
    return ranges


def _sublayer_axis(s: int) -> str:
    return "Y" if s % 2 == 0 else "Z"


def build_ala(n: int, m: int, r: int, L: int) -> AlaCircuit:
    """Construct ALA(n, m, r, L); requires m even, m | n, r >= 1, L >= 1."""
    if m < 2 or m % 2 != 0:
        raise ValueError(f"block width m must be even and >= 2, got {m}")
    if n % m != 0:
        raise ValueError(f"block width m={m} must divide n={n}")
    if r < 1:
        raise ValueError(f"sublayer count r must be >= 1, got {r}")
    if L < 1:
        raise ValueError(f"layer count L must be >= 1, got {L}")
    blocks: list[Block] = []
    gates: list[Gate] = []
    next_param = 0
    for layer in range(1, L + 1):
        for start, stop in _layer_ranges(n, m, layer):
            width = stop - start
            param_start = next_param
            for s in range(r):
                axis = _sublayer_axis(s)
                for q in range(start, stop):
                    gates.append(Gate("rot", (q,), axis, next_param))
                    next_param += 1
                for q in range(start, stop - 1):
                    gates.append(Gate("cz", (q, q + 1)))
            blocks.append(Block(layer, start, stop, param_start, next_param))
    return AlaCircuit(n, m, r, L, tuple(blocks), tuple(gates), next_param)


def init_params(circuit: AlaCircuit, kappa: float, seed: int) -> np.ndarray:
    """i.i.d. Gaussian(0, kappa^2) parameters from a seeded PCG64 stream."""
    if not 0.0 < kappa <= 1.0:
        raise ValueError(f"kappa must be in (0, 1], got {kappa}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.normal(0.0, kappa, size=circuit.num_params)


def _apply_gates(amps: np.ndarray, n: int, gates, params: np.ndarray) -> None:
    """Apply a gate sequence in declared order to a raw amplitude buffer."""
    for g in gates:
        if g.kind == "rot":
            _rotate_inplace(amps, n, g.qubits[0], g.axis, float(params[g.param]))
        else:
            _cz_inplace(amps, n, g.qubits[0], g.qubits[1])


def apply_circuit(circuit: AlaCircuit, params: np.ndarray, state: StateVector) -> StateVector:
    """Sequentially apply the circuit's gates; norm is preserved."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (circuit.num_params,):
        raise ValueError(
            f"expected {circuit.num_params} parameters, got shape {params.shape}"
        )
    if state.n != circuit.n:
        raise ValueError(f"state has n={state.n}, circuit has n={circuit.n}")
    amps = state.amplitudes.copy()
    _apply_gates(amps, circuit.n, circuit.gates, params)
    return StateVector(circuit.n, amps)


@functools.lru_cache(maxsize=None)
def _cone_params(circuit: AlaCircuit, support: frozenset) -> frozenset:
    """Reverse sweep over the gate list tracking the active qubit set.

    A gate can influence the expectation of an operator supported on
    ``support`` only if it touches a currently active qubit; entangling
    gates extend the active set to all their qubits.
    """
    active = set(support)
    cone: set[int] = set()
    for g in reversed(circuit.gates):
        if not active.intersection(g.qubits):
            continue
        if g.kind == "rot":
            cone.add(g.param)
        else:
            active.update(g.qubits)
    return frozenset(cone)


def light_cone(circuit: AlaCircuit, term: PauliString) -> frozenset:
    """Parameter slots inside the backward light cone of a Pauli term.

    Every parameter outside the returned set has identically zero gradient
    for the expectation of ``term``.  Results are memoized per (circuit,
    support); the cache is safe for concurrent readers.
    """
    for q in term.qubits:
        if q >= circuit.n:
            raise ValueError(f"term qubit {q} out of range for n={circuit.n}")
    return _cone_params(circuit, frozenset(term.qubits))


def cone_qubits(circuit: AlaCircuit, term: PauliString) -> frozenset:
    """Qubits reachable by the backward light cone (for size diagnostics)."""
    active = set(term.qubits)
    for g in reversed(circuit.gates):
        if g.kind == "cz" and active.intersection(g.qubits):
            active.update(g.qubits)
    return frozenset(active)


def observable_cone(circuit: AlaCircuit, obs: PauliSum) -> frozenset:
    """Union of the per-term light cones of a Pauli sum."""
    cone: frozenset = frozenset()
    for term in obs.terms:
        cone = cone | light_cone(circuit, term)
    return cone


# Serialization: enough structure to re-apply the circuit and to check that
# a flat parameter file matches the layout it was produced for.

def circuit_to_json(circuit: AlaCircuit) -> dict:
    return {
        "layout": circuit.layout_tag,
        "n": circuit.n,
        "m": circuit.m,
        "r": circuit.r,
        "L": circuit.L,
        "gates": [
            {"kind": g.kind, "qubits": list(g.qubits), "axis": g.axis, "param": g.param}
            for g in circuit.gates
        ],
    }


def circuit_from_json(doc: dict) -> AlaCircuit:
    circuit = build_ala(doc["n"], doc["m"], doc["r"], doc["L"])
    rebuilt = [
        {"kind": g.kind, "qubits": list(g.qubits), "axis": g.axis, "param": g.param}
        for g in circuit.gates
    ]
    if rebuilt != doc["gates"]:
        raise ValueError("gate list does not match the declared ALA layout")
    return circuit


def params_to_json(circuit: AlaCircuit, params: np.ndarray) -> dict:
    return {"layout": circuit.layout_tag, "values": [float(v) for v in params]}


def params_from_json(circuit: AlaCircuit, doc: dict) -> np.ndarray:
    if doc["layout"] != circuit.layout_tag:
        raise ValueError(
            f"parameter layout {doc['layout']!r} does not match {circuit.layout_tag!r}"
        )
    values = np.asarray(doc["values"], dtype=np.float64)
    if values.shape != (circuit.num_params,):
        raise ValueError(f"expected {circuit.num_params} values, got {values.shape}")
    return values


def save_params(path, circuit: AlaCircuit, params: np.ndarray) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_json(circuit, params), fh)
        fh.write("\n")
