"""Dense statevector simulation and Pauli-string algebra.

Conventions used throughout the package:

* A rotation by ``angle`` about a Pauli axis ``P`` is ``exp(-1j*angle*P/2)``.
  Under this convention every expectation value is a degree-1 trigonometric
  polynomial in each angle, so the +-pi/2 parameter-shift rule used by the
  training module is exact rather than approximate.
* Qubit 0 is the most significant bit of a basis index: on two qubits the
  basis index 2 == 0b10 is the state |10> (qubit 0 set, qubit 1 clear).
* Amplitudes are complex128; stated tolerances assume 64-bit floats.

States are pure throughout: guiding states are pure superpositions, so
Tr[O rho] reduces to <psi|O|psi> and density matrices are never built.
All public operations are pure functions returning fresh values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-10

PAULI_AXES = ("X", "Y", "Z")


@dataclass(frozen=True)
class StateVector:
    """Pure state on ``n`` qubits as 2**n complex amplitudes with unit norm."""

    n: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"qubit count must be >= 1, got {self.n}")
        amps = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1)
        if amps.shape != (2**self.n,):
            raise ValueError(
                f"expected {2**self.n} amplitudes for n={self.n}, got {amps.shape[0]}"
            )
        norm = float(np.sqrt(np.sum(np.abs(amps) ** 2)))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state norm {norm} deviates from 1 by more than {NORM_TOL}")
        object.__setattr__(self, "amplitudes", amps)


@dataclass(frozen=True)
class PauliString:
    """Weighted tensor product of single-qubit Paulis, identity elsewhere.

    ``factors`` maps qubit index -> axis in {X, Y, Z}; the locality of the
    string is exactly ``len(factors)``.
    """

    coefficient: float
    factors: tuple[tuple[int, str], ...]

    def __post_init__(self):
        pairs = self.factors.items() if isinstance(self.factors, dict) else self.factors
        facs = tuple(sorted((int(q), str(a)) for q, a in pairs))
        qubits = [q for q, _ in facs]
        if len(set(qubits)) != len(qubits):
            raise ValueError(f"duplicate qubit indices in {facs}")
        for q, a in facs:
            if q < 0:
                raise ValueError(f"negative qubit index {q}")
            if a not in PAULI_AXES:
                raise ValueError(f"unknown Pauli axis {a!r}")
        object.__setattr__(self, "factors", facs)
        object.__setattr__(self, "coefficient", float(self.coefficient))

    @property
    def locality(self) -> int:
        return len(self.factors)

    @property
    def qubits(self) -> tuple[int, ...]:
        return tuple(q for q, _ in self.factors)


@dataclass(frozen=True)
class PauliSum:
    """Weighted sum of Pauli strings with a uniform normalization scalar.

    Represents both observables and Hamiltonians.  With normalization 1/K,
    each |coefficient| <= 1 and K terms, the operator norm is <= 1; the
    normalization is stored explicitly so observables may also carry e.g.
    a 1/sqrt(n) prefactor with operator norm sqrt(n).
    """

    terms: tuple[PauliString, ...]
    normalization: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "normalization", float(self.normalization))

    def max_qubit(self) -> int:
        return max((max(t.qubits, default=0) for t in self.terms), default=0)

    def operator_norm_upper(self) -> float:
        """Triangle-inequality upper bound on the operator norm."""
        return abs(self.normalization) * sum(abs(t.coefficient) for t in self.terms)

    def is_diagonal(self) -> bool:
        return all(a == "Z" for t in self.terms for _, a in t.factors)


def new_basis_state(n: int, index: int) -> StateVector:
    """Computational basis state |index> on n qubits."""
    if not 0 <= index < 2**n:
        raise ValueError(f"basis index {index} out of range for n={n}")
    amps = np.zeros(2**n, dtype=np.complex128)
    amps[index] = 1.0
    return StateVector(n, amps)


def _check_qubit(n: int, qubit: int) -> None:
    if not 0 <= qubit < n:
        raise ValueError(f"qubit {qubit} out of range for n={n}")


def _rotate_inplace(amps: np.ndarray, n: int, qubit: int, axis: str, angle: float) -> None:
    """Apply exp(-1j*angle*sigma_axis/2) on ``qubit`` to a raw amplitude buffer."""
    v = amps.reshape([2] * n).swapaxes(0, qubit)
    half = 0.5 * angle
    if axis == "Z":
        v[0] *= np.exp(-1j * half)
        v[1] *= np.exp(1j * half)
        return
    c, s = np.cos(half), np.sin(half)
    if axis == "Y":
        new0 = c * v[0] - s * v[1]
        new1 = s * v[0] + c * v[1]
    elif axis == "X":
        new0 = c * v[0] - 1j * s * v[1]
        new1 = -1j * s * v[0] + c * v[1]
    else:
        raise ValueError(f"unknown rotation axis {axis!r}")
    v[0], v[1] = new0, new1


def _cz_inplace(amps: np.ndarray, n: int, q1: int, q2: int) -> None:
    """Negate amplitudes of basis states with both control qubits set."""
    idx: list = [slice(None)] * n
    idx[q1] = 1
    idx[q2] = 1
    amps.reshape([2] * n)[tuple(idx)] *= -1.0


def _pauli_apply_single(amps: np.ndarray, n: int, qubit: int, axis: str) -> np.ndarray:
    """Return sigma_axis|amps> for a single-qubit Pauli (fresh array)."""
    v = amps.reshape([2] * n).swapaxes(0, qubit)
    out = np.empty_like(v)
    if axis == "X":
        out[0], out[1] = v[1], v[0]
    elif axis == "Y":
        out[0] = -1j * v[1]
        out[1] = 1j * v[0]
    elif axis == "Z":
        out[0] = v[0]
        out[1] = -v[1]
    else:
        raise ValueError(f"unknown Pauli axis {axis!r}")
    return np.ascontiguousarray(out.swapaxes(0, qubit)).reshape(-1)


def _pauli_string_apply(amps: np.ndarray, n: int, term: PauliString) -> np.ndarray:
    """Return coefficient * P|amps> for a Pauli string (fresh array)."""
    out = amps
    for qubit, axis in term.factors:
        _check_qubit(n, qubit)
        out = _pauli_apply_single(out, n, qubit, axis)
    if out is amps:
        out = amps.copy()
    out *= term.coefficient
    return out


def _observable_apply(amps: np.ndarray, n: int, obs: PauliSum) -> np.ndarray:
    """Return O|amps> for a Pauli sum (fresh array)."""
    out = np.zeros_like(amps)
    for term in obs.terms:
        out += _pauli_string_apply(amps, n, term)
    out *= obs.normalization
    return out


def apply_rotation(state: StateVector, qubit: int, axis: str, angle: float) -> StateVector:
    """Apply exp(-1j*angle*sigma_axis/2) on ``qubit``; norm is preserved."""
    _check_qubit(state.n, qubit)
    amps = state.amplitudes.copy()
    _rotate_inplace(amps, state.n, qubit, axis, float(angle))
    return StateVector(state.n, amps)


def apply_cz(state: StateVector, q1: int, q2: int) -> StateVector:
    """Apply a controlled-Z between two distinct qubits; exactly unitary."""
    if q1 == q2:
        raise ValueError(f"cz qubits must differ, got {q1} twice")
    _check_qubit(state.n, q1)
    _check_qubit(state.n, q2)
    amps = state.amplitudes.copy()
    _cz_inplace(amps, state.n, q1, q2)
    return StateVector(state.n, amps)


def pauli_expectation(state: StateVector, term: PauliString) -> float:
    """<psi|c*P|psi>; real by hermiticity, |result| <= |coefficient|."""
    applied = _pauli_string_apply(state.amplitudes, state.n, term)
    return float(np.real(np.sum(np.conj(state.amplitudes) * applied)))


def observable_expectation(state: StateVector, obs: PauliSum) -> float:
    """normalization * sum of per-term expectations."""
    total = 0.0
    for term in obs.terms:
        total += pauli_expectation(state, term)
    return obs.normalization * total


def fidelity(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2: symmetric, 1 iff equal up to global phase."""
    if a.n != b.n:
        raise ValueError(f"qubit count mismatch: {a.n} vs {b.n}")
    overlap = np.sum(np.conj(a.amplitudes) * b.amplitudes)
    return float(np.abs(overlap) ** 2)


def trace_distance_pure(a: StateVector, b: StateVector) -> float:
    """(1/2)||rho_a - rho_b||_1 for pure states, which equals sqrt(1 - F)."""
    return float(np.sqrt(max(0.0, 1.0 - fidelity(a, b))))


# Dense matrices.  A Pauli string acts on basis columns as a bit-flip
# permutation with a +-1 / +-i phase, which keeps assembly at
# O(terms * 2^n) instead of materializing Kronecker products per term.

def _term_permutation(term: PauliString, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Column action of a Pauli string: P|i> = phase[i] |i ^ flip_mask>."""
    cols = np.arange(2**n, dtype=np.int64)
    flip_mask = 0
    phase_mask = 0
    n_y = 0
    for q, a in term.factors:
        bit = 1 << (n - 1 - q)
        if a in ("X", "Y"):
            flip_mask |= bit
        if a in ("Y", "Z"):
            phase_mask |= bit
        if a == "Y":
            n_y += 1
    rows = cols ^ flip_mask
    signs = 1 - 2 * (np.bitwise_count(cols & phase_mask).astype(np.int64) & 1)
    phases = (1j**n_y) * signs
    return rows, term.coefficient * phases


def pauli_sum_dense(obs: PauliSum, n: int) -> np.ndarray:
    """Dense 2^n x 2^n matrix of a Pauli sum.

    Returns float64 when every term has an even number of Y factors (all
    matrix elements real, e.g. Heisenberg bonds), complex128 otherwise.
    """
    if obs.terms and obs.max_qubit() >= n:
        raise ValueError(f"observable touches qubit {obs.max_qubit()} but n={n}")
    dim = 2**n
    all_real = all(sum(1 for _, a in t.factors if a == "Y") % 2 == 0 for t in obs.terms)
    dtype = np.float64 if all_real else np.complex128
    mat = np.zeros((dim, dim), dtype=dtype)
    cols = np.arange(dim, dtype=np.int64)
    for term in obs.terms:
        rows, vals = _term_permutation(term, n)
        mat[rows, cols] += vals.real if all_real else vals
    mat *= obs.normalization
    return mat


def operator_norm_dense(obs: PauliSum, n: int, dense_cap: int = 10) -> float:
    """Exact operator norm: diagonal scan for Z-only sums, else dense eigenvalues.

    Falls back to the triangle upper bound above ``dense_cap`` qubits for
    non-diagonal sums.
    """
    if obs.is_diagonal():
        diag = np.zeros(2**n)
        for term in obs.terms:
            _, vals = _term_permutation(term, n)
            diag += vals.real
        return abs(obs.normalization) * float(np.max(np.abs(diag)))
    if n <= dense_cap:
        vals = np.linalg.eigvalsh(pauli_sum_dense(obs, n).astype(np.complex128))
        return float(np.max(np.abs(vals)))
    return obs.operator_norm_upper()
