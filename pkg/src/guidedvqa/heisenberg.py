"""Parametric 2D Heisenberg models, exact ground states, and labeled datasets.

The data pipeline: sample nearest-neighbour couplings uniformly from [0, 2],
diagonalize H(x) densely, synthesize a guiding state as a normalized mix of
the ground and first excited states, and label each sample with the exact
ground-state expectation of the target observable.

Reproducibility: all randomness flows through numpy's PCG64 bit generator.
The substream for sample k of a dataset with 64-bit seed s is
``PCG64(SeedSequence((s, k)))``, so datasets are bit-exact for a fixed seed
regardless of how sample solves are scheduled.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .core import (
    PauliString,
    PauliSum,
    StateVector,
    observable_expectation,
    pauli_sum_dense,
)

DENSE_SOLVER_CAP = 14
DEGENERACY_TOL = 1e-10


class CapacityError(RuntimeError):
    """Problem size exceeds the configured dense-solver capacity."""


@dataclass(frozen=True)
class Lattice2D:
    """Open-boundary rows x cols lattice; sites are row-major indices."""

    rows: int
    cols: int
    bonds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"lattice shape {self.rows}x{self.cols} invalid")
        n = self.rows * self.cols
        seen = set()
        for a, b in self.bonds:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"bond ({a},{b}) out of range for n={n}")
            ra, ca = divmod(a, self.cols)
            rb, cb = divmod(b, self.cols)
            if abs(ra - rb) + abs(ca - cb) != 1:
                raise ValueError(f"bond ({a},{b}) is not lattice-adjacent")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValueError(f"duplicate bond ({a},{b})")
            seen.add(key)

    @property
    def n(self) -> int:
        return self.rows * self.cols


def square_lattice(rows: int, cols: int) -> Lattice2D:
    """Nearest-neighbour bonds in a fixed row-major order (right, then down)."""
    bonds = []
    for site in range(rows * cols):
        r, c = divmod(site, cols)
        if c + 1 < cols:
            bonds.append((site, site + 1))
        if r + 1 < rows:
            bonds.append((site, site + cols))
    return Lattice2D(rows, cols, tuple(bonds))


@dataclass(frozen=True)
class CouplingVector:
    """Coupling strengths aligned with a lattice's bond order."""

    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


@dataclass(frozen=True)
class GroundSolution:
    """Lowest eigenpair of H(x) plus the first excited state."""

    energy: float
    ground: StateVector
    gap: float
    first_excited: StateVector
    degenerate: bool


@dataclass(frozen=True)
class Sample:
    x: CouplingVector
    guiding: StateVector
    label: float
    degenerate: bool


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    observable: PauliSum
    delta: float
    seed: int
    lattice: Lattice2D

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples])


def build_heisenberg(lattice: Lattice2D, x: CouplingVector) -> PauliSum:
    """H(x) = sum over bonds of x_ij (X_i X_j + Y_i Y_j + Z_i Z_j)."""
    if len(x.values) != len(lattice.bonds):
        raise ValueError(
            f"couplings cover {len(x.values)} bonds, lattice has {len(lattice.bonds)}"
        )
    terms = []
    for (a, b), coupling in zip(lattice.bonds, x.values):
        for axis in ("X", "Y", "Z"):
            terms.append(PauliString(coupling, ((a, axis), (b, axis))))
    return PauliSum(tuple(terms), 1.0)


def _standardize_phase(vec: np.ndarray) -> np.ndarray:
    """Fix the global phase so the largest-magnitude amplitude is real positive."""
    k = int(np.argmax(np.abs(vec)))
    pivot = vec[k]
    if np.abs(pivot) == 0.0:
        return vec
    return vec * (np.conj(pivot) / np.abs(pivot))


def ground_state(h: PauliSum, n: int, cap: int = DENSE_SOLVER_CAP) -> GroundSolution:
    """Dense lowest-two eigensolve of H on n qubits.

    Degenerate ground spaces (gap < 1e-10) are flagged, not resampled, and
    the solver's lowest-index eigenvector is kept so seeded streams are
    never perturbed.
    """
    if n > cap:
        raise CapacityError(f"n={n} exceeds dense-solver cap of {cap} qubits")
    mat = pauli_sum_dense(h, n)
    vals, vecs = eigh(mat, subset_by_index=[0, 1])
    g = _standardize_phase(vecs[:, 0].astype(np.complex128))
    e = _standardize_phase(vecs[:, 1].astype(np.complex128))
    g /= np.sqrt(np.sum(np.abs(g) ** 2))
    e /= np.sqrt(np.sum(np.abs(e) ** 2))
    residual = float(np.sqrt(np.sum(np.abs(mat @ g - vals[0] * g) ** 2)))
    if residual > 1e-9:
        raise ArithmeticError(f"eigensolver residual {residual} above 1e-9")
    gap = float(vals[1] - vals[0])
    return GroundSolution(
        energy=float(vals[0]),
        ground=StateVector(n, g),
        gap=gap,
        first_excited=StateVector(n, e),
        degenerate=gap < DEGENERACY_TOL,
    )


def make_guiding_state(sol: GroundSolution, delta: float) -> StateVector:
    """Normalized mix (1-delta)|ground> + delta|first excited>.

    The raw combination is not unit norm for delta in (0, 1); normalizing
    gives fidelity (1-delta)^2 / ((1-delta)^2 + delta^2) with the ground
    state, and trace distance sqrt(1 - fidelity).
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must be in [0, 1), got {delta}")
    overlap = np.abs(
        np.sum(np.conj(sol.ground.amplitudes) * sol.first_excited.amplitudes)
    )
    if overlap > 1e-10:
        raise ValueError(f"excited state not orthogonal to ground (overlap {overlap})")
    amps = (1.0 - delta) * sol.ground.amplitudes + delta * sol.first_excited.amplitudes
    amps = amps / np.sqrt(np.sum(np.abs(amps) ** 2))
    return StateVector(sol.ground.n, amps)


def guiding_fidelity(delta: float) -> float:
    """Fidelity of the normalized guiding state with the ground state."""
    return (1.0 - delta) ** 2 / ((1.0 - delta) ** 2 + delta**2)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, index))))


def make_dataset(
    lattice: Lattice2D,
    obs: PauliSum,
    count: int,
    delta: float,
    seed: int,
    index_offset: int = 0,
    cap: int = DENSE_SOLVER_CAP,
) -> Dataset:
    """Draw ``count`` samples using substreams (seed, index_offset + i)."""
    if count < 1:
        raise ValueError(f"sample count must be >= 1, got {count}")
    samples = []
    for i in range(count):
        rng = _sample_rng(seed, index_offset + i)
        x = CouplingVector(tuple(rng.uniform(0.0, 2.0, size=len(lattice.bonds))))
        sol = ground_state(build_heisenberg(lattice, x), lattice.n, cap=cap)
        guiding = make_guiding_state(sol, delta)
        label = observable_expectation(sol.ground, obs)
        samples.append(Sample(x, guiding, label, sol.degenerate))
    return Dataset(tuple(samples), obs, float(delta), int(seed), lattice)


def generate_dataset(
    lattice: Lattice2D,
    obs: PauliSum,
    m_train: int,
    m_test: int,
    delta: float,
    seed: int,
    cap: int = DENSE_SOLVER_CAP,
) -> tuple[Dataset, Dataset]:
    """Train/test split; test substreams continue after the train indices."""
    train = make_dataset(lattice, obs, m_train, delta, seed, 0, cap=cap)
    test = make_dataset(lattice, obs, m_test, delta, seed, m_train, cap=cap)
    return train, test


def z_sum_observable(n: int) -> PauliSum:
    """O = (1/sqrt(n)) sum_i Z_i; note operator norm sqrt(n), not <= 1."""
    terms = tuple(PauliString(1.0, ((q, "Z"),)) for q in range(n))
    return PauliSum(terms, 1.0 / np.sqrt(n))


def normalized_z_observable(n: int) -> PauliSum:
    """O = (1/n) sum_i Z_i with operator norm <= 1 (1/K convention)."""
    terms = tuple(PauliString(1.0, ((q, "Z"),)) for q in range(n))
    return PauliSum(terms, 1.0 / n)


# JSON serialization.  The document is self-describing: lattice shape, seed,
# delta, observable terms, per-sample couplings and labels, and optionally
# guiding-state amplitudes as (re, im) pairs.  When amplitudes are omitted
# they are regenerated from the stored couplings via the dense solver.

FORMAT_TAG = "guidedvqa-dataset-v1"


def _observable_to_json(obs: PauliSum) -> dict:
    return {
        "normalization": obs.normalization,
        "terms": [
            {"coefficient": t.coefficient, "factors": {str(q): a for q, a in t.factors}}
            for t in obs.terms
        ],
    }


def _observable_from_json(doc: dict) -> PauliSum:
    terms = tuple(
        PauliString(t["coefficient"], tuple((int(q), a) for q, a in t["factors"].items()))
        for t in doc["terms"]
    )
    return PauliSum(terms, doc["normalization"])


def _sample_to_json(sample: Sample, include_amplitudes: bool) -> dict:
    doc = {
        "couplings": list(sample.x.values),
        "label": sample.label,
        "degenerate": sample.degenerate,
    }
    if include_amplitudes:
        doc["amplitudes"] = [
            [float(a.real), float(a.imag)] for a in sample.guiding.amplitudes
        ]
    return doc


def dataset_to_json(train: Dataset, test: Dataset, include_amplitudes: bool = True) -> dict:
    if train.lattice != test.lattice or train.seed != test.seed:
        raise ValueError("train and test splits come from different configurations")
    return {
        "format": FORMAT_TAG,
        "lattice": {"rows": train.lattice.rows, "cols": train.lattice.cols},
        "seed": train.seed,
        "delta": train.delta,
        "observable": _observable_to_json(train.observable),
        "include_amplitudes": bool(include_amplitudes),
        "train": [_sample_to_json(s, include_amplitudes) for s in train.samples],
        "test": [_sample_to_json(s, include_amplitudes) for s in test.samples],
    }


def _sample_from_json(
    doc: dict, lattice: Lattice2D, obs: PauliSum, delta: float
) -> Sample:
    x = CouplingVector(tuple(doc["couplings"]))
    if "amplitudes" in doc:
        amps = np.array([complex(re, im) for re, im in doc["amplitudes"]])
        guiding = StateVector(lattice.n, amps)
        degenerate = bool(doc["degenerate"])
    else:
        sol = ground_state(build_heisenberg(lattice, x), lattice.n)
        guiding = make_guiding_state(sol, delta)
        degenerate = sol.degenerate
    return Sample(x, guiding, float(doc["label"]), degenerate)


def dataset_from_json(doc: dict) -> tuple[Dataset, Dataset]:
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"unrecognized dataset format {doc.get('format')!r}")
    lattice = square_lattice(doc["lattice"]["rows"], doc["lattice"]["cols"])
    obs = _observable_from_json(doc["observable"])
    delta = float(doc["delta"])
    seed = int(doc["seed"])
    splits = []
    for key in ("train", "test"):
        samples = tuple(_sample_from_json(s, lattice, obs, delta) for s in doc[key])
        splits.append(Dataset(samples, obs, delta, seed, lattice))
    return splits[0], splits[1]


def save_dataset(path, train: Dataset, test: Dataset, include_amplitudes: bool = True) -> None:
    with open(path, "w") as fh:
        json.dump(dataset_to_json(train, test, include_amplitudes), fh)
        fh.write("\n")


def load_dataset(path) -> tuple[Dataset, Dataset]:
    with open(path) as fh:
        return dataset_from_json(json.load(fh))
