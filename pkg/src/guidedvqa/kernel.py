"""Tangent-kernel analysis: spectrum, linearized dynamics, and diagnostics.

The tangent kernel of the model over a dataset of size M is the M x M Gram
matrix K[i][j] = (1/M) grad f(x_i) . grad f(x_j); the 1/M prefactor is part
of the convention here and every learning-rate rule and bound in the
package uses the same convention.

Gradient descent on the squared loss linearized around initialization obeys
the discrete recurrence f(t+1) - f(t) = -eta K0 (f(t) - y), whose residual
decays componentwise by factors (1 - eta lambda_j) along the kernel's
eigendirections.  The diagnostics in this module measure how closely a real
training run tracks that picture.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ansatz import AlaCircuit, build_ala
from .heisenberg import Dataset, make_dataset, square_lattice, z_sum_observable
from .training import TrainingConfig, TrainingTrace, train, values_and_gradient_matrix

SYMMETRY_TOL = 1e-10
PSD_TOL = -1e-9


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric PSD tangent-kernel Gram matrix with its size convention."""

    entries: np.ndarray
    m: int
    includes_1_over_m: bool = True

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.shape != (self.m, self.m):
            raise ValueError(f"kernel shape {entries.shape} != ({self.m}, {self.m})")
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues and orthonormal eigenvectors of a kernel."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


def kernel_from_gradients(G: np.ndarray, m: int) -> KernelMatrix:
    entries = np.einsum("ip,jp->ij", G, G) / m
    return KernelMatrix(entries, m)


def tangent_kernel(
    circuit: AlaCircuit,
    params: np.ndarray,
    dataset: Dataset,
    method: str = "adjoint",
) -> KernelMatrix:
    """K[i][j] = (1/M) grad f(x_i) . grad f(x_j) at the given parameters."""
    _, G = values_and_gradient_matrix(circuit, params, dataset, method)
    return kernel_from_gradients(G, len(dataset))


def kernel_spectrum(k: KernelMatrix) -> Spectrum:
    """Full symmetric eigendecomposition; tiny negative values clamp to 0."""
    entries = k.entries
    asym = float(np.max(np.abs(entries - entries.T))) if k.m else 0.0
    if asym > SYMMETRY_TOL:
        raise ValueError(f"kernel asymmetry {asym} exceeds {SYMMETRY_TOL}")
    vals, vecs = np.linalg.eigh(entries)
    vals = vals.copy()
    vals[(vals >= PSD_TOL) & (vals < 0.0)] = 0.0
    return Spectrum(vals, vecs)


@dataclass(frozen=True)
class LinearizedRun:
    """Iterates of f(t+1) = f(t) - eta K0 (f(t) - y), with losses."""

    predictions: np.ndarray  # (T+1, M)
    losses: np.ndarray  # (T+1,)
    eta: float
    psd_warning: bool  # eta > 1/lambda_max: divergence possible


def linearized_trajectory(
    k0: KernelMatrix, f0: np.ndarray, y: np.ndarray, eta: float, T: int
) -> LinearizedRun:
    """Iterate the discrete linearized recurrence for T steps."""
    f0 = np.asarray(f0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if f0.shape != (k0.m,) or y.shape != (k0.m,):
        raise ValueError(f"predictions/labels must have shape ({k0.m},)")
    lam_max = float(np.max(np.linalg.eigvalsh(k0.entries))) if k0.m else 0.0
    psd_warning = lam_max > 0 and eta > 1.0 / lam_max
    M = k0.m
    preds = np.zeros((T + 1, M))
    losses = np.zeros(T + 1)
    f = f0.copy()
    for t in range(T + 1):
        preds[t] = f
        r = f - y
        losses[t] = float(np.sum(r * r) / (2.0 * M))
        if t < T:
            f = f - eta * np.einsum("ij,j->i", k0.entries, r)
    return LinearizedRun(preds, losses, float(eta), psd_warning)


@dataclass(frozen=True)
class BoundCheck:
    """Per-iteration check of L(t) <= sum_j (1 - eta lambda_j)^(2t) L(0)."""

    holds: bool
    ok_per_t: np.ndarray
    bounds: np.ndarray
    first_violation: int | None


def convergence_bound_check(
    spectrum: Spectrum,
    eta: float,
    initial_loss: float,
    lin_losses: np.ndarray,
    rtol: float = 1e-9,
    atol: float = 1e-15,
) -> BoundCheck:
    """Evaluate the spectral decay bound at every recorded iteration.

    The scalar case attains the bound with equality, so the comparison
    carries a small relative tolerance for float rounding.
    """
    lin_losses = np.asarray(lin_losses, dtype=np.float64)
    factors = 1.0 - eta * spectrum.eigenvalues
    ts = np.arange(len(lin_losses))
    bounds = np.array(
        [float(np.sum(factors ** (2 * t)) * initial_loss) for t in ts]
    )
    ok = lin_losses <= bounds * (1.0 + rtol) + atol
    first = None if bool(np.all(ok)) else int(np.argmin(ok))
    return BoundCheck(bool(np.all(ok)), ok, bounds, first)


@dataclass(frozen=True)
class ConcentrationPoint:
    n: int
    trials: int
    variance: float
    entries: np.ndarray


def concentration_stats(
    ns,
    trials: int,
    seed: int,
    *,
    rows: int = 2,
    block_m: int = 2,
    r: int = 2,
    L: int = 1,
    delta: float | str = "auto",
    gradient_method: str = "adjoint",
    draw=None,
    cap: int = 14,
) -> list[ConcentrationPoint]:
    """Variance of the kernel entry K(x, x') over random initializations.

    For each n a fixed sample pair is generated from the seeded dataset
    pipeline, then ``trials`` parameter vectors are drawn (by default i.i.d.
    uniform on [-pi, pi) from substream (seed, n, trial); pass ``draw`` as a
    callable (n, circuit, trial) -> params to override) and the off-diagonal
    kernel entry is evaluated at each.  Population variance, so a single
    trial reports 0.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    points = []
    for n in ns:
        if n % rows != 0:
            raise ValueError(f"n={n} not divisible by rows={rows}")
        lattice = square_lattice(rows, n // rows)
        obs = z_sum_observable(n)
        delta_n = 1.0 / n**2 if delta == "auto" else float(delta)
        pair = make_dataset(lattice, obs, 2, delta_n, seed, cap=cap)
        circuit = build_ala(n, block_m, r, L)
        entries = np.zeros(trials)
        for trial in range(trials):
            if draw is not None:
                params = np.asarray(draw(n, circuit, trial), dtype=np.float64)
            else:
                rng = np.random.Generator(
                    np.random.PCG64(np.random.SeedSequence((seed, n, trial)))
                )
                params = rng.uniform(-np.pi, np.pi, size=circuit.num_params)
            _, G = values_and_gradient_matrix(circuit, params, pair, gradient_method)
            entries[trial] = float(np.sum(G[0] * G[1]) / 2.0)
        points.append(ConcentrationPoint(n, trials, float(np.var(entries)), entries))
    return points


@dataclass(frozen=True)
class DriftStep:
    t: int
    minimum: float
    q25: float
    median: float
    q75: float
    maximum: float


@dataclass(frozen=True)
class DriftReport:
    """Entrywise |K(t+stride) - K(t)| statistics along a training run."""

    steps: tuple[DriftStep, ...]
    pooled: np.ndarray
    stride: int
    trace: TrainingTrace

    @property
    def pooled_median(self) -> float:
        return float(np.median(self.pooled))


def lazy_drift(
    circuit: AlaCircuit, dataset: Dataset, config: TrainingConfig, T: int
) -> DriftReport:
    """Train for T iterations and report per-step kernel entry drift.

    Uses the upper triangle (with diagonal) of each snapshot difference so
    symmetric duplicates are not double counted.
    """
    stride = config.kernel_stride or 1
    if stride < 1:
        raise ValueError(f"kernel stride must be >= 1, got {stride}")
    run_config = replace(config, kernel_stride=stride, T=T)
    trace = train(circuit, dataset, run_config)
    ts = sorted(trace.kernel_snapshots)
    iu = np.triu_indices(len(dataset))
    steps = []
    pooled = []
    for t0, t1 in zip(ts, ts[1:]):
        delta = np.abs(trace.kernel_snapshots[t1] - trace.kernel_snapshots[t0])[iu]
        q = np.percentile(delta, [25.0, 50.0, 75.0])
        steps.append(
            DriftStep(
                t0,
                float(np.min(delta)),
                float(q[0]),
                float(q[1]),
                float(q[2]),
                float(np.max(delta)),
            )
        )
        pooled.append(delta)
    pooled_arr = np.concatenate(pooled) if pooled else np.zeros(0)
    return DriftReport(tuple(steps), pooled_arr, stride, trace)


@dataclass(frozen=True)
class GapReport:
    """|true loss - linearized loss| per iteration plus a fitted envelope.

    The envelope is C * (n/K^3) * eta^2 t^2 L(0)^(3/2) with C fitted from
    the t=1 gap (the asymptotic form hides its constant); shape checks, not
    the constant, are the meaningful assertion.
    """

    ts: np.ndarray
    true_losses: np.ndarray
    lin_losses: np.ndarray
    gaps: np.ndarray
    envelope: np.ndarray
    c_fitted: float
    eta: float
    delta: float
    n: int
    k_terms: int


def loss_gap(
    true_trace: TrainingTrace,
    lin_losses: np.ndarray,
    spectrum: Spectrum,
    eta: float,
    delta: float,
    n: int,
    k_terms: int,
) -> GapReport:
    """Gap series between a real run and its linearized counterpart."""
    lin_losses = np.asarray(lin_losses, dtype=np.float64)
    if len(true_trace.losses) != len(lin_losses):
        raise ValueError(
            f"trace length {len(true_trace.losses)} != linearized {len(lin_losses)}"
        )
    ts = np.arange(len(lin_losses))
    gaps = np.abs(true_trace.losses - lin_losses)
    l0 = float(true_trace.losses[0])
    base = (n / k_terms**3) * eta**2 * ts.astype(float) ** 2 * l0**1.5
    if len(ts) > 1 and base[1] > 0 and gaps[1] > 0:
        c = float(gaps[1] / base[1])
    else:
        c = 0.0
    return GapReport(
        ts, true_trace.losses.copy(), lin_losses, gaps, c * base, c,
        float(eta), float(delta), int(n), int(k_terms),
    )


@dataclass(frozen=True)
class BoundReport:
    """T* = ceil(log_{1-eta*lambda_min}(1/M)) and the trace-exponential window.

    B1/B2 are reported as the min/max of Tr[exp(-eta t K0)] over integer t
    in [T*/2, 2T*]; the trace exponential is monotone decreasing in t, so
    only the window endpoints are evaluated.
    """

    t_star: int | None
    trace_exp: float | None
    b1: float | None
    b2: float | None
    lambda_min: float
    lambda_max: float
    eta: float
    m: int
    flag: str = ""


def trace_exponential(spectrum: Spectrum, eta: float, t: float) -> float:
    """Tr[exp(-eta t K0)] = sum_j exp(-eta t lambda_j)."""
    return float(np.sum(np.exp(-eta * t * spectrum.eigenvalues)))


def bound_diagnostics(spectrum: Spectrum, eta: float, m: int) -> BoundReport:
    lam_min, lam_max = spectrum.lambda_min, spectrum.lambda_max
    base = 1.0 - eta * lam_min
    if lam_min <= 0.0:
        return BoundReport(
            None, None, None, None, lam_min, lam_max, float(eta), m,
            flag="lambda_min <= 0: iteration rule undefined",
        )
    if not 0.0 < base < 1.0:
        return BoundReport(
            None, None, None, None, lam_min, lam_max, float(eta), m,
            flag=f"1 - eta*lambda_min = {base} outside (0, 1)",
        )
    t_star = int(np.ceil(np.log(1.0 / m) / np.log(base)))
    t_lo = max(1, int(np.ceil(t_star / 2)))
    t_hi = 2 * t_star
    b1 = trace_exponential(spectrum, eta, t_hi)
    b2 = trace_exponential(spectrum, eta, t_lo)
    return BoundReport(
        t_star, trace_exponential(spectrum, eta, t_star),
        b1, b2, lam_min, lam_max, float(eta), m,
    )
