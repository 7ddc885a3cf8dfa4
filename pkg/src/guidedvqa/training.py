"""Model function, loss, exact gradients, and the gradient-descent loop.

Two gradient routes are provided and cross-checked:

* ``parameter_shift``: the reference path.  Each per-sample model value is a
  degree-1 trigonometric polynomial in every angle (Pauli-generated
  rotations), so df/dtheta_j = [f(theta + pi/2 e_j) - f(theta - pi/2 e_j)]/2
  exactly; the loss gradient follows by the chain rule
  dL/dtheta_j = (1/M) sum_i (f_i - y_i) df_i/dtheta_j.
* ``adjoint``: a reverse sweep over the gate list carrying two statevectors,
  equal to the shift rule to within 1e-10 at a small constant factor of the
  cost of one forward pass.

By default gradients are only computed over the observable's light cone and
zero-filled elsewhere; this is a pure optimization (outside-cone gradients
vanish identically) with an exactness test in the suite.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .ansatz import AlaCircuit, _apply_gates, init_params, observable_cone
from .core import (
    PauliSum,
    StateVector,
    _observable_apply,
    _pauli_apply_single,
    _rotate_inplace,
    _cz_inplace,
    operator_norm_dense,
)
from .heisenberg import Dataset

logger = logging.getLogger(__name__)

ETA_FLOOR = 1e-6
GRADIENT_METHODS = ("parameter_shift", "adjoint")


@dataclass
class TrainingConfig:
    """Hyperparameters for the gradient-descent loop.

    ``eta`` may be a number, "auto" (lambda_min(K0)/M^2 clamped to
    [1e-6, 1/lambda_max], the clamp keeping I - eta*K0 positive
    semidefinite), or "max" (eta_scale/lambda_max(K0)).  ``kappa`` may be a
    number or "auto" (delta*sqrt(gamma)/n).
    """

    eta: float | str = "auto"
    T: int = 100
    kappa: float | str = "auto"
    gamma: float = 0.05
    seed: int = 0
    gradient_method: str = "adjoint"
    eta_scale: float = 1.0
    kernel_stride: int | None = None
    param_stride: int | None = None

    def __post_init__(self):
        if self.gradient_method not in GRADIENT_METHODS:
            raise ValueError(f"unknown gradient method {self.gradient_method!r}")
        if isinstance(self.eta, str):
            if self.eta not in ("auto", "max"):
                raise ValueError(f"eta must be a number, 'auto' or 'max', got {self.eta!r}")
        elif self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if isinstance(self.kappa, str):
            if self.kappa != "auto":
                raise ValueError(f"kappa must be a number or 'auto', got {self.kappa!r}")
        elif not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa must be in (0, 1], got {self.kappa}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.T < 0:
            raise ValueError(f"iteration count T must be >= 0, got {self.T}")


@dataclass
class TrainingTrace:
    """Per-iteration records of a training run, including t=0."""

    losses: np.ndarray
    predictions: np.ndarray
    grad_norms: np.ndarray
    eta: float
    eta_mode: str
    kappa: float
    initial_params: np.ndarray
    final_params: np.ndarray
    param_snapshots: dict = field(default_factory=dict)
    kernel_snapshots: dict = field(default_factory=dict)
    wallclock_ms: np.ndarray | None = None
    aborted: bool = False
    abort_reason: str = ""
    retried: bool = False
    initial_loss_bound: float = float("nan")
    initial_loss_bound_ok: bool = True

    def __len__(self) -> int:
        return len(self.losses)


def model_value(
    circuit: AlaCircuit, params: np.ndarray, guiding: StateVector, obs: PauliSum
) -> float:
    """f(x) = <psi0| U(theta)^dag O U(theta) |psi0>."""
    return _model_value_raw(circuit, np.asarray(params, float), guiding.amplitudes, obs)


def _model_value_raw(
    circuit: AlaCircuit, params: np.ndarray, guiding_amps: np.ndarray, obs: PauliSum
) -> float:
    amps = guiding_amps.copy()
    _apply_gates(amps, circuit.n, circuit.gates, params)
    applied = _observable_apply(amps, circuit.n, obs)
    return float(np.real(np.sum(np.conj(amps) * applied)))


def predictions(circuit: AlaCircuit, params: np.ndarray, dataset: Dataset) -> np.ndarray:
    params = np.asarray(params, float)
    return np.array(
        [_model_value_raw(circuit, params, s.guiding.amplitudes, dataset.observable)
         for s in dataset.samples]
    )


def loss_from_predictions(preds: np.ndarray, labels: np.ndarray) -> float:
    r = preds - labels
    return float(np.sum(r * r) / (2.0 * len(labels)))


def loss(circuit: AlaCircuit, params: np.ndarray, dataset: Dataset) -> float:
    """(1/2M) sum_i (f(x_i) - y_i)^2."""
    if len(dataset) == 0:
        raise ValueError("loss of an empty dataset is undefined")
    return loss_from_predictions(predictions(circuit, params, dataset), dataset.labels)


def _active_indices(circuit: AlaCircuit, obs: PauliSum, use_light_cone: bool):
    if not use_light_cone:
        return range(circuit.num_params)
    return sorted(observable_cone(circuit, obs))


def _model_grad_shift(
    circuit, params, guiding_amps, obs, active
) -> np.ndarray:
    grad = np.zeros(circuit.num_params)
    shifted = params.copy()
    for j in active:
        base = shifted[j]
        shifted[j] = base + np.pi / 2
        plus = _model_value_raw(circuit, shifted, guiding_amps, obs)
        shifted[j] = base - np.pi / 2
        minus = _model_value_raw(circuit, shifted, guiding_amps, obs)
        shifted[j] = base
        grad[j] = 0.5 * (plus - minus)
    return grad


def _model_value_and_grad_adjoint(
    circuit, params, guiding_amps, obs
) -> tuple[float, np.ndarray]:
    """One forward pass plus a reverse sweep with two statevectors.

    With a = U|psi0> and b = O a, unapplying gates from both while walking
    the gate list backwards gives df/dtheta_k = Im <b_k| P_k |a_k>, where
    a_k is the state just after gate k and b_k carries O back through the
    gates above k.
    """
    n = circuit.n
    a = guiding_amps.copy()
    _apply_gates(a, n, circuit.gates, params)
    b = _observable_apply(a, n, obs)
    value = float(np.real(np.sum(np.conj(a) * b)))
    grad = np.zeros(circuit.num_params)
    for g in reversed(circuit.gates):
        if g.kind == "rot":
            pa = _pauli_apply_single(a, n, g.qubits[0], g.axis)
            grad[g.param] = float(np.imag(np.sum(np.conj(b) * pa)))
            angle = -float(params[g.param])
            _rotate_inplace(a, n, g.qubits[0], g.axis, angle)
            _rotate_inplace(b, n, g.qubits[0], g.axis, angle)
        else:
            _cz_inplace(a, n, g.qubits[0], g.qubits[1])
            _cz_inplace(b, n, g.qubits[0], g.qubits[1])
    return value, grad


def model_gradient(
    circuit: AlaCircuit,
    params: np.ndarray,
    guiding: StateVector,
    obs: PauliSum,
    method: str = "adjoint",
    use_light_cone: bool = True,
) -> np.ndarray:
    """Gradient of the model value with respect to every parameter."""
    params = np.asarray(params, float)
    if method == "parameter_shift":
        active = _active_indices(circuit, obs, use_light_cone)
        return _model_grad_shift(circuit, params, guiding.amplitudes, obs, active)
    if method != "adjoint":
        raise ValueError(f"unknown gradient method {method!r}")
    _, grad = _model_value_and_grad_adjoint(circuit, params, guiding.amplitudes, obs)
    if use_light_cone and circuit.num_params:
        mask = np.zeros(circuit.num_params, dtype=bool)
        mask[list(observable_cone(circuit, obs))] = True
        grad[~mask] = 0.0
    return grad


def values_and_gradient_matrix(
    circuit: AlaCircuit,
    params: np.ndarray,
    dataset: Dataset,
    method: str = "adjoint",
    use_light_cone: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample model values f (M,) and gradient matrix G (M, P)."""
    params = np.asarray(params, float)
    M = len(dataset)
    f = np.zeros(M)
    G = np.zeros((M, circuit.num_params))
    obs = dataset.observable
    if method == "parameter_shift":
        active = _active_indices(circuit, obs, use_light_cone)
        for i, s in enumerate(dataset.samples):
            f[i] = _model_value_raw(circuit, params, s.guiding.amplitudes, obs)
            G[i] = _model_grad_shift(circuit, params, s.guiding.amplitudes, obs, active)
        return f, G
    if method != "adjoint":
        raise ValueError(f"unknown gradient method {method!r}")
    for i, s in enumerate(dataset.samples):
        f[i], G[i] = _model_value_and_grad_adjoint(
            circuit, params, s.guiding.amplitudes, obs
        )
    if use_light_cone and circuit.num_params:
        mask = np.zeros(circuit.num_params, dtype=bool)
        mask[list(observable_cone(circuit, obs))] = True
        G[:, ~mask] = 0.0
    return f, G


def gradient_matrix(
    circuit, params, dataset, method: str = "adjoint", use_light_cone: bool = True
) -> np.ndarray:
    return values_and_gradient_matrix(circuit, params, dataset, method, use_light_cone)[1]


def _loss_grad_from(f: np.ndarray, G: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # fixed reduction order (einsum, no BLAS dispatch) so runs are reproducible
    return np.einsum("ip,i->p", G, f - labels) / len(labels)


def loss_gradient(
    circuit, params, dataset, method: str = "adjoint", use_light_cone: bool = True
) -> np.ndarray:
    f, G = values_and_gradient_matrix(circuit, params, dataset, method, use_light_cone)
    return _loss_grad_from(f, G, dataset.labels)


def gradient_parameter_shift(circuit, params, dataset) -> np.ndarray:
    """Loss gradient via the +-pi/2 shift rule (reference path)."""
    return loss_gradient(circuit, params, dataset, method="parameter_shift")


def gradient_adjoint(circuit, params, dataset) -> np.ndarray:
    """Loss gradient via the reverse statevector sweep (fast path)."""
    return loss_gradient(circuit, params, dataset, method="adjoint")


def resolve_kappa(config: TrainingConfig, circuit: AlaCircuit, delta: float) -> float:
    """delta*sqrt(gamma)/n, floored at 1e-12 so delta=0 stays a valid config."""
    if config.kappa == "auto":
        return max(delta * np.sqrt(config.gamma) / circuit.n, 1e-12)
    return float(config.kappa)


def resolve_eta(config: TrainingConfig, k0: np.ndarray) -> float:
    """Resolve the learning-rate rule from the kernel at initialization."""
    if not isinstance(config.eta, str):
        return float(config.eta)
    eigvals = np.linalg.eigvalsh((k0 + k0.T) / 2.0)
    lam_min = max(float(eigvals[0]), 0.0)
    lam_max = float(eigvals[-1])
    ceiling = 1.0 / lam_max if lam_max > 0 else 1.0
    if config.eta == "max":
        return min(config.eta_scale * ceiling, ceiling)
    M = k0.shape[0]
    return float(np.clip(lam_min / M**2, ETA_FLOOR, ceiling))


def _kernel_from(G: np.ndarray, M: int) -> np.ndarray:
    return np.einsum("ip,jp->ij", G, G) / M


def initial_loss_bound(
    circuit: AlaCircuit, theta0: np.ndarray, dataset: Dataset
) -> float:
    """(1/2)(2*delta*||O|| + sqrt(xi)*||theta0||)^2 with smoothness constant 1.

    The constant is <= 1 for Pauli-generated rotations acting on unit-norm
    pure states: the per-parameter derivative of the evolved state has
    Hilbert-Schmidt norm (1/2)||[P, rho]||_2 <= sqrt(2)/2.
    """
    norm_o = operator_norm_dense(dataset.observable, circuit.n)
    xi = circuit.num_params
    theta_norm = float(np.sqrt(np.sum(np.asarray(theta0) ** 2)))
    return 0.5 * (2.0 * dataset.delta * norm_o + np.sqrt(xi) * theta_norm) ** 2


def train(
    circuit: AlaCircuit,
    dataset: Dataset,
    config: TrainingConfig,
    initial_params: np.ndarray | None = None,
) -> TrainingTrace:
    """Gradient descent on the guided dataset.

    Records T+1 iterations (including t=0).  When ``eta`` resolves from the
    auto rule and more than 5% of steps increase the loss, the run is
    retried once with eta/2 from the same initialization (soft stability
    check; both attempts are logged).
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    delta = dataset.delta
    kappa = resolve_kappa(config, circuit, delta)
    if initial_params is not None:
        theta0 = np.asarray(initial_params, dtype=np.float64).copy()
        if theta0.shape != (circuit.num_params,):
            raise ValueError(
                f"initial params shape {theta0.shape} != ({circuit.num_params},)"
            )
    else:
        theta0 = init_params(circuit, kappa, config.seed)

    f0, G0 = values_and_gradient_matrix(
        circuit, theta0, dataset, config.gradient_method
    )
    eta = resolve_eta(config, _kernel_from(G0, len(dataset)))
    eta_mode = config.eta if isinstance(config.eta, str) else "explicit"

    trace = _run_descent(circuit, dataset, config, theta0, eta, eta_mode, kappa, (f0, G0))
    if eta_mode == "auto" and not trace.aborted and len(trace) > 1:
        increases = np.sum(np.diff(trace.losses) > 0.0)
        if increases / (len(trace) - 1) > 0.05:
            logger.warning(
                "loss increased on %d/%d steps with auto eta=%.3g; retrying with eta/2",
                increases, len(trace) - 1, eta,
            )
            trace = _run_descent(
                circuit, dataset, config, theta0, eta / 2.0, eta_mode, kappa, (f0, G0)
            )
            trace.retried = True
    return trace


def _run_descent(circuit, dataset, config, theta0, eta, eta_mode, kappa, first_pass):
    M = len(dataset)
    y = dataset.labels
    T = config.T
    losses = np.zeros(T + 1)
    preds = np.zeros((T + 1, M))
    grad_norms = np.zeros(T + 1)
    wallclock = np.zeros(T + 1)
    param_snapshots = {0: theta0.copy()}
    kernel_snapshots: dict[int, np.ndarray] = {}
    theta = theta0.copy()
    f, G = first_pass
    aborted = False
    reason = ""
    start = time.perf_counter()
    t_done = 0
    for t in range(T + 1):
        if t > 0:
            f, G = values_and_gradient_matrix(
                circuit, theta, dataset, config.gradient_method
            )
        losses[t] = loss_from_predictions(f, y)
        preds[t] = f
        grad = _loss_grad_from(f, G, y)
        grad_norms[t] = float(np.sqrt(np.sum(grad * grad)))
        wallclock[t] = (time.perf_counter() - start) * 1000.0
        if config.kernel_stride and t % config.kernel_stride == 0:
            kernel_snapshots[t] = _kernel_from(G, M)
        if config.param_stride and t % config.param_stride == 0:
            param_snapshots[t] = theta.copy()
        t_done = t
        if not np.isfinite(losses[t]):
            aborted = True
            reason = f"non-finite loss {losses[t]} at iteration {t}"
            break
        if t < T:
            theta = theta - eta * grad
    end = t_done + 1
    param_snapshots[t_done] = theta.copy()
    trace = TrainingTrace(
        losses=losses[:end],
        predictions=preds[:end],
        grad_norms=grad_norms[:end],
        eta=eta,
        eta_mode=eta_mode,
        kappa=kappa,
        initial_params=theta0,
        final_params=theta,
        param_snapshots=param_snapshots,
        kernel_snapshots=kernel_snapshots,
        wallclock_ms=wallclock[:end],
        aborted=aborted,
        abort_reason=reason,
    )
    trace.initial_loss_bound = initial_loss_bound(circuit, theta0, dataset)
    trace.initial_loss_bound_ok = bool(
        trace.losses[0] <= trace.initial_loss_bound + 1e-12
    )
    if not trace.initial_loss_bound_ok:
        logger.warning(
            "initial loss %.3g exceeds the smoothness bound %.3g",
            trace.losses[0], trace.initial_loss_bound,
        )
    return trace


def generalization_error(
    circuit: AlaCircuit,
    params: np.ndarray,
    train_set: Dataset,
    test_set: Dataset,
) -> float:
    """|mean_test |f - y| - mean_train |f - y||; test set proxies the population."""
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("generalization error needs non-empty train and test sets")
    err_train = np.abs(predictions(circuit, params, train_set) - train_set.labels)
    err_test = np.abs(predictions(circuit, params, test_set) - test_set.labels)
    return float(abs(np.mean(err_test) - np.mean(err_train)))
