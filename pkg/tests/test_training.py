import numpy as np
import pytest

import guidedvqa.training as training
from guidedvqa.ansatz import AlaCircuit, Gate, build_ala, init_params
from guidedvqa.core import (
    PauliString,
    PauliSum,
    StateVector,
    new_basis_state,
    observable_expectation,
    operator_norm_dense,
)
from guidedvqa.heisenberg import (
    CouplingVector,
    Dataset,
    Lattice2D,
    Sample,
    make_dataset,
    square_lattice,
    z_sum_observable,
)
from guidedvqa.training import (
    TrainingConfig,
    generalization_error,
    gradient_adjoint,
    gradient_parameter_shift,
    initial_loss_bound,
    loss,
    loss_gradient,
    model_gradient,
    model_value,
    predictions,
    train,
)

from test_core import random_state


def single_ry_circuit():
    """One R_y rotation on one qubit: f(theta) = cos(theta) for O = Z."""
    return AlaCircuit(1, 2, 1, 1, (), (Gate("rot", (0,), "Y", 0),), 1)


def z_observable():
    return PauliSum((PauliString(1.0, ((0, "Z"),)),), 1.0)


def synthetic_dataset(samples, obs, delta=0.0):
    lattice = Lattice2D(1, 1, ())
    wrapped = tuple(
        Sample(CouplingVector(()), guiding, label, False) for guiding, label in samples
    )
    return Dataset(wrapped, obs, delta, 0, lattice)


def cos_dataset(label=1.0):
    return synthetic_dataset([(new_basis_state(1, 0), label)], z_observable())


class TestModelValue:
    def test_ry_gives_cosine(self):
        c = single_ry_circuit()
        for theta in np.linspace(-np.pi, np.pi, 7):
            f = model_value(c, np.array([theta]), new_basis_state(1, 0), z_observable())
            assert f == pytest.approx(np.cos(theta), abs=1e-12)

    def test_zero_params_returns_input_expectation(self):
        lat = square_lattice(2, 2)
        obs = z_sum_observable(4)
        ds = make_dataset(lat, obs, 3, 1 / 16, seed=2)
        c = build_ala(4, 2, 2, 2)  # even r: exact identity at zero angles
        norm_o = operator_norm_dense(obs, 4)
        for s in ds.samples:
            f = model_value(c, np.zeros(c.num_params), s.guiding, obs)
            assert f == pytest.approx(observable_expectation(s.guiding, obs), abs=1e-12)
            assert abs(f - s.label) <= 2 * ds.delta * norm_o

    def test_matches_dense_evolution_oracle(self):
        from test_ansatz import dense_circuit_unitary

        c = build_ala(4, 2, 2, 1)
        rng = np.random.default_rng(6)
        params = rng.uniform(-np.pi, np.pi, c.num_params)
        state = random_state(4, rng)
        obs = z_sum_observable(4)
        u = dense_circuit_unitary(c, params)
        evolved = u @ state.amplitudes
        from test_core import dense_pauli_sum

        expected = np.vdot(evolved, dense_pauli_sum(4, obs) @ evolved).real
        assert model_value(c, params, state, obs) == pytest.approx(expected, abs=1e-12)


class TestLoss:
    def test_perfect_predictions(self):
        ds = cos_dataset(label=1.0)
        assert loss(single_ry_circuit(), np.array([0.0]), ds) == pytest.approx(0.0)

    def test_single_sample_arithmetic(self):
        # f - y = cos(0) - 0.8 = 0.2 -> loss 0.02
        ds = cos_dataset(label=0.8)
        assert loss(single_ry_circuit(), np.array([0.0]), ds) == pytest.approx(0.02)

    def test_initial_loss_bounded_by_guiding_error(self):
        lat = square_lattice(2, 2)
        obs = z_sum_observable(4)
        delta = 1 / 16
        ds = make_dataset(lat, obs, 5, delta, seed=8)
        c = build_ala(4, 2, 2, 2)
        norm_o = operator_norm_dense(obs, 4)
        assert loss(c, np.zeros(c.num_params), ds) <= 0.5 * (2 * delta * norm_o) ** 2

    def test_empty_dataset_rejected(self):
        ds = cos_dataset()
        empty = Dataset((), ds.observable, 0.0, 0, ds.lattice)
        with pytest.raises(ValueError):
            loss(single_ry_circuit(), np.array([0.0]), empty)


class TestGradients:
    def test_analytic_model_gradient(self):
        c = single_ry_circuit()
        grad = model_gradient(
            c, np.array([np.pi / 2]), new_basis_state(1, 0), z_observable(),
            method="parameter_shift",
        )
        assert grad[0] == pytest.approx(-1.0, abs=1e-12)

    def test_adjoint_single_parameter_analytic(self):
        c = single_ry_circuit()
        for theta in (0.0, 0.4, -1.3):
            grad = model_gradient(
                c, np.array([theta]), new_basis_state(1, 0), z_observable(),
                method="adjoint",
            )
            assert grad[0] == pytest.approx(-np.sin(theta), abs=1e-12)

    def test_zero_parameter_circuit(self):
        c = AlaCircuit(2, 2, 1, 1, (), (Gate("cz", (0, 1)),), 0)
        ds = synthetic_dataset([(new_basis_state(2, 0), 1.0)],
                               PauliSum((PauliString(1.0, ((0, "Z"),)),), 1.0))
        assert gradient_parameter_shift(c, np.zeros(0), ds).shape == (0,)
        assert gradient_adjoint(c, np.zeros(0), ds).shape == (0,)

    def test_shift_matches_finite_differences(self):
        lat = square_lattice(2, 2)
        obs = z_sum_observable(4)
        ds = make_dataset(lat, obs, 3, 1 / 16, seed=19)
        c = build_ala(4, 2, 2, 2)
        rng = np.random.default_rng(7)
        params = rng.uniform(-np.pi, np.pi, c.num_params)
        gs = gradient_parameter_shift(c, params, ds)
        h = 1e-5
        fd = np.zeros_like(params)
        for j in range(len(params)):
            up, down = params.copy(), params.copy()
            up[j] += h
            down[j] -= h
            fd[j] = (loss(c, up, ds) - loss(c, down, ds)) / (2 * h)
        assert np.linalg.norm(gs - fd) <= 1e-6 * np.linalg.norm(fd)

    def test_adjoint_matches_shift(self):
        rng = np.random.default_rng(50)
        for _ in range(20):
            n = int(rng.choice([2, 4, 6]))
            lat = square_lattice(1, n) if n == 2 else square_lattice(2, n // 2)
            obs = z_sum_observable(n)
            ds = make_dataset(lat, obs, 2, 1 / n**2, seed=int(rng.integers(1000)))
            c = build_ala(n, 2, int(rng.integers(1, 3)), int(rng.integers(1, 3)))
            params = rng.uniform(-np.pi, np.pi, c.num_params)
            gs = gradient_parameter_shift(c, params, ds)
            ga = gradient_adjoint(c, params, ds)
            assert np.max(np.abs(gs - ga)) <= 1e-10

    def test_light_cone_masking_is_exact(self):
        lat = square_lattice(2, 3)
        obs = z_sum_observable(6)
        ds = make_dataset(lat, obs, 2, 1 / 36, seed=3)
        c = build_ala(6, 2, 2, 1)
        rng = np.random.default_rng(4)
        params = rng.uniform(-np.pi, np.pi, c.num_params)
        masked = loss_gradient(c, params, ds, method="adjoint", use_light_cone=True)
        unmasked = loss_gradient(c, params, ds, method="adjoint", use_light_cone=False)
        assert np.max(np.abs(masked - unmasked)) < 1e-12


class TestTrain:
    def test_t_zero_single_record(self):
        ds = cos_dataset(label=0.5)
        trace = train(single_ry_circuit(), ds, TrainingConfig(eta=0.1, T=0, kappa=0.2))
        assert len(trace.losses) == 1
        assert trace.losses[0] == pytest.approx(
            loss(single_ry_circuit(), trace.initial_params, ds)
        )

    def test_descent_property_small_step(self):
        # delta=0, theta ~ 0, small eta: loss non-increasing over 50 iterations
        lat = square_lattice(2, 2)
        obs = z_sum_observable(4)
        ds = make_dataset(lat, obs, 4, 0.0, seed=12)
        c = build_ala(4, 2, 2, 2)
        trace = train(c, ds, TrainingConfig(eta=0.05, T=50, kappa=0.01, seed=5))
        assert not trace.aborted
        assert np.all(np.diff(trace.losses) <= 1e-15)

    def test_record_count(self):
        ds = cos_dataset(label=0.5)
        trace = train(single_ry_circuit(), ds, TrainingConfig(eta=0.1, T=7, kappa=0.2))
        assert len(trace.losses) == 8
        assert trace.predictions.shape == (8, 1)

    def test_explicit_initial_params(self):
        ds = cos_dataset(label=0.0)
        theta0 = np.array([1.0])
        trace = train(
            single_ry_circuit(), ds, TrainingConfig(eta=0.5, T=20, kappa=0.2),
            initial_params=theta0,
        )
        assert trace.initial_params[0] == 1.0
        # gradient descent drives f=cos(theta) toward y=0, i.e. theta -> pi/2
        assert trace.losses[-1] < trace.losses[0]

    def test_auto_eta_monotone_runs(self):
        # soft stability check: >= 95% non-increasing steps on 10 seeded
        # auto-rule runs at n=8
        lat = square_lattice(2, 4)
        obs = z_sum_observable(8)
        ds = make_dataset(lat, obs, 6, 1 / 64, seed=21)
        c = build_ala(8, 4, 2, 2)
        for seed in range(10):
            trace = train(c, ds, TrainingConfig(eta="auto", T=30, seed=seed))
            increases = np.sum(np.diff(trace.losses) > 0)
            assert increases / 30 <= 0.05

    def test_auto_eta_retry_on_instability(self, monkeypatch):
        # force an absurd auto eta; the soft check should halve it once
        monkeypatch.setattr(training, "resolve_eta", lambda config, k0: 40.0)
        ds = cos_dataset(label=0.0)
        trace = train(
            single_ry_circuit(), ds, TrainingConfig(eta="auto", T=40, kappa=0.2),
            initial_params=np.array([1.2]),
        )
        assert trace.retried
        assert trace.eta == pytest.approx(20.0)

    def test_abort_on_non_finite(self):
        ds = cos_dataset(label=0.0)
        with np.errstate(invalid="ignore"):
            trace = train(
                single_ry_circuit(), ds,
                TrainingConfig(eta=float("inf"), T=10, kappa=0.2),
                initial_params=np.array([1.0]),
            )
        assert trace.aborted
        assert "non-finite" in trace.abort_reason
        assert len(trace.losses) < 11

    def test_kernel_snapshots_at_stride(self):
        ds = cos_dataset(label=0.5)
        trace = train(
            single_ry_circuit(), ds,
            TrainingConfig(eta=0.1, T=6, kappa=0.2, kernel_stride=2),
        )
        assert sorted(trace.kernel_snapshots) == [0, 2, 4, 6]
        assert trace.kernel_snapshots[0].shape == (1, 1)

    def test_initial_loss_bound_recorded(self):
        lat = square_lattice(2, 2)
        obs = z_sum_observable(4)
        ds = make_dataset(lat, obs, 4, 1 / 16, seed=30)
        c = build_ala(4, 2, 2, 2)
        trace = train(c, ds, TrainingConfig(eta=0.1, T=1, seed=2))
        assert np.isfinite(trace.initial_loss_bound)
        assert trace.initial_loss_bound_ok
        theta0 = trace.initial_params
        expected = initial_loss_bound(c, theta0, ds)
        assert trace.initial_loss_bound == pytest.approx(expected)


class TestGeneralizationError:
    def test_train_equals_test_gives_zero(self):
        lat = square_lattice(2, 2)
        obs = z_sum_observable(4)
        ds = make_dataset(lat, obs, 3, 1 / 16, seed=44)
        c = build_ala(4, 2, 2, 2)
        params = init_params(c, 0.1, seed=1)
        assert generalization_error(c, params, ds, ds) == 0.0

    def test_perfect_model_gives_zero(self):
        lat = square_lattice(2, 2)
        obs = z_sum_observable(4)
        train_ds = make_dataset(lat, obs, 3, 0.0, seed=45)
        test_ds = make_dataset(lat, obs, 2, 0.0, seed=45, index_offset=3)
        c = build_ala(4, 2, 2, 2)
        params = np.zeros(c.num_params)  # identity circuit, delta=0: f == y
        assert generalization_error(c, params, train_ds, test_ds) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_empty_rejected(self):
        ds = cos_dataset()
        empty = Dataset((), ds.observable, 0.0, 0, ds.lattice)
        with pytest.raises(ValueError):
            generalization_error(single_ry_circuit(), np.zeros(1), ds, empty)


class TestPredictions:
    def test_matches_model_value(self):
        lat = square_lattice(2, 2)
        obs = z_sum_observable(4)
        ds = make_dataset(lat, obs, 3, 1 / 16, seed=50)
        c = build_ala(4, 2, 1, 1)
        params = init_params(c, 0.3, seed=9)
        preds = predictions(c, params, ds)
        for i, s in enumerate(ds.samples):
            assert preds[i] == model_value(c, params, s.guiding, obs)
