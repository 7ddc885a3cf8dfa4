import numpy as np
import pytest

from guidedvqa.ansatz import (
    AlaCircuit,
    Gate,
    build_ala,
    circuit_from_json,
    circuit_to_json,
    cone_qubits,
    apply_circuit,
    init_params,
    light_cone,
    observable_cone,
    params_from_json,
    params_to_json,
    _apply_gates,
)
from guidedvqa.core import PauliString, PauliSum, StateVector, new_basis_state
from guidedvqa.training import model_gradient

from test_core import dense_cz, dense_rotation, random_state


def dense_circuit_unitary(circuit, params):
    """Independent oracle: compose dense gate matrices in declared order."""
    dim = 2**circuit.n
    u = np.eye(dim, dtype=complex)
    for g in circuit.gates:
        if g.kind == "rot":
            u = dense_rotation(circuit.n, g.qubits[0], g.axis, params[g.param]) @ u
        else:
            u = dense_cz(circuit.n, *g.qubits) @ u
    return u


class TestBuildAla:
    def test_counting_4_2_1_1(self):
        c = build_ala(4, 2, 1, 1)
        assert len(c.blocks) == 2
        assert c.num_params == 4
        assert sum(1 for g in c.gates if g.kind == "cz") == 2

    def test_even_layer_tiling_4_2_1_2(self):
        c = build_ala(4, 2, 1, 2)
        layer2 = [b for b in c.blocks if b.layer == 2]
        assert [(b.start, b.stop) for b in layer2] == [(0, 1), (1, 3), (3, 4)]
        assert [b.width for b in layer2] == [1, 2, 1]
        assert c.num_params == 8

    def test_paper_shape_20_4_2_2(self):
        c = build_ala(20, 4, 2, 2)
        layer1 = [b for b in c.blocks if b.layer == 1]
        layer2 = [b for b in c.blocks if b.layer == 2]
        assert [b.width for b in layer1] == [4] * 5
        assert [b.width for b in layer2] == [2, 4, 4, 4, 4, 2]
        assert c.p == 8  # parameters per full-width block
        assert c.num_params == 5 * 8 + (2 + 4 + 4 + 4 + 4 + 2) * 2

    def test_half_width_blocks_have_proportional_params(self):
        c = build_ala(8, 4, 3, 2)
        for b in c.blocks:
            assert b.param_stop - b.param_start == 3 * b.width

    def test_axes_alternate_by_sublayer(self):
        c = build_ala(4, 4, 3, 1)
        rots = [g for g in c.gates if g.kind == "rot"]
        # sublayer 0 -> Y on 4 qubits, sublayer 1 -> Z, sublayer 2 -> Y
        assert [g.axis for g in rots] == ["Y"] * 4 + ["Z"] * 4 + ["Y"] * 4

    def test_every_param_in_exactly_one_rotation(self):
        c = build_ala(8, 2, 2, 3)
        slots = [g.param for g in c.gates if g.kind == "rot"]
        assert sorted(slots) == list(range(c.num_params))

    @pytest.mark.parametrize("n,m", [(4, 3), (6, 4), (4, 0)])
    def test_invalid_block_width(self, n, m):
        with pytest.raises(ValueError):
            build_ala(n, m, 1, 1)

    def test_invalid_r_and_l(self):
        with pytest.raises(ValueError):
            build_ala(4, 2, 0, 1)
        with pytest.raises(ValueError):
            build_ala(4, 2, 1, 0)


class TestInitParams:
    def test_deterministic_per_seed(self):
        c = build_ala(4, 2, 2, 1)
        a = init_params(c, 0.3, seed=42)
        b = init_params(c, 0.3, seed=42)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, init_params(c, 0.3, seed=43))

    def test_variance_matches_kappa(self):
        c = AlaCircuit(1, 2, 1, 1, (), tuple(
            Gate("rot", (0,), "Y", i) for i in range(10000)
        ), 10000)
        draws = init_params(c, 0.25, seed=7)
        assert np.var(draws) == pytest.approx(0.25**2, rel=0.05)

    def test_small_kappa_near_identity(self):
        c = build_ala(4, 2, 2, 2)
        params = init_params(c, 1e-6, seed=1)
        state = random_state(4, np.random.default_rng(0))
        out = apply_circuit(c, params, state)
        assert np.abs(np.vdot(state.amplitudes, out.amplitudes)) > 1 - 1e-9

    def test_kappa_range(self):
        c = build_ala(4, 2, 1, 1)
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                init_params(c, bad, seed=0)


class TestApplyCircuit:
    def test_zero_params_is_identity_for_even_r(self):
        c = build_ala(4, 2, 2, 2)
        state = random_state(4, np.random.default_rng(9))
        out = apply_circuit(c, np.zeros(c.num_params), state)
        np.testing.assert_allclose(out.amplitudes, state.amplitudes, atol=1e-15)

    def test_single_block_matches_dense_unitary(self):
        c = build_ala(2, 2, 2, 1)
        rng = np.random.default_rng(23)
        params = rng.uniform(-np.pi, np.pi, c.num_params)
        u = dense_circuit_unitary(c, params)
        state = random_state(2, rng)
        out = apply_circuit(c, params, state)
        np.testing.assert_allclose(out.amplitudes, u @ state.amplitudes, atol=1e-13)

    def test_multilayer_matches_dense_unitary(self):
        c = build_ala(4, 2, 1, 3)
        rng = np.random.default_rng(29)
        params = rng.uniform(-np.pi, np.pi, c.num_params)
        u = dense_circuit_unitary(c, params)
        state = random_state(4, rng)
        out = apply_circuit(c, params, state)
        np.testing.assert_allclose(out.amplitudes, u @ state.amplitudes, atol=1e-13)

    def test_unitarity_preserves_inner_products(self):
        c = build_ala(4, 4, 2, 2)
        rng = np.random.default_rng(33)
        params = rng.uniform(-np.pi, np.pi, c.num_params)
        for _ in range(5):
            a, b = random_state(4, rng), random_state(4, rng)
            ua = apply_circuit(c, params, a)
            ub = apply_circuit(c, params, b)
            before = np.vdot(a.amplitudes, b.amplitudes)
            after = np.vdot(ua.amplitudes, ub.amplitudes)
            assert abs(before - after) < 1e-10

    def test_gate_sequence_composes(self):
        # applying a prefix then the suffix equals applying the whole list
        c = build_ala(4, 2, 2, 2)
        rng = np.random.default_rng(41)
        params = rng.uniform(-np.pi, np.pi, c.num_params)
        state = random_state(4, rng)
        whole = state.amplitudes.copy()
        _apply_gates(whole, 4, c.gates, params)
        for cut in (1, len(c.gates) // 2, len(c.gates) - 1):
            split = state.amplitudes.copy()
            _apply_gates(split, 4, c.gates[:cut], params)
            _apply_gates(split, 4, c.gates[cut:], params)
            np.testing.assert_allclose(split, whole, atol=1e-14)

    def test_param_count_mismatch(self):
        c = build_ala(4, 2, 1, 1)
        with pytest.raises(ValueError):
            apply_circuit(c, np.zeros(c.num_params + 1), new_basis_state(4, 0))


class TestLightCone:
    def test_single_layer_term_stays_in_block(self):
        c = build_ala(6, 2, 2, 1)
        term = PauliString(1.0, ((2, "Z"),))
        cone = light_cone(c, term)
        block = next(b for b in c.blocks if b.start <= 2 < b.stop)
        assert cone <= set(range(block.param_start, block.param_stop))
        other_params = set(range(c.num_params)) - set(
            range(block.param_start, block.param_stop)
        )
        assert not cone & other_params

    def test_cone_grows_at_most_2m_per_layer(self):
        for L in (1, 2, 3):
            c = build_ala(8, 2, 2, L)
            term = PauliString(1.0, ((0, "Z"),))
            qubits = cone_qubits(c, term)
            assert len(qubits) <= 1 + 2 * 2 * L  # k + 2mL

    def test_full_depth_cone_is_all_params_upper_bound(self):
        c = build_ala(4, 4, 2, 3)
        term = PauliString(1.0, ((1, "Z"), (2, "X")))
        assert light_cone(c, term) <= set(range(c.num_params))

    def test_term_qubit_out_of_range(self):
        c = build_ala(4, 2, 1, 1)
        with pytest.raises(ValueError):
            light_cone(c, PauliString(1.0, ((4, "Z"),)))

    def test_outside_cone_gradients_vanish(self):
        # 200 seeded (circuit, term, params) triples at n <= 8; gradients of
        # the single-term expectation computed without cone masking
        rng = np.random.default_rng(1234)
        checked = 0
        for _ in range(200):
            n = int(rng.choice([4, 6, 8]))
            m = int(rng.choice([2, 4] if n % 4 == 0 else [2]))
            L = int(rng.integers(1, 3))
            r = int(rng.integers(1, 3))
            c = build_ala(n, m, r, L)
            k = int(rng.integers(1, 3))
            qubits = rng.choice(n, size=k, replace=False)
            term = PauliString(
                1.0, tuple((int(q), "XYZ"[int(rng.integers(0, 3))]) for q in qubits)
            )
            cone = light_cone(c, term)
            outside = sorted(set(range(c.num_params)) - cone)
            if not outside:
                continue
            params = rng.uniform(-np.pi, np.pi, c.num_params)
            state = random_state(n, rng)
            grad = model_gradient(
                c, params, state, PauliSum((term,), 1.0),
                method="parameter_shift", use_light_cone=False,
            )
            assert max(abs(grad[j]) for j in outside) < 1e-12
            checked += 1
        assert checked >= 100

    def test_observable_cone_is_union(self):
        c = build_ala(8, 2, 1, 2)
        t0 = PauliString(1.0, ((0, "Z"),))
        t7 = PauliString(1.0, ((7, "Z"),))
        obs = PauliSum((t0, t7), 1.0)
        assert observable_cone(c, obs) == light_cone(c, t0) | light_cone(c, t7)

    def test_cone_memoized(self):
        c = build_ala(6, 2, 2, 2)
        t = PauliString(1.0, ((1, "X"),))
        assert light_cone(c, t) is light_cone(c, t)


class TestSerialization:
    def test_circuit_round_trip(self):
        c = build_ala(6, 2, 2, 2)
        assert circuit_from_json(circuit_to_json(c)) == c

    def test_params_round_trip(self):
        c = build_ala(4, 2, 1, 2)
        params = init_params(c, 0.5, seed=3)
        out = params_from_json(c, params_to_json(c, params))
        np.testing.assert_array_equal(out, params)

    def test_params_layout_mismatch_rejected(self):
        c1 = build_ala(4, 2, 1, 2)
        c2 = build_ala(4, 2, 2, 2)
        doc = params_to_json(c1, init_params(c1, 0.5, seed=3))
        with pytest.raises(ValueError):
            params_from_json(c2, doc)
