"""Guided-state variational quantum training with tangent-kernel diagnostics.

Exact statevector simulation of alternating layered ansatz circuits warm
started from guiding states, gradient-descent training on 2D Heisenberg
ground-state property datasets, and the kernel-linearization diagnostics
that compare the real dynamics to the tangent-kernel model.
"""

__version__ = "0.1.0"

from .core import (
    PauliString,
    PauliSum,
    StateVector,
    apply_cz,
    apply_rotation,
    fidelity,
    new_basis_state,
    observable_expectation,
    pauli_expectation,
    pauli_sum_dense,
    trace_distance_pure,
)
from .heisenberg import (
    CapacityError,
    CouplingVector,
    Dataset,
    GroundSolution,
    Lattice2D,
    build_heisenberg,
    generate_dataset,
    ground_state,
    make_dataset,
    make_guiding_state,
    square_lattice,
    z_sum_observable,
)
from .ansatz import (
    AlaCircuit,
    apply_circuit,
    build_ala,
    init_params,
    light_cone,
    observable_cone,
)
from .training import (
    TrainingConfig,
    TrainingTrace,
    generalization_error,
    gradient_adjoint,
    gradient_parameter_shift,
    loss,
    model_gradient,
    model_value,
    train,
)
from .kernel import (
    KernelMatrix,
    Spectrum,
    bound_diagnostics,
    concentration_stats,
    convergence_bound_check,
    kernel_spectrum,
    lazy_drift,
    linearized_trajectory,
    loss_gap,
    tangent_kernel,
)

__all__ = [name for name in dir() if not name.startswith("_")]
