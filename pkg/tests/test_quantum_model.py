#
# test_quantum_model.py - systems, pulses, step propagation and the factories
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#


import math
import numpy as np
import pytest
import scipy.linalg
from linalg_core import ComplexMatrix, StateBatch
from quantum_model import OpenSystem, ControlPulse, build_system, hamiltonian_at_step, effective_hamiltonian, \
    step_propagate, readout_state, basis, as_state, FAMILY_TRANSMON, FAMILY_LAMBDA, FAMILY_READOUT
from traj_errors import DimensionMismatchError, InvalidParameterError, StepIndexError, ConfigError, \
    ShapeMismatchError


def test_transmon_hamiltonian_matches_direct_assembly():
    sys = build_system(FAMILY_TRANSMON)
    pulse = ControlPulse(np.array([[0.1, 0.0], [0.05, 0.0]]), 0.05)
    b = np.diag(np.sqrt(np.arange(1, 4)), 1)
    n = b.conj().T @ b
    omega = 2 * math.pi * 3.9
    alpha = -2 * math.pi * 0.225
    expected = omega * n + 0.5 * alpha * n @ (n - np.eye(4)) + 0.1 * (b + b.conj().T) + 0.05 * n
    assert np.allclose(hamiltonian_at_step(sys, pulse, 1).toarray(), expected, atol=1e-12)


def test_effective_hamiltonian_adds_decay():
    sys = build_system(FAMILY_TRANSMON, {"t1": 100.0})
    pulse = ControlPulse.zeros(2, 1, 0.1)
    heff = effective_hamiltonian(sys, pulse, 1).toarray()
    h = hamiltonian_at_step(sys, pulse, 1).toarray()
    b = np.diag(np.sqrt(np.arange(1, 4)), 1)
    assert np.allclose(heff, h - 0.5j * 0.01 * b.conj().T @ b)


def test_no_jump_step_decays_excited_state(decaying_qubit, excited):
    pulse = ControlPulse.zeros(1, 1, 0.1)
    out = step_propagate(decaying_qubit, pulse, 1, StateBatch(excited)).vector()
    assert np.linalg.norm(out) == pytest.approx(math.exp(-0.05), rel=1e-12)


def test_step_propagate_matches_expm(decaying_qubit, ground):
    pulse = ControlPulse(np.array([[0.7]]), 0.2)
    heff = effective_hamiltonian(decaying_qubit, pulse, 1).toarray()
    expected = scipy.linalg.expm(-1j * 0.2 * heff) @ ground
    out = step_propagate(decaying_qubit, pulse, 1, StateBatch(ground)).vector()
    assert np.allclose(out, expected, atol=1e-12)


def test_jump_event_applies_channel(decaying_qubit, excited):
    pulse = ControlPulse.zeros(1, 1, 0.1)
    out = step_propagate(decaying_qubit, pulse, 1, StateBatch(excited), event=0).vector()
    assert np.allclose(out, [1.0, 0.0])
    with pytest.raises(StepIndexError):
        step_propagate(decaying_qubit, pulse, 1, StateBatch(excited), event=3)


def test_step_index_out_of_range(qubit_x, ground):
    with pytest.raises(StepIndexError):
        step_propagate(qubit_x, ControlPulse.zeros(1, 2, 0.1), 3, StateBatch(ground))


def test_non_hermitian_hamiltonian_rejected():
    with pytest.raises(InvalidParameterError):
        OpenSystem(np.array([[0, 1], [0, 0]]), [])


def test_channel_shape_and_rate_checked():
    with pytest.raises(DimensionMismatchError):
        OpenSystem(np.eye(2), [], [(np.eye(3), 1.0)])
    with pytest.raises(InvalidParameterError):
        OpenSystem(np.eye(2), [], [(np.eye(2), -1.0)])


def test_pulse_validation_and_clipping():
    with pytest.raises(InvalidParameterError):
        ControlPulse(np.ones((1, 3)), 0.0)
    with pytest.raises(ShapeMismatchError):
        ControlPulse(np.ones((1, 0)), 0.1)
    pulse = ControlPulse(np.array([[-2.0, 0.5, 3.0]]), 0.1)
    assert np.array_equal(pulse.clipped(1.0).u, [[-1.0, 0.5, 1.0]])
    assert ControlPulse.from_dict(pulse.to_dict()).u.tolist() == pulse.u.tolist()
    assert pulse.duration == pytest.approx(0.3)


def test_lambda_defaults_split_decay_equally():
    sys = build_system(FAMILY_LAMBDA)
    assert sys.dim == 3
    assert sys.n_controls == 1
    rates = [rate for _, rate in sys.channels]
    assert rates == pytest.approx([0.025, 0.025])


def test_readout_defaults():
    sys = build_system(FAMILY_READOUT)
    assert sys.dim == 45
    assert sys.is_sparse
    assert sys.metadata["n_crit"] == pytest.approx(16.0)
    assert sys.metadata["frame"] == "rotating"
    psi = readout_state(sys, 1)
    n_b = sys.operator("n_b").toarray()
    assert np.vdot(psi, n_b @ psi).real == pytest.approx(1.0)


def test_readout_full_scale_and_unknown_family():
    assert build_system(FAMILY_READOUT, full_scale=True).dim == 90
    with pytest.raises(ConfigError):
        build_system("fluxonium")


def test_as_state_normalises():
    v = as_state([3.0, 4.0], 2)
    assert np.allclose(v, [0.6, 0.8])
    with pytest.raises(DimensionMismatchError):
        as_state([1.0, 0.0, 0.0], 2)
    assert np.array_equal(basis(3, 2), [0, 0, 1])


def test_sparse_and_dense_systems_propagate_alike(rng):
    h0 = np.diag([0.0, 1.0, 2.5])
    hx = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    dense = OpenSystem(ComplexMatrix(h0), [ComplexMatrix(hx)])
    sparse = OpenSystem(ComplexMatrix(h0, sparse=True), [ComplexMatrix(hx, sparse=True)])
    pulse = ControlPulse(rng.uniform(-1, 1, size=(1, 2)), 0.1)
    v = StateBatch(basis(3, 0))
    assert np.allclose(step_propagate(dense, pulse, 2, v).columns, step_propagate(sparse, pulse, 2, v).columns,
                       atol=1e-13)
