#
# test_readout.py - homodyne trajectories, filtering and single-shot classification
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
import scipy.linalg
import pytest
from scipy.special import ndtr
from linalg_core import ComplexMatrix
from quantum_model import ControlPulse, OpenSystem, build_system, hamiltonian_at_step, readout_state
from oracles import lindblad_propagate
from trajectory_engine import trajectory_rng
from readout import FilterKernel, ReferenceAmplitude, simulate_diffusive, simulate_diffusive_ensemble, \
    integrate_filtered, build_filter, classify, add_noise, constant_pulse, reference_amplitude, \
    readout_fidelity_sweep, occupation_traces
from traj_errors import SdeStepTooCoarseError, DegenerateFilterError, LengthMismatchError, EmptyEnsembleError, \
    InvalidParameterError


@pytest.fixture
def small_readout():
    """
    4 resonator levels, 2 qubit levels and a fast resonator (kappa = 0.5/ns)
    """
    return build_system("jc-readout", {"resonator_levels": 4, "qubit_levels": 2, "kappa": 0.5})


def test_gaussian_classes(rng):
    result = classify(rng.normal(1.0, 1.0, 20000), rng.normal(-1.0, 1.0, 20000))
    assert result.fidelity == pytest.approx(float(ndtr(1.0)), abs=0.01)
    assert abs(result.threshold) < 0.25
    assert result.fidelity == pytest.approx(1.0 - 0.5 * (result.p01 + result.p10))
    assert list(result.predict([3.0, -3.0])) == [0, 1]


def test_classifier_is_affine_invariant(rng):
    x0 = rng.normal(0.5, 1.0, 2000)
    x1 = rng.normal(-0.5, 1.0, 2000)
    plain = classify(x0, x1)
    moved = classify(3.0 * x0 + 7.0, 3.0 * x1 + 7.0)
    assert moved.fidelity == pytest.approx(plain.fidelity)
    assert moved.threshold == pytest.approx(3.0 * plain.threshold + 7.0)


def test_separated_classes():
    result = classify([1.0, 2.0, 3.0, 4.0], [-1.0, -2.0, -3.0, -4.0])
    assert result.fidelity == 1.0
    assert result.p01 == 0.0 and result.p10 == 0.0
    assert result.above_class == 0
    reversed_result = classify([-1.0, -2.0, -3.0, -4.0], [1.0, 2.0, 3.0, 4.0])
    assert reversed_result.fidelity == 1.0
    assert reversed_result.above_class == 1


def test_classify_needs_both_classes():
    with pytest.raises(EmptyEnsembleError):
        classify([], [1.0])


def test_integrate_filtered():
    assert integrate_filtered([1.0, 2.0, 3.0], [1.0, 0.0, 1.0], dt=0.5) == pytest.approx(2.0)
    kernel = FilterKernel([0.0, 1.0, 0.0], 0.25)
    assert integrate_filtered([1.0, 2.0, 3.0], kernel) == pytest.approx(0.5)
    with pytest.raises(LengthMismatchError):
        integrate_filtered([1.0, 2.0], kernel)
    with pytest.raises(InvalidParameterError):
        integrate_filtered([1.0], [1.0])


def test_build_filter():
    kernel = build_filter([[3.0, 0.0], [1.0, 0.0]], [[0.0, 0.0]], 0.1)
    assert np.allclose(kernel.weights, [1.0, 0.0])
    assert kernel.dt == 0.1
    with pytest.raises(DegenerateFilterError):
        build_filter([[1.0, 2.0]], [[1.0, 2.0]], 0.1)
    with pytest.raises(DegenerateFilterError):
        FilterKernel([0.0, 0.0], 0.1)
    with pytest.raises(LengthMismatchError):
        build_filter([[1.0, 2.0]], [[1.0]], 0.1)


def test_add_noise(rng):
    x = np.zeros(50000)
    assert np.array_equal(add_noise(x, 0.0, rng), x)
    noisy = add_noise(x, 4.0, rng)
    assert np.var(noisy) == pytest.approx(4.0, rel=0.03)
    with pytest.raises(InvalidParameterError):
        add_noise(x, -1.0, rng)


def test_reference_scaling():
    reference = ReferenceAmplitude(a_ph=0.05, p_ref=2.0, n_unit=400.0)
    assert reference.amplitude(16) == pytest.approx(0.2)
    assert reference.noise_power(5) == pytest.approx(10.0)
    pulse = constant_pulse(4, 10, 0.1, reference)
    assert np.allclose(pulse.u, 0.1)
    with pytest.raises(InvalidParameterError):
        reference.amplitude(-1)


def test_diffusive_without_channels_is_unitary(qubit_x, smooth_pulse, ground):
    sx = ComplexMatrix(np.array([[0, 1], [1, 0]]))
    trajectory = simulate_diffusive(qubit_x, smooth_pulse, ground, np.random.default_rng(1), signal_operator=sx)
    psi = np.asarray(ground, dtype=np.complex128)
    for j in range(1, smooth_pulse.n_steps + 1):
        psi = scipy.linalg.expm(-1j * smooth_pulse.dt * hamiltonian_at_step(qubit_x, smooth_pulse, j).toarray()) @ psi
    assert abs(np.vdot(psi, trajectory.final_state)) ** 2 > 1.0 - 1e-6
    assert trajectory.wiener.shape == (20, 0)
    assert trajectory.signal[0] == pytest.approx(0.0)
    assert np.allclose(np.linalg.norm(trajectory.states, axis=1), 1.0)


def test_diffusive_decay_matches_the_master_equation(decaying_qubit, excited):
    pulse = ControlPulse.zeros(1, 100, 0.01)
    trajectories = simulate_diffusive_ensemble(decaying_qubit, pulse, excited, 200, seed=7)
    populations = np.array([abs(t.final_state[1]) ** 2 for t in trajectories])
    error = populations.std(ddof=1) / math.sqrt(populations.size)
    assert abs(populations.mean() - math.exp(-1.0)) < 4.0 * error + 0.01
    assert trajectories[0].wiener.shape == (100, 1)


def test_richardson_error_falls_at_second_order():
    sx = ComplexMatrix(np.array([[0, 1], [1, 0]]))
    sm = ComplexMatrix(np.array([[0, 1], [0, 0]]))
    sz = np.diag([1.0, -1.0])
    nearly_closed = OpenSystem(ComplexMatrix(np.zeros((2, 2))), [sx], [(sm, 1e-6)])
    pulse = ControlPulse(np.full((1, 10), 2.0), 0.1)
    ground = np.array([1.0, 0.0], dtype=np.complex128)
    exact = lindblad_propagate(nearly_closed, pulse, ground)[-1].expectation(sz)
    errors = []
    for substeps in (1, 2):
        trajectories = simulate_diffusive_ensemble(nearly_closed, pulse, ground, 10, seed=5, max_drift=1.0,
                                                   substeps=substeps)
        mean = np.mean([np.vdot(t.final_state, sz @ t.final_state).real for t in trajectories])
        errors.append(abs(mean - exact))
    assert errors[0] > 0.01
    assert 3.0 < errors[0] / errors[1] < 5.0


def test_diffusive_streams_are_reproducible(decaying_qubit, excited):
    pulse = ControlPulse.zeros(1, 10, 0.01)
    a = simulate_diffusive(decaying_qubit, pulse, excited, trajectory_rng(3, 0))
    b = simulate_diffusive(decaying_qubit, pulse, excited, trajectory_rng(3, 0))
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.signal, b.signal)


def test_coarse_steps_are_refused(decaying_qubit, excited):
    pulse = ControlPulse(np.full((1, 10), 2.0), 0.5)
    with pytest.raises(SdeStepTooCoarseError):
        simulate_diffusive(decaying_qubit, pulse, excited, np.random.default_rng(2), max_drift=1e-6, substeps=1,
                           max_refinements=0)


def test_readout_sweep_on_a_small_system(small_readout):
    reference = reference_amplitude(small_readout)
    assert reference.a_ph > 0.0
    assert reference.p_ref > 0.0
    pulse = constant_pulse(1.0, 40, 0.05, reference)
    results, kernel = readout_fidelity_sweep(small_readout, pulse, 20, [0.0, 10.0], seed=5, reference=reference)
    assert len(kernel) == 40
    assert np.linalg.norm(kernel.weights) == pytest.approx(1.0)
    assert [r.noise_level for r in results] == [0.0, 10.0]
    for result in results:
        assert 0.5 <= result.fidelity <= 1.0
        assert result.samples0.size == 20


def test_occupation_traces(small_readout):
    pulse = ControlPulse(np.full((1, 10), 0.2), 0.05)
    traces = occupation_traces(small_readout, pulse, 4, seed=9)
    mean, error = traces[1]["n_b"]
    assert mean.shape == (11,)
    assert mean[0] == pytest.approx(1.0)
    assert traces[0]["n_a"][0][0] == pytest.approx(0.0)
    assert np.all(np.isfinite(error))


def test_readout_states(small_readout):
    assert small_readout.dim == 8
    assert readout_state(small_readout, 1)[1] == 1.0
