#
# test_trajectory_engine.py - jump trajectories, batches and ensembles
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
from linalg_core import ComplexMatrix, StateBatch
from quantum_model import OpenSystem, ControlPulse, basis, step_propagate
import trajectory_engine
from trajectory_engine import BatchConfig, PropagationSettings, JumpRecord, simulate_jump_trajectory, \
    simulate_no_jump, simulate_ensemble, naive_batch, improved_sampling_batch, run_batch, jump_probability, \
    jump_trajectory_count, expectation_estimate, clustered_propagate, trajectory_rng, derive_seed, \
    segment_bounds
from oracles import lindblad_propagate
from costs import CostTerm, TrajectoryCost, C1
from traj_errors import StepIndexError, EmptyEnsembleError, InvalidParameterError


class ScriptedDraws:
    """
    Uniform draws from a fixed list
    """
    def __init__(self, values):
        self._values = list(values)

    def random(self):
        return self._values.pop(0)


@pytest.fixture
def free_decay():
    sm = ComplexMatrix(np.array([[0, 1], [0, 0]]))
    sx = ComplexMatrix(np.array([[0, 1], [1, 0]]))
    return OpenSystem(np.zeros((2, 2)), [sx], [(sm, 1.0)])


def test_jump_time_follows_the_threshold(free_decay):
    # survival exp(-t) reaches r = 0.5 at t = ln 2
    pulse = ControlPulse.zeros(1, 200, 0.01)
    result = simulate_jump_trajectory(free_decay, pulse, basis(2, 1), ScriptedDraws([0.5, 0.3, 0.7]))
    assert result.jumps.steps == [math.ceil(math.log(2.0) / 0.01)]
    assert abs(result.final_state[0]) == pytest.approx(1.0)
    assert len(result.jumps) == 1
    assert result.jumps.events[0][2] == 0.5


def test_no_jump_norms_decrease(decaying_qubit, smooth_pulse, excited):
    result = simulate_no_jump(decaying_qubit, smooth_pulse, excited)
    assert np.all(np.diff(result.norms) <= 1e-12)
    assert result.survival == pytest.approx(result.norms[-1])
    assert len(result.jumps) == 0


def test_jump_probability_of_free_decay(free_decay):
    pulse = ControlPulse.zeros(1, 50, 0.02)
    assert jump_probability(free_decay, pulse, basis(2, 1)) == pytest.approx(1.0 - math.exp(-1.0), rel=1e-10)


def test_same_seed_same_trajectory(decaying_qubit, smooth_pulse, excited):
    cost = TrajectoryCost([CostTerm(C1)], target=basis(2, 0))
    first = simulate_jump_trajectory(decaying_qubit, smooth_pulse, excited, trajectory_rng(99, 4), cost=cost)
    second = simulate_jump_trajectory(decaying_qubit, smooth_pulse, excited, trajectory_rng(99, 4), cost=cost)
    assert first.jumps == second.jumps
    assert first.cost == second.cost
    assert np.array_equal(first.gradient, second.gradient)


def test_taped_gradient_matches_finite_differences(qubit_x, smooth_pulse, ground, excited):
    cost = TrajectoryCost([CostTerm(C1)], target=excited)
    settings = PropagationSettings(tol=1e-15)
    gradient = simulate_no_jump(qubit_x, smooth_pulse, ground, cost=cost, settings=settings).gradient
    h = 1e-6
    for j in (0, 7, 19):
        plus = np.array(smooth_pulse.u)
        minus = np.array(smooth_pulse.u)
        plus[0, j] += h
        minus[0, j] -= h
        c_plus = simulate_no_jump(qubit_x, smooth_pulse.with_amplitudes(plus), ground, cost=cost,
                                  settings=settings).cost
        c_minus = simulate_no_jump(qubit_x, smooth_pulse.with_amplitudes(minus), ground, cost=cost,
                                   settings=settings).cost
        assert gradient[0, j] == pytest.approx((c_plus - c_minus) / (2 * h), rel=1e-5, abs=1e-9)


def test_checkpointed_gradient_equals_taped_gradient(decaying_qubit, smooth_pulse, excited):
    cost = TrajectoryCost([CostTerm(C1)], target=basis(2, 0))
    taped = simulate_jump_trajectory(decaying_qubit, smooth_pulse, excited, trajectory_rng(5, 0), cost=cost,
                                     settings=PropagationSettings(checkpoint=False))
    recomputed = simulate_jump_trajectory(decaying_qubit, smooth_pulse, excited, trajectory_rng(5, 0), cost=cost,
                                          settings=PropagationSettings(checkpoint=True))
    assert taped.jumps == recomputed.jumps
    assert recomputed.cost == pytest.approx(taped.cost, rel=1e-12)
    assert np.allclose(recomputed.gradient, taped.gradient, rtol=1e-9, atol=1e-12)


def test_segment_bounds_cover_all_steps():
    bounds = segment_bounds(100, True)
    assert bounds[0][0] == 0
    assert bounds[-1][1] == 100
    assert all(b[1] == c[0] for b, c in zip(bounds, bounds[1:]))
    assert segment_bounds(100, False) == [(0, 100)]


def test_improved_sampling_weights_and_counts(decaying_qubit, smooth_pulse, excited):
    cfg = BatchConfig(10, seed=11)
    outcome = improved_sampling_batch(decaying_qubit, smooth_pulse, excited, cfg)
    m_j = jump_trajectory_count(outcome.p, 10)
    assert outcome.improved
    assert outcome.m_sim == m_j + 1
    assert sum(outcome.weights) == pytest.approx(1.0, abs=1e-12)
    assert len(outcome.results[0].jumps) == 0
    assert all(len(r.jumps) >= 1 for r in outcome.results[1:])
    assert all(r.first_r >= outcome.p for r in outcome.results[1:])


def test_closed_system_needs_only_the_no_jump_trajectory(qubit_x, smooth_pulse, ground):
    outcome = improved_sampling_batch(qubit_x, smooth_pulse, ground, BatchConfig(10))
    assert outcome.p == pytest.approx(1.0)
    assert outcome.m_sim == 1
    assert outcome.weights == [pytest.approx(1.0)]


def test_naive_batch_is_reproducible(decaying_qubit, smooth_pulse, excited):
    cfg = BatchConfig(6, seed=3, improved_sampling=False)
    first = run_batch(decaying_qubit, smooth_pulse, excited, cfg)
    second = naive_batch(decaying_qubit, smooth_pulse, excited, cfg)
    assert [r.jumps for r in first.results] == [r.jumps for r in second.results]
    assert first.weights == [pytest.approx(1.0 / 6)] * 6


def test_ensemble_matches_single_trajectories(decaying_qubit, smooth_pulse, excited):
    ensemble = simulate_ensemble(decaying_qubit, smooth_pulse, excited, 6, 21, cluster_width=4)
    for i, result in enumerate(ensemble):
        single = simulate_jump_trajectory(decaying_qubit, smooth_pulse, excited, trajectory_rng(21, i), index=i)
        assert result.index == i
        assert result.jumps == single.jumps
        assert np.allclose(result.final_state, single.final_state, atol=1e-10)


def test_ensemble_cluster_width_does_not_change_results(decaying_qubit, smooth_pulse, excited):
    narrow = simulate_ensemble(decaying_qubit, smooth_pulse, excited, 5, 8, cluster_width=1)
    wide = simulate_ensemble(decaying_qubit, smooth_pulse, excited, 5, 8, cluster_width=5)
    assert [r.jumps for r in narrow] == [r.jumps for r in wide]
    with pytest.raises(EmptyEnsembleError):
        simulate_ensemble(decaying_qubit, smooth_pulse, excited, 0, 8)


def test_clustered_propagate_matches_column_steps(decaying_qubit, smooth_pulse, rng):
    cols = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
    out = clustered_propagate(decaying_qubit, smooth_pulse, 4, StateBatch(cols), [None, 0, None]).columns
    for i, event in enumerate([None, 0, None]):
        single = step_propagate(decaying_qubit, smooth_pulse, 4, StateBatch(cols[:, i]), event=event).vector()
        assert np.allclose(out[:, i], single, atol=1e-13)


def test_expectation_estimate(decaying_qubit, smooth_pulse, excited):
    results = simulate_ensemble(decaying_qubit, smooth_pulse, excited, 1, 2)
    n = ComplexMatrix(np.diag([0.0, 1.0]))
    mean, error = expectation_estimate(results, n, 0)
    assert mean == pytest.approx(1.0)
    assert error == math.inf
    with pytest.raises(InvalidParameterError):
        expectation_estimate(results, ComplexMatrix(np.array([[0, 1], [0, 0]])), 0)


def test_jump_record_rejects_unordered_steps():
    record = JumpRecord([(3, 0, 0.5)])
    with pytest.raises(StepIndexError):
        record.append(2, 0, 0.1)


def test_invalid_batch_settings():
    with pytest.raises(InvalidParameterError):
        BatchConfig(0)
    with pytest.raises(InvalidParameterError):
        PropagationSettings(stride=0)


def test_derived_seeds_are_distinct_and_stable():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert len({derive_seed(1, i) for i in range(100)}) == 100


def test_improved_sampling_is_unbiased(decaying_qubit, excited):
    # steps of 0.02 ns keep the step-resolved jump times within ~1e-3 of the master equation
    pulse = ControlPulse(np.full((1, 50), 0.5), 0.02)
    p1 = ComplexMatrix(np.diag([0.0, 1.0]))
    estimates = []
    for seed in range(150):
        outcome = improved_sampling_batch(decaying_qubit, pulse, excited, BatchConfig(5, seed=seed))
        assert outcome.improved
        estimates.append(expectation_estimate(outcome.results, p1, pulse.n_steps, weights=outcome.weights)[0])
    exact = lindblad_propagate(decaying_qubit, pulse, excited)[-1].population(1)
    mean = np.mean(estimates)
    error = np.std(estimates, ddof=1) / math.sqrt(len(estimates))
    assert abs(mean - exact) < 4.0 * error + 3e-3


def test_worker_count_does_not_change_trajectories(decaying_qubit, smooth_pulse, excited):
    serial = simulate_ensemble(decaying_qubit, smooth_pulse, excited, 16, 5, cluster_width=2, workers=1)
    parallel = simulate_ensemble(decaying_qubit, smooth_pulse, excited, 16, 5, cluster_width=2, workers=2)
    assert [r.index for r in parallel] == list(range(16))
    for a, b in zip(serial, parallel):
        assert a.jumps == b.jumps
        assert np.array_equal(a.norms, b.norms)
        assert np.array_equal(a.final_state, b.final_state)


def test_worker_count_does_not_change_batch_gradients(decaying_qubit, smooth_pulse, excited):
    cost = TrajectoryCost([CostTerm(C1)], target=basis(2, 0))
    serial = improved_sampling_batch(decaying_qubit, smooth_pulse, excited, BatchConfig(6, seed=4), cost=cost,
                                     workers=1)
    parallel = improved_sampling_batch(decaying_qubit, smooth_pulse, excited, BatchConfig(6, seed=4), cost=cost,
                                       workers=2)
    assert serial.weights == parallel.weights
    assert np.array_equal(serial.gradient, parallel.gradient)
    assert serial.cost == parallel.cost


def test_columns_near_the_threshold_are_stepped_alone(monkeypatch, decaying_qubit, smooth_pulse, excited):
    shared = simulate_ensemble(decaying_qubit, smooth_pulse, excited, 6, 21, cluster_width=6)
    monkeypatch.setattr(trajectory_engine, "THRESHOLD_MARGIN", 2.0)
    alone = simulate_ensemble(decaying_qubit, smooth_pulse, excited, 6, 21, cluster_width=6)
    for i, (a, b) in enumerate(zip(shared, alone)):
        single = simulate_jump_trajectory(decaying_qubit, smooth_pulse, excited, trajectory_rng(21, i), index=i)
        assert a.jumps == b.jumps == single.jumps
        assert np.allclose(b.final_state, single.final_state, atol=1e-10)
