#
# test_costs.py - state, pulse and readout cost terms
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#


import numpy as np
import pytest
from autodiff import Tape, backward, gradient_check
from quantum_model import ControlPulse, basis
from costs import CostTerm, CostSpec, CostContext, ReadoutEnsemble, TrajectoryCost, eval_pulse_costs, \
    eval_state_costs, eval_readout_costs, ensemble_leaves, pulse_cost_and_gradient, total_cost, \
    envelope_weights, C1, C2, C3, C4, C5, C6, C7, CF, CR, CQ
from traj_errors import MissingParameterError, CostParameterError, LengthMismatchError


def _pulse_cost(kind, u, **kwargs):
    tape = Tape()
    u_node = tape.leaf(np.array(u, dtype=float))
    return float(eval_pulse_costs(tape, CostTerm(kind, **kwargs), u_node).value)


def test_difference_costs_on_a_spike():
    u = [[0.0, 1.0, 0.0]]
    assert _pulse_cost(C4, u) == pytest.approx(2.0)
    assert _pulse_cost(C5, u) == pytest.approx(4.0)
    assert _pulse_cost(C6, u) == pytest.approx(1.0)


def test_padded_difference_costs_penalise_endpoints():
    u = [[0.0, 1.0, 0.0]]
    assert _pulse_cost(C4, u, padded=True) == pytest.approx(2.0)
    assert _pulse_cost(C5, u, padded=True) == pytest.approx(6.0)
    assert _pulse_cost(C4, [[1.0, 1.0]]) == pytest.approx(0.0)
    assert _pulse_cost(C4, [[1.0, 1.0]], padded=True) == pytest.approx(2.0)


def test_envelope_cost_ignores_the_centre():
    assert _pulse_cost(C7, [[0.0, 5.0, 0.0]], sigma=1.0) == pytest.approx(0.0)
    w = envelope_weights(3, 1.0)
    assert _pulse_cost(C7, [[1.0, 0.0, 0.0]], sigma=1.0) == pytest.approx(w[0] ** 2)


def test_pulse_cost_gradient():
    u = np.array([[0.3, -0.2, 0.5, 0.1]])
    spec = CostSpec([CostTerm(C6, weight=0.5), CostTerm(C4, weight=0.25), CostTerm(C1)])
    value, gradient, values = pulse_cost_and_gradient(spec, ControlPulse(u, 0.1))
    assert set(values) == {C6, C4}
    c4 = np.sum(np.diff(u) ** 2)
    assert value == pytest.approx(0.5 * np.sum(u ** 2) + 0.25 * c4)
    tape = Tape()
    u_node = tape.leaf(u)
    total = tape.add(tape.scale(0.5, eval_pulse_costs(tape, CostTerm(C6), u_node)),
                     tape.scale(0.25, eval_pulse_costs(tape, CostTerm(C4), u_node)))
    assert np.allclose(gradient, backward(tape, total)[u_node.id])
    assert gradient_check(tape, total) < 1e-8


def test_state_costs():
    tape = Tape()
    plus = np.array([1.0, 1.0]) / np.sqrt(2.0)
    states = [basis(2, 0).reshape(-1, 1), plus.reshape(-1, 1), basis(2, 1).reshape(-1, 1)]
    c1 = eval_state_costs(tape, CostTerm(C1), states, states[-1], target=basis(2, 1))
    c2 = eval_state_costs(tape, CostTerm(C2, forbidden=basis(2, 1)), states, states[-1])
    c3 = eval_state_costs(tape, CostTerm(C3, operator=np.diag([0.0, 2.0])), states, states[-1])
    assert float(c1.value) == pytest.approx(0.0)
    assert float(c2.value) == pytest.approx(1.5)
    assert float(c3.value) == pytest.approx(3.0)


def test_c1_without_target():
    tape = Tape()
    with pytest.raises(MissingParameterError):
        eval_state_costs(tape, CostTerm(C1), [basis(2, 0).reshape(-1, 1)], basis(2, 0).reshape(-1, 1))


def test_trajectory_cost_weights_terms():
    tape = Tape()
    cost = TrajectoryCost([CostTerm(C2, forbidden=basis(2, 1), weight=3.0), CostTerm(C6)], target=basis(2, 1))
    node = cost.state_cost(tape, 1, 2, basis(2, 1).reshape(-1, 1))
    assert float(node.value) == pytest.approx(3.0)
    assert cost.state_cost(tape, 0, 2, basis(2, 1).reshape(-1, 1)) is None


def test_invalid_terms():
    with pytest.raises(CostParameterError):
        CostTerm("C9")
    with pytest.raises(CostParameterError):
        CostTerm(C6, weight=-1.0)
    with pytest.raises(MissingParameterError):
        CostTerm(C2)
    with pytest.raises(MissingParameterError):
        CostTerm(C7)
    with pytest.raises(CostParameterError):
        CostTerm(C7, sigma=0.0)
    with pytest.raises(CostParameterError):
        CostSpec([])


def _ensembles():
    ground = ReadoutEnsemble([[1.0, 1.0], [3.0, 3.0]], [[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0], [0.5, 0.5])
    excited = ReadoutEnsemble([[0.0, 0.0], [0.0, 0.0]], [[0.0, 2.0], [0.0, 2.0]], [0.5, 0.5], [0.5, 0.5])
    return ground, excited


def test_readout_costs():
    ground, excited = _ensembles()
    tape = Tape()
    g = ensemble_leaves(tape, ground)
    e = ensemble_leaves(tape, excited)
    assert float(eval_readout_costs(tape, CF, g, e).value) == pytest.approx(-4.0)
    assert float(eval_readout_costs(tape, CR, g, e).value) == pytest.approx(2.0)
    assert float(eval_readout_costs(tape, CQ, g, e).value) == pytest.approx(0.25)


def test_readout_cost_gradients_are_exact():
    ground, excited = _ensembles()
    tape = Tape()
    context = CostContext(ground=ensemble_leaves(tape, ground), excited=ensemble_leaves(tape, excited))
    spec = CostSpec([CostTerm(CF), CostTerm(CR, weight=0.1), CostTerm(CQ)])
    total = total_cost(tape, spec, context)
    assert float(total.value) == pytest.approx(-4.0 + 0.2 + 0.25)
    assert gradient_check(tape, total) < 1e-7


def test_readout_ensemble_shapes():
    with pytest.raises(LengthMismatchError):
        ReadoutEnsemble([[1.0, 2.0]], [[1.0, 2.0]], [1.0, 1.0], [0.5, 0.5])


def test_total_cost_needs_its_inputs():
    tape = Tape()
    with pytest.raises(MissingParameterError):
        total_cost(tape, CostSpec([CostTerm(C6)]), CostContext())
