#
# test_lambda_baselines.py - two-tone Raman drive of the lambda system
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
from quantum_model import ControlPulse, build_system, basis
from lambda_baselines import raman_pulse, raman_grid_search, peak_occupation
from traj_errors import InvalidParameterError


@pytest.fixture
def lambda_system():
    return build_system("lambda")


def test_raman_pulse_tones(lambda_system):
    params = lambda_system.metadata["params"]
    pulse = raman_pulse(params, 0.2, 0.5, 100, 0.01)
    assert pulse.n_controls == 1
    assert pulse.n_steps == 100
    assert pulse.u[0, 0] == pytest.approx(1.0)
    t = 37 * 0.01
    w12 = params["omega2"] - params["omega1"] - 0.2
    w32 = params["omega2"] - params["omega3"] - 0.2
    assert pulse.u[0, 37] == pytest.approx(0.5 * (np.cos(w12 * t) + np.cos(w32 * t)))


def test_peak_occupation_of_the_intermediate_level(lambda_system):
    pulse = ControlPulse.zeros(1, 50, 0.01)
    assert peak_occupation(lambda_system, pulse, basis(3, 1)) == pytest.approx(1.0)
    assert peak_occupation(lambda_system, pulse, basis(3, 0)) == pytest.approx(0.0, abs=1e-12)


def test_grid_search_picks_the_best_point(lambda_system):
    result = raman_grid_search(lambda_system, basis(3, 0), basis(3, 2), 50, 0.01, [0.0, 1.0], [0.0, 2.0])
    assert result.fidelities.shape == (2, 2)
    assert result.fidelity == pytest.approx(np.nanmax(result.fidelities))
    assert result.fidelities[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert 0.0 <= result.peak_occupation <= 1.0
    assert set(result.to_dict()) == {"detuning", "amplitude", "fidelity", "peak_occupation"}


def test_grid_search_respects_the_bound(lambda_system):
    result = raman_grid_search(lambda_system, basis(3, 0), basis(3, 2), 20, 0.01, [0.0], [0.5, 3.0], bound=2.0)
    assert np.isnan(result.fidelities[0, 1])
    assert result.amplitude == 0.5
    with pytest.raises(InvalidParameterError):
        raman_grid_search(lambda_system, basis(3, 0), basis(3, 2), 20, 0.01, [0.0], [3.0], bound=2.0)


def test_grid_search_needs_a_lambda_system(qubit_x, ground, excited):
    with pytest.raises(InvalidParameterError):
        raman_grid_search(qubit_x, ground, excited, 10, 0.01, [0.0], [0.1])
