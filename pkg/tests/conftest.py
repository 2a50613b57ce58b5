#
# conftest.py - shared test fixtures
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#


import os
import sys
import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from configuration import Configuration  # noqa: E402
from linalg_core import ComplexMatrix  # noqa: E402
from quantum_model import OpenSystem, ControlPulse, basis  # noqa: E402


@pytest.fixture(autouse=True)
def default_configuration():
    """
    Every test starts from the built-in configuration, unaffected by the environment
    """
    Configuration.reset()
    yield
    Configuration.reset()


@pytest.fixture
def rng():
    return np.random.default_rng(20230101)


@pytest.fixture
def qubit_x():
    """
    Closed qubit driven by sigma_x
    """
    sx = ComplexMatrix(np.array([[0, 1], [1, 0]]))
    h0 = ComplexMatrix(np.diag([0.0, 0.5]))
    return OpenSystem(h0, [sx])


@pytest.fixture
def decaying_qubit():
    """
    Qubit with sigma_- decay at gamma = 1/ns and a sigma_x drive
    """
    sm = ComplexMatrix(np.array([[0, 1], [0, 0]]))
    sx = ComplexMatrix(np.array([[0, 1], [1, 0]]))
    h0 = ComplexMatrix(np.diag([0.0, 0.3]))
    return OpenSystem(h0, [sx], [(sm, 1.0)])


@pytest.fixture
def ground():
    return basis(2, 0)


@pytest.fixture
def excited():
    return basis(2, 1)


@pytest.fixture
def smooth_pulse():
    """
    One control, 20 steps of 0.05 ns
    """
    t = np.arange(20) * 0.05
    return ControlPulse(np.array([0.8 * np.sin(np.pi * t / 1.0)]), 0.05)
