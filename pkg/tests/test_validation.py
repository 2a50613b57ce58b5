#
# test_validation.py - the named numerical self-checks
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
import validation
from quantum_model import ControlPulse, OpenSystem
from oracles import lindblad_propagate
from trajectory_engine import PropagationSettings
from run_config import RunConfig
from validation import CheckResult, ValidationReport, check_taylor, check_spmv, check_appendix, \
    check_finite_difference, check_hermiticity, check_norms, check_weights, check_closed_grape, check_nojump, \
    check_classifier, check_unraveling, run_validation, CHECK_TAYLOR, CHECK_SPMV, CHECK_APPENDIX, \
    CHECK_FINITE_DIFFERENCE, CHECK_HERMITICITY, CHECK_NORMS, CHECK_UNRAVELING, CHECK_WEIGHTS, \
    CHECK_CLOSED_GRAPE, CHECK_NOJUMP, CHECK_CLASSIFIER


def test_linear_algebra_checks(rng):
    assert check_taylor(rng).passed
    assert check_spmv(rng).passed


def test_autodiff_checks():
    appendix = check_appendix()
    assert appendix.passed
    assert appendix.measured < 1e-12
    assert check_finite_difference().passed


def test_model_checks(decaying_qubit, smooth_pulse, ground):
    assert check_hermiticity(decaying_qubit).passed
    assert check_norms(decaying_qubit, smooth_pulse, ground, PropagationSettings()).passed


def test_sampling_weights(decaying_qubit, smooth_pulse, excited):
    result = check_weights(decaying_qubit, smooth_pulse, excited, 10, 4, PropagationSettings(), None)
    assert result.passed, result.detail


def test_gradient_checks(decaying_qubit, ground, rng):
    assert check_closed_grape(decaying_qubit, ground, rng).passed
    assert check_nojump(decaying_qubit, ground, rng).passed


def test_classifier_check(rng):
    assert check_classifier(rng).passed


def test_deterministic_unraveling_is_exact(qubit_x, smooth_pulse, ground):
    result = check_unraveling(qubit_x, smooth_pulse, ground, 4, 5, 1, PropagationSettings(), 2, None)
    assert result.passed
    assert not result.skipped


def test_unraveling_skips_large_systems(qubit_x, smooth_pulse, ground):
    from configuration import Configuration
    Configuration.set(Configuration.CFG_ORACLE_MAX_DIM, 1)
    result = check_unraveling(qubit_x, smooth_pulse, ground, 4, 5, 1, PropagationSettings(), 2, None)
    assert result.skipped
    assert result.passed


def test_report():
    report = ValidationReport([CheckResult("a", True, 0.0, 1.0), CheckResult("b", False, 2.0, 1.0)])
    assert not report.passed
    assert [c.name for c in report.failures] == ["b"]
    document = report.to_dict()
    assert document["passed"] is False
    assert document["checks"][1]["measured"] == 2.0
    assert repr(report.checks[1]).startswith("FAIL b")


def test_run_validation_covers_every_check():
    config = RunConfig({
        "name": "tiny",
        "seed": 11,
        "system": {"family": "explicit", "h0": [[0.0, 0.0], [0.0, 0.5]], "controls": [[[0.0, 1.0], [1.0, 0.0]]],
                   "channels": [{"op": [[0.0, 1.0], [0.0, 0.0]], "rate": 0.2}]},
        "pulse": {"n_steps": 10, "dt": 0.1, "init": "constant", "amplitude": 0.8},
        "states": [{"initial": 0, "target": 1}],
        "costs": [{"kind": "C1"}],
        "batch": {"m_tot": 5},
        "simulate": {"trajectories": 50, "sample_times": 5, "cluster_width": 4},
    })
    report = run_validation(config)
    assert [c.name for c in report.checks] == [CHECK_TAYLOR, CHECK_SPMV, CHECK_APPENDIX, CHECK_FINITE_DIFFERENCE,
                                              CHECK_HERMITICITY, CHECK_NORMS, CHECK_UNRAVELING, CHECK_WEIGHTS,
                                              CHECK_CLOSED_GRAPE, CHECK_NOJUMP, CHECK_CLASSIFIER]
    deterministic = [c for c in report.checks if c.name != CHECK_UNRAVELING]
    assert all(c.passed for c in deterministic), [repr(c) for c in deterministic if not c.passed]
    assert np.isfinite(next(c for c in report.checks if c.name == CHECK_UNRAVELING).measured)


@pytest.fixture
def fine_pulse():
    t = np.arange(100) * 0.01
    return ControlPulse(np.array([0.8 * np.sin(np.pi * t / 1.0)]), 0.01)


def test_unraveling_of_a_decaying_qubit_matches_lindblad(decaying_qubit, fine_pulse, excited):
    result = check_unraveling(decaying_qubit, fine_pulse, excited, 800, 5, 11, PropagationSettings(), 4, None)
    assert not result.skipped
    assert result.passed, result.detail
    assert 0.0 < result.measured <= 3.0


def test_unraveling_detects_a_wrong_decay_rate(monkeypatch, decaying_qubit, fine_pulse, excited):
    faster = OpenSystem(decaying_qubit.h0, decaying_qubit.controls,
                        [(op, 4.0 * rate) for op, rate in decaying_qubit.channels])
    monkeypatch.setattr(validation, "lindblad_propagate",
                        lambda sys, pulse, psi0: lindblad_propagate(faster, pulse, psi0))
    result = check_unraveling(decaying_qubit, fine_pulse, excited, 800, 5, 11, PropagationSettings(), 4, None)
    assert not result.passed
    assert result.measured > 3.0
