#
# validation.py - the invariant and oracle suite behind "traj-grape validate"
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#


import math
import logging
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import ndtr
from configuration import Configuration
from linalg_core import ComplexMatrix, StateBatch, matvec_exp, spmv
from autodiff import Tape, backward, gradient_check
from quantum_model import ControlPulse, readout_state, basis
from trajectory_engine import BatchConfig, PropagationSettings, simulate_no_jump, simulate_ensemble, \
    improved_sampling_batch, jump_trajectory_count, derive_seed, expectation_estimate
from costs import CostTerm, TrajectoryCost, C1
from oracles import lindblad_propagate, closed_grape_gradient, analytical_nojump_gradient
from readout import classify
from traj_errors import TrajGrapeError


logger = logging.getLogger(__name__)

CHECK_TAYLOR = "taylor-vs-expm"
CHECK_SPMV = "spmv-dense-sparse"
CHECK_APPENDIX = "autodiff-appendix-example"
CHECK_FINITE_DIFFERENCE = "autodiff-finite-difference"
CHECK_HERMITICITY = "hermiticity"
CHECK_NORMS = "norm-monotonicity"
CHECK_UNRAVELING = "unraveling-vs-lindblad"
CHECK_WEIGHTS = "improved-sampling-weights"
CHECK_CLOSED_GRAPE = "closed-grape-vs-autodiff"
CHECK_NOJUMP = "nojump-analytic-vs-autodiff"
CHECK_CLASSIFIER = "classifier-gaussian"

# Steps of the short fine-grained pulses used by the gradient comparisons
GRADIENT_CHECK_STEPS = 20
# |H| dt of those pulses; the closed forms are first order in dt
GRADIENT_CHECK_PHASE = 1e-3
# Deterministic ensembles (no channels) have zero spread
STANDARD_ERROR_FLOOR = 1e-7
# |threshold| bound of the Gaussian classifier check (the optimum is flat)
CLASSIFIER_THRESHOLD_TOL = 0.25


class CheckResult:
    """
    Outcome of one named check. A skipped check counts as passed.
    """
    def __init__(self, name, passed, measured, threshold, detail="", skipped=False):
        self.name = name
        self.passed = bool(passed)
        self.measured = float(measured)
        self.threshold = float(threshold)
        self.detail = detail
        self.skipped = skipped

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "measured": self.measured, "threshold": self.threshold,
                "detail": self.detail, "skipped": self.skipped}

    def __repr__(self):
        status = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        return f"{status} {self.name}: {self.measured:.3e} (threshold {self.threshold:.1e})"


class ValidationReport:
    def __init__(self, checks):
        self.checks = list(checks)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def _relative_error(a, b):
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def check_taylor(rng):
    d = 8
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = 0.5 * (x + x.conj().T)
    c = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    a = -1j * h - 0.5 * (c.conj().T @ c)
    a = a / np.linalg.norm(a, 2)
    v = rng.normal(size=(d, 3)) + 1j * rng.normal(size=(d, 3))
    got = matvec_exp(ComplexMatrix(a), StateBatch(v), tol=1e-16, max_terms=64).columns
    err = _relative_error(got, scipy.linalg.expm(a) @ v)
    return CheckResult(CHECK_TAYLOR, err < 1e-10, err, 1e-10)


def check_spmv(rng):
    d = 16
    s = sp.random(d, d, density=0.2, random_state=np.random.RandomState(rng.integers(2 ** 31)), format="csr")
    s = s + 1j * sp.random(d, d, density=0.2, random_state=np.random.RandomState(rng.integers(2 ** 31)),
                           format="csr")
    v = rng.normal(size=(d, 4)) + 1j * rng.normal(size=(d, 4))
    sparse = spmv(ComplexMatrix(s.tocsr(), sparse=True), StateBatch(v)).columns
    dense = spmv(ComplexMatrix(s.toarray()), StateBatch(v)).columns
    err = _relative_error(sparse, dense)
    return CheckResult(CHECK_SPMV, err < 1e-13, err, 1e-13)


def _appendix_graph():
    """
    C(x1, x2) = 2 x1^2 + exp(x1 x2) at (1, 0)
    """
    tape = Tape()
    x1 = tape.leaf(1.0, name="x1")
    x2 = tape.leaf(0.0, name="x2")
    cost = tape.add(tape.scale(2.0, tape.mul(x1, x1)), tape.exp(tape.mul(x1, x2)))
    return tape, x1, x2, cost


def check_appendix():
    tape, x1, x2, cost = _appendix_graph()
    grads = backward(tape, cost)
    err = max(abs(float(np.real(grads[x1.id])) - 4.0), abs(float(np.real(grads[x2.id])) - 1.0))
    return CheckResult(CHECK_APPENDIX, err < 1e-12, err, 1e-12)


def check_finite_difference():
    tape, _, _, cost = _appendix_graph()
    err = gradient_check(tape, cost, step=1e-6)
    return CheckResult(CHECK_FINITE_DIFFERENCE, err < 1e-8, err, 1e-8)


def check_hermiticity(sys):
    err = max([sys.h0.hermiticity_error()] + [c.hermiticity_error() for c in sys.controls])
    return CheckResult(CHECK_HERMITICITY, err <= 1e-12, err, 1e-12)


def check_norms(sys, pulse, psi0, settings):
    norms = simulate_no_jump(sys, pulse, psi0, settings=settings).norms
    rise = float(max(0.0, np.max(np.diff(norms)))) if len(norms) > 1 else 0.0
    return CheckResult(CHECK_NORMS, rise <= 1e-12, rise, 1e-12)


def _level_operator(dim):
    return ComplexMatrix(np.diag(np.arange(dim, dtype=float)))


def check_unraveling(sys, pulse, psi0, trajectories, sample_times, seed, settings, cluster_width, workers):
    cap = Configuration.get(Configuration.CFG_ORACLE_MAX_DIM)
    if sys.dim > cap:
        return CheckResult(CHECK_UNRAVELING, True, 0.0, 3.0, detail=f"dimension {sys.dim} above the oracle cap",
                           skipped=True)
    observable = _level_operator(sys.dim)
    results = simulate_ensemble(sys, pulse, psi0, trajectories, seed, cluster_width=cluster_width, settings=settings,
                                workers=workers)
    exact = lindblad_propagate(sys, pulse, psi0)
    steps = np.unique(np.linspace(0, pulse.n_steps, min(sample_times, pulse.n_steps + 1)).round().astype(int))
    worst = 0.0
    dense = observable.toarray()
    for j in steps:
        mean, error = expectation_estimate(results, observable, int(j))
        deviation = abs(mean - exact[int(j)].expectation(dense))
        worst = max(worst, deviation / max(error, STANDARD_ERROR_FLOOR))
    return CheckResult(CHECK_UNRAVELING, worst <= 3.0, worst, 3.0,
                       detail=f"{trajectories} trajectories, {len(steps)} sample times")


def check_weights(sys, pulse, psi0, m_tot, seed, settings, workers):
    outcome = improved_sampling_batch(sys, pulse, psi0, BatchConfig(m_tot, seed=seed), settings=settings,
                                      workers=workers)
    err = abs(sum(outcome.weights) - 1.0)
    if outcome.improved:
        expected = jump_trajectory_count(outcome.p, m_tot) + 1
        if outcome.m_sim != expected:
            err = max(err, float(abs(outcome.m_sim - expected)))
    return CheckResult(CHECK_WEIGHTS, err < 1e-12, err, 1e-12, detail=f"p={outcome.p:.6f}, m_sim={outcome.m_sim}")


def _fine_pulse(sys, rng):
    """
    A random pulse with |H| dt small enough for first-order closed forms
    """
    scale = np.linalg.norm(sys.h0.toarray(), 2)
    control_scale = max(np.linalg.norm(c.toarray(), 2) for c in sys.controls)
    scale = max(scale, control_scale, 1e-12)
    dt = GRADIENT_CHECK_PHASE / scale
    u = rng.uniform(-1.0, 1.0, size=(sys.n_controls, GRADIENT_CHECK_STEPS)) * scale / control_scale
    return ControlPulse(u, dt)


def _random_state(dim, rng):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _autodiff_infidelity_gradient(sys, pulse, psi0, target):
    cost = TrajectoryCost([CostTerm(C1)], target=target)
    settings = PropagationSettings(tol=1e-16, checkpoint=False)
    return simulate_no_jump(sys, pulse, psi0, cost=cost, settings=settings).gradient


def check_closed_grape(sys, psi0, rng):
    closed = sys.without_channels()
    pulse = _fine_pulse(closed, rng)
    target = _random_state(sys.dim, rng)
    err = _relative_error(_autodiff_infidelity_gradient(closed, pulse, psi0, target),
                          closed_grape_gradient(closed, pulse, psi0, target))
    return CheckResult(CHECK_CLOSED_GRAPE, err < 1e-2, err, 1e-2, detail=f"dt={pulse.dt:.3e} ns")


def check_nojump(sys, psi0, rng):
    pulse = _fine_pulse(sys, rng)
    target = _random_state(sys.dim, rng)
    err = _relative_error(_autodiff_infidelity_gradient(sys, pulse, psi0, target),
                          analytical_nojump_gradient(sys, pulse, psi0, target))
    return CheckResult(CHECK_NOJUMP, err < 1e-2, err, 1e-2, detail=f"dt={pulse.dt:.3e} ns")


def check_classifier(rng, n=20000):
    result = classify(rng.normal(1.0, 1.0, n), rng.normal(-1.0, 1.0, n))
    expected = float(ndtr(1.0))
    err = abs(result.fidelity - expected)
    passed = err < 0.01 and abs(result.threshold) < CLASSIFIER_THRESHOLD_TOL
    return CheckResult(CHECK_CLASSIFIER, passed, err, 0.01,
                       detail=f"threshold {result.threshold:.4f}")


def _guarded(name, func, *args):
    try:
        return func(*args)
    except TrajGrapeError as ex:
        logger.error("check %s raised %s", name, ex)
        return CheckResult(name, False, math.inf, 0.0, detail=str(ex))


def run_validation(config, workers=None):
    """
    Run every named check against the system of a run configuration
    :param config: RunConfig
    :return: ValidationReport
    """
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(config.seed, 0)))
    sys = config.build_system()
    pulse = config.initial_pulse(sys)
    if config.is_readout:
        psi0 = readout_state(sys, 0)
    elif config.states:
        psi0 = config.state_pairs(sys)[0][0]
    else:
        psi0 = basis(sys.dim, 0)
    settings = PropagationSettings()
    simulate = config.simulate

    checks = [
        _guarded(CHECK_TAYLOR, check_taylor, rng),
        _guarded(CHECK_SPMV, check_spmv, rng),
        _guarded(CHECK_APPENDIX, check_appendix),
        _guarded(CHECK_FINITE_DIFFERENCE, check_finite_difference),
        _guarded(CHECK_HERMITICITY, check_hermiticity, sys),
        _guarded(CHECK_NORMS, check_norms, sys, pulse, psi0, settings),
        _guarded(CHECK_UNRAVELING, check_unraveling, sys, pulse, psi0, int(simulate["trajectories"]),
                 int(simulate["sample_times"]), derive_seed(config.seed, 1), settings,
                 int(simulate["cluster_width"]), workers),
        _guarded(CHECK_WEIGHTS, check_weights, sys, pulse, psi0, int(config.batch["m_tot"]),
                 derive_seed(config.seed, 2), settings, workers),
        _guarded(CHECK_CLOSED_GRAPE, check_closed_grape, sys, psi0, rng),
        _guarded(CHECK_NOJUMP, check_nojump, sys, psi0, rng),
        _guarded(CHECK_CLASSIFIER, check_classifier, rng),
    ]
    for check in checks:
        logger.info("%r", check)
    return ValidationReport(checks)
