#
# test_autodiff.py - tape recording, reverse sweep and finite-difference agreement
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
from autodiff import Tape, backward, gradient_check, record
from traj_errors import UnknownOpError, NonScalarCostError, SingularOpError, ShapeMismatchError


def test_two_variable_example():
    # C = 2 x1^2 + exp(x1 x2) at (1, 0): dC/dx1 = 4 + x2 = 4, dC/dx2 = x1 = 1
    tape = Tape()
    x1 = tape.leaf(1.0)
    x2 = tape.leaf(0.0)
    cost = tape.add(tape.scale(2.0, tape.mul(x1, x1)), tape.exp(tape.mul(x1, x2)))
    assert float(cost.value) == pytest.approx(3.0)
    grads = backward(tape, cost)
    assert grads[x1.id] == pytest.approx(4.0)
    assert grads[x2.id] == pytest.approx(1.0)
    assert gradient_check(tape, cost) < 1e-8


def test_paths_are_summed():
    tape = Tape()
    x = tape.leaf(3.0)
    cost = tape.add(tape.mul(x, x), x)
    assert backward(tape, cost)[x.id] == pytest.approx(7.0)


def test_leaf_without_path_gets_zero():
    tape = Tape()
    x = tape.leaf(2.0)
    unused = tape.leaf(np.ones(3))
    cost = tape.mul(x, x)
    grads = backward(tape, cost)
    assert np.array_equal(grads[unused.id], np.zeros(3))


def test_matmul_rule_against_finite_differences(rng):
    tape = Tape()
    a, _, _ = tape.complex_leaf(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
    b, _, _ = tape.complex_leaf(rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2)))
    c = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
    cost = tape.real(tape.trace(tape.matmul(tape.matmul(a, b), c)))
    assert gradient_check(tape, cost, step=1e-6) < 1e-7


def test_fidelity_style_cost_against_finite_differences(rng):
    tape = Tape()
    m, _, _ = tape.complex_leaf(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    psi = (rng.normal(size=(4, 1)) + 1j * rng.normal(size=(4, 1)))
    target = (rng.normal(size=(4, 1)) + 1j * rng.normal(size=(4, 1)))
    out = tape.matmul(m, psi)
    cost = tape.div(tape.abs2(tape.inner(target, out)), tape.mul(tape.norm(out), tape.norm(out)))
    assert gradient_check(tape, cost, step=1e-6) < 1e-6


def test_transpose_and_conjugate_rules(rng):
    tape = Tape()
    a, _, _ = tape.complex_leaf(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    w = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    y = tape.matmul(tape.conjugate(tape.transpose(a)), w)
    cost = tape.imag(tape.trace(y))
    assert gradient_check(tape, cost) < 1e-7


def test_replay_reuses_recorded_branches():
    tape = Tape()
    x = tape.leaf(2.0)
    cost = tape.mul(x, x)
    assert float(tape.replay({x.id: np.asarray(3.0)})[cost.id]) == pytest.approx(9.0)
    assert float(cost.value) == pytest.approx(4.0)


def test_unknown_op():
    tape = Tape()
    with pytest.raises(UnknownOpError):
        record(tape, "EXPM", tape.leaf(1.0))


def test_complex_or_vector_cost_rejected():
    tape = Tape()
    v = tape.leaf(np.ones(2))
    with pytest.raises(NonScalarCostError):
        backward(tape, tape.mul(v, v))
    z, _, _ = tape.complex_leaf(1.0 + 1.0j)
    with pytest.raises(NonScalarCostError):
        backward(tape, tape.mul(z, z))


def test_division_by_zero_and_shape_errors():
    tape = Tape()
    with pytest.raises(SingularOpError):
        tape.div(tape.leaf(1.0), tape.leaf(0.0))
    with pytest.raises(ShapeMismatchError):
        tape.matmul(tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((2, 3))))


def test_non_recording_tape_keeps_nothing():
    tape = Tape(record=False)
    x = tape.leaf(2.0)
    y = tape.mul(x, x)
    assert float(y.value) == pytest.approx(4.0)
    assert len(tape) == 0
