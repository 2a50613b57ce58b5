#
# autodiff.py - reverse-mode automatic differentiation on an eager tape
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
"""
Reverse-mode automatic differentiation over complex scalars and matrices.

Every operation is evaluated immediately (eager) and appended to a Tape, so the
shape of the graph is whatever the forward code decided at run time. A quantum
trajectory picks a jump or no-jump branch from random numbers at every step;
each trajectory simply gets its own tape.

Adjoint convention. Costs are real. For a complex intermediate z the stored
adjoint is dC/dRe(z) + i dC/dIm(z). With this convention

    MATMUL   Y = A B      A_bar = Y_bar B^H,   B_bar = A^H Y_bar
    TRANSPOSE Y = A^T     A_bar = Y_bar^T
    CONJUGATE Y = A*      A_bar = conj(Y_bar)

Published tables sometimes print the MATMUL rule as A_bar = B Y_bar and the
TRANSPOSE/CONJUGATE rules as the identity. Those forms fail finite-difference
checks; the rules above are the ones implemented and tested.

Adjoints flowing into a node whose value is real keep only their real part,
so complex intermediates never leak imaginary parts into real leaves.
"""


import logging
import numpy as np
from traj_errors import UnknownOpError, ShapeMismatchError, SingularOpError, NonScalarCostError


logger = logging.getLogger(__name__)


class Node:
    """
    One recorded operation. Inputs are other Nodes of the same tape or constants.
    """
    __slots__ = ("id", "op", "inputs", "params", "value", "name")

    def __init__(self, node_id, op, inputs, params, value, name=None):
        self.id = node_id
        self.op = op
        self.inputs = inputs
        self.params = params
        self.value = value
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_real(self):
        return not np.iscomplexobj(self.value)

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op}, shape={self.value.shape})"


class _Op:
    """
    A registered operation: forward(values, params) and the vector-Jacobian
    product vjp(g, values, out, params) returning one adjoint (or None) per input.
    """
    def __init__(self, name, forward, vjp):
        self.name = name
        self.forward = forward
        self.vjp = vjp


def _unbroadcast(g, shape):
    """
    Sum an adjoint over the axes that broadcasting added or stretched
    """
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(*values):
    try:
        return np.broadcast_shapes(*[np.shape(v) for v in values])
    except ValueError:
        raise ShapeMismatchError(f"shapes {[np.shape(v) for v in values]} do not broadcast")


def _fwd_add(v, p):
    _broadcast_shape(v[0], v[1])
    return np.add(v[0], v[1])


def _fwd_sub(v, p):
    _broadcast_shape(v[0], v[1])
    return np.subtract(v[0], v[1])


def _fwd_mul(v, p):
    _broadcast_shape(v[0], v[1])
    return np.multiply(v[0], v[1])


def _fwd_div(v, p):
    _broadcast_shape(v[0], v[1])
    if np.any(np.asarray(v[1]) == 0):
        raise SingularOpError("division by zero")
    return np.divide(v[0], v[1])


def _fwd_scale(v, p):
    if np.ndim(v[0]) != 0:
        raise ShapeMismatchError("SCALE needs a scalar factor")
    return np.multiply(v[0], v[1])


def _fwd_matmul(v, p):
    a, b = v
    if np.ndim(a) != 2 or np.ndim(b) != 2:
        raise ShapeMismatchError("MATMUL operands must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"MATMUL of {a.shape} and {b.shape}")
    return a @ b


def _fwd_trace(v, p):
    a = v[0]
    if np.ndim(a) != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatchError("TRACE needs a square matrix")
    return np.trace(a)


def _fwd_inner(v, p):
    u, w = v
    if np.shape(u) != np.shape(w):
        raise ShapeMismatchError(f"INNER of {np.shape(u)} and {np.shape(w)}")
    return np.asarray(np.vdot(u, w))


def _fwd_norm(v, p):
    return np.asarray(np.sqrt(np.vdot(v[0], v[0]).real))


def _fwd_complex(v, p):
    re, im = np.asarray(v[0], dtype=float), np.asarray(v[1], dtype=float)
    if re.shape != im.shape:
        raise ShapeMismatchError("COMPLEX parts differ in shape")
    out = np.empty(re.shape, dtype=np.complex128)
    out.real = re
    out.imag = im
    return out


def _fwd_stack(v, p):
    try:
        return np.stack(v, axis=p.get("axis", 0))
    except ValueError:
        raise ShapeMismatchError("STACK operands differ in shape")


def _vjp_stack(g, v, out, p):
    axis = p.get("axis", 0)
    return [np.take(g, i, axis=axis) for i in range(len(v))]


def _vjp_slice(g, v, out, p):
    x = np.zeros(np.shape(v[0]), dtype=np.result_type(g, v[0]))
    np.add.at(x, p["index"], g)
    return [x]


def _vjp_div(g, v, out, p):
    return [_unbroadcast(g / np.conj(v[1]), np.shape(v[0])),
            _unbroadcast(-g * np.conj(out / v[1]), np.shape(v[1]))]


def _vjp_norm(g, v, out, p):
    if out == 0:
        return [np.zeros_like(v[0])]
    return [g * v[0] / out]


_OPS = {
    "ADD": _Op("ADD", _fwd_add,
               lambda g, v, out, p: [_unbroadcast(g, np.shape(v[0])), _unbroadcast(g, np.shape(v[1]))]),
    "SUB": _Op("SUB", _fwd_sub,
               lambda g, v, out, p: [_unbroadcast(g, np.shape(v[0])), _unbroadcast(-g, np.shape(v[1]))]),
    "MUL": _Op("MUL", _fwd_mul,
               lambda g, v, out, p: [_unbroadcast(g * np.conj(v[1]), np.shape(v[0])),
                                     _unbroadcast(g * np.conj(v[0]), np.shape(v[1]))]),
    "DIV": _Op("DIV", _fwd_div, _vjp_div),
    "SCALE": _Op("SCALE", _fwd_scale,
                 lambda g, v, out, p: [np.asarray(np.sum(np.conj(v[1]) * g)), np.conj(v[0]) * g]),
    "EXP": _Op("EXP", lambda v, p: np.exp(v[0]),
               lambda g, v, out, p: [np.conj(out) * g]),
    "MATMUL": _Op("MATMUL", _fwd_matmul,
                  lambda g, v, out, p: [g @ np.conj(v[1]).T, np.conj(v[0]).T @ g]),
    "TRACE": _Op("TRACE", _fwd_trace,
                 lambda g, v, out, p: [g * np.eye(np.shape(v[0])[0])]),
    "TRANSPOSE": _Op("TRANSPOSE", lambda v, p: np.transpose(v[0]),
                     lambda g, v, out, p: [np.transpose(g)]),
    "CONJUGATE": _Op("CONJUGATE", lambda v, p: np.conj(v[0]),
                     lambda g, v, out, p: [np.conj(g)]),
    "INNER": _Op("INNER", _fwd_inner,
                 lambda g, v, out, p: [np.conj(g) * v[1], g * v[0]]),
    "ABS2": _Op("ABS2", lambda v, p: np.abs(v[0]) ** 2,
                lambda g, v, out, p: [2.0 * g * v[0]]),
    "NORM": _Op("NORM", _fwd_norm, _vjp_norm),
    "REAL": _Op("REAL", lambda v, p: np.real(v[0]).copy(),
                lambda g, v, out, p: [np.asarray(g)]),
    "IMAG": _Op("IMAG", lambda v, p: np.imag(v[0]).copy(),
                lambda g, v, out, p: [1j * np.asarray(g)]),
    "SUM": _Op("SUM", lambda v, p: np.asarray(np.sum(v[0])),
               lambda g, v, out, p: [g * np.ones(np.shape(v[0]))]),
    "SLICE": _Op("SLICE", lambda v, p: np.array(np.asarray(v[0])[p["index"]]), _vjp_slice),
    "STACK": _Op("STACK", _fwd_stack, _vjp_stack),
    "COMPLEX": _Op("COMPLEX", _fwd_complex,
                   lambda g, v, out, p: [np.real(g), np.imag(g)]),
}

OP_KINDS = tuple(_OPS.keys())
LEAF = "LEAF"


class Tape:
    """
    Append-only record of eagerly evaluated operations. One tape per trajectory.
    A tape built with record=False evaluates the same arithmetic without
    keeping anything (forward-only simulation).
    """
    def __init__(self, record=True):
        self._record = record
        self._nodes = []
        self._leaf_ids = []

    @property
    def recording(self):
        return self._record

    @property
    def nodes(self):
        return self._nodes

    @property
    def leaf_ids(self):
        return list(self._leaf_ids)

    def __len__(self):
        return len(self._nodes)

    def _append(self, op, inputs, params, value, name=None):
        if not self._record:
            return Node(-1, op, (), params, value, name)
        node = Node(len(self._nodes), op, inputs, params, value, name)
        self._nodes.append(node)
        return node

    def leaf(self, value, name=None):
        """
        Declare a differentiable input
        :param value: scalar or array (real, or complex for a single complex leaf)
        :param name: Optional label
        :return: Node
        """
        value = np.array(value)
        value.setflags(write=False)
        node = self._append(LEAF, (), {}, value, name)
        if self._record:
            self._leaf_ids.append(node.id)
        return node

    def complex_leaf(self, value, name=None):
        """
        A complex input represented by two real leaves (real and imaginary part)
        :param value: complex scalar or array
        :param name: Optional label
        :return: (complex node, real-part leaf, imaginary-part leaf)
        """
        value = np.asarray(value, dtype=np.complex128)
        re = self.leaf(value.real.copy(), name=None if name is None else f"{name}.re")
        im = self.leaf(value.imag.copy(), name=None if name is None else f"{name}.im")
        return self.record("COMPLEX", re, im), re, im

    def record(self, op_kind, *inputs, **params):
        """
        Evaluate an operation now and append it to the tape
        :param op_kind: One of OP_KINDS
        :param inputs: Nodes of this tape or constants
        :param params: Op parameters (SLICE index, STACK axis)
        :return: Node
        """
        op = _OPS.get(op_kind)
        if op is None:
            raise UnknownOpError(f"operation {op_kind} is not registered")
        values = [x.value if isinstance(x, Node) else np.asarray(x) for x in inputs]
        value = np.asarray(op.forward(values, params))
        return self._append(op_kind, tuple(inputs), params, value)

    # Convenience wrappers
    def add(self, a, b):
        return self.record("ADD", a, b)

    def sub(self, a, b):
        return self.record("SUB", a, b)

    def mul(self, a, b):
        return self.record("MUL", a, b)

    def div(self, a, b):
        return self.record("DIV", a, b)

    def scale(self, a, x):
        return self.record("SCALE", a, x)

    def exp(self, x):
        return self.record("EXP", x)

    def matmul(self, a, b):
        return self.record("MATMUL", a, b)

    def trace(self, a):
        return self.record("TRACE", a)

    def transpose(self, a):
        return self.record("TRANSPOSE", a)

    def conjugate(self, a):
        return self.record("CONJUGATE", a)

    def inner(self, u, v):
        return self.record("INNER", u, v)

    def abs2(self, x):
        return self.record("ABS2", x)

    def norm(self, x):
        return self.record("NORM", x)

    def real(self, x):
        return self.record("REAL", x)

    def imag(self, x):
        return self.record("IMAG", x)

    def sum(self, x):
        return self.record("SUM", x)

    def slice(self, x, index):
        return self.record("SLICE", x, index=index)

    def stack(self, xs, axis=0):
        return self.record("STACK", *xs, axis=axis)

    def replay(self, leaf_values=None):
        """
        Re-evaluate the recorded graph with some leaves replaced. Branch choices
        made during recording are kept. Cached values are not touched.
        :param leaf_values: {leaf id: new value}
        :return: list of node values in tape order
        """
        leaf_values = leaf_values or {}
        values = []
        for node in self._nodes:
            if node.op == LEAF:
                values.append(np.asarray(leaf_values.get(node.id, node.value)))
            else:
                args = [values[x.id] if isinstance(x, Node) else np.asarray(x) for x in node.inputs]
                values.append(np.asarray(_OPS[node.op].forward(args, node.params)))
        return values


def record(tape, op_kind, *inputs, **params):
    """
    Module-level form of Tape.record
    """
    return tape.record(op_kind, *inputs, **params)


def _check_cost_node(tape, cost_node):
    if not tape.recording or cost_node.id < 0 or cost_node.id >= len(tape.nodes) \
            or tape.nodes[cost_node.id] is not cost_node:
        raise NonScalarCostError("cost node does not belong to this tape")
    value = cost_node.value
    if value.size != 1 or np.iscomplexobj(value):
        raise NonScalarCostError(f"cost must be a real scalar, got {value.dtype} of shape {value.shape}")


def backward(tape, cost_node, seed=1.0):
    """
    Reverse sweep from cost_node, summing the contributions of all paths
    :param tape: Tape
    :param cost_node: Node holding a real scalar
    :param seed: dC/d(cost_node), 1 by default
    :return: {leaf id: adjoint}, zero for leaves without a path
    """
    _check_cost_node(tape, cost_node)
    nodes = tape.nodes
    adjoints = [None] * (cost_node.id + 1)
    adjoints[cost_node.id] = np.asarray(float(seed))

    for node_id in range(cost_node.id, -1, -1):
        g = adjoints[node_id]
        node = nodes[node_id]
        if g is None or node.op == LEAF:
            continue
        values = [x.value if isinstance(x, Node) else np.asarray(x) for x in node.inputs]
        input_adjoints = _OPS[node.op].vjp(g, values, node.value, node.params)
        for x, gx in zip(node.inputs, input_adjoints):
            if not isinstance(x, Node) or gx is None:
                continue
            gx = np.asarray(gx)
            if x.is_real:
                gx = np.real(gx)
            gx = gx.reshape(x.value.shape)
            if adjoints[x.id] is None:
                adjoints[x.id] = gx
            else:
                adjoints[x.id] = adjoints[x.id] + gx

    gradients = {}
    for leaf_id in tape.leaf_ids:
        leaf = nodes[leaf_id]
        g = adjoints[leaf_id] if leaf_id < len(adjoints) else None
        if g is None:
            g = np.zeros(leaf.value.shape, dtype=leaf.value.dtype)
        gradients[leaf_id] = np.array(g)
    return gradients


def gradient_check(tape, cost_node, step=1e-6):
    """
    Compare backward() with central finite differences on every leaf component.
    Complex leaves are perturbed along the real and imaginary axes separately.
    :param tape: Tape
    :param cost_node: Node holding a real scalar
    :param step: Finite-difference step (> 0)
    :return: max |analytic - numeric| / max(|numeric|, |analytic|)
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    gradients = backward(tape, cost_node)

    def cost_at(leaf_id, value):
        return float(np.real(tape.replay({leaf_id: value})[cost_node.id]))

    max_error = 0.0
    max_scale = 0.0
    for leaf_id, g in gradients.items():
        base = tape.nodes[leaf_id].value
        directions = [1.0, 1j] if np.iscomplexobj(base) else [1.0]
        for index in np.ndindex(base.shape):
            for direction in directions:
                plus = np.array(base)
                minus = np.array(base)
                plus[index] += step * direction
                minus[index] -= step * direction
                numeric = (cost_at(leaf_id, plus) - cost_at(leaf_id, minus)) / (2.0 * step)
                component = g[index]
                analytic = float(np.real(component)) if direction == 1.0 else float(np.imag(component))
                max_error = max(max_error, abs(analytic - numeric))
                max_scale = max(max_scale, abs(numeric), abs(analytic))
    if max_scale == 0.0:
        return max_error
    relative = max_error / max_scale
    logger.debug("gradient check: max abs error %.3e, relative %.3e", max_error, relative)
    return relative
