#
# quantum_model.py - open quantum systems, control pulses and per-step propagation
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Units: angular frequencies in rad/ns, rates in 1/ns, times in ns, hbar = 1.
# Step j (1-based) covers the interval [(j - 1) dt, j dt).
#


import math
import logging
import numpy as np
import scipy.sparse as sp
from linalg_core import ComplexMatrix, StateBatch, matvec_exp_info, spmv
from units import to_internal, KIND_FREQUENCY, KIND_RATE, KIND_TIME
from traj_errors import DimensionMismatchError, StepIndexError, MissingParameterError, \
    InvalidParameterError, ConfigError, ShapeMismatchError


logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12


def destroy(n, sparse=False):
    """
    Truncated annihilation operator
    :param n: Number of levels
    :param sparse: CSR storage when True
    :return: ComplexMatrix
    """
    a = np.diag(np.sqrt(np.arange(1, n, dtype=float)), k=1)
    return ComplexMatrix(a, sparse=sparse)


def number(n, sparse=False):
    return ComplexMatrix(np.diag(np.arange(n, dtype=float)), sparse=sparse)


def basis(n, k):
    """
    :return: The k-th computational basis vector of dimension n
    """
    if not 0 <= k < n:
        raise StepIndexError(f"basis state {k} outside 0..{n - 1}")
    v = np.zeros(n, dtype=np.complex128)
    v[k] = 1.0
    return v


def transition(n, i, j, sparse=False):
    """
    |i><j| on an n-level space
    """
    m = np.zeros((n, n))
    m[i, j] = 1.0
    return ComplexMatrix(m, sparse=sparse)


def tensor(a, b):
    """
    Kronecker product of two ComplexMatrix values, sparse if either is sparse
    """
    if a.is_sparse or b.is_sparse:
        return ComplexMatrix(sp.kron(sp.csr_matrix(a.raw), sp.csr_matrix(b.raw), format="csr"), sparse=True)
    return ComplexMatrix(np.kron(a.raw, b.raw))


class OpenSystem:
    """
    An open quantum system: drift Hamiltonian H0, control Hamiltonians H_k and
    decay channels (c_l, gamma_l). A control may carry a carrier frequency, in
    which case its Hamiltonian at time t is cos(w t) H_k + sin(w t) Q_k.
    """
    def __init__(self, h0, controls, channels=None, carriers=None, name="custom", metadata=None):
        """
        Constructor
        :param h0: Drift Hamiltonian (ComplexMatrix or array)
        :param controls: List of control Hamiltonians
        :param channels: List of (jump operator, rate >= 0)
        :param carriers: None, or a list with one entry per control: None or (omega, quadrature operator)
        :param name: Family name used in logs and result metadata
        :param metadata: Free-form dict (levels, physical parameters, named operators)
        """
        self._h0 = h0 if isinstance(h0, ComplexMatrix) else ComplexMatrix(h0)
        if not self._h0.is_square:
            raise DimensionMismatchError(f"H0 of shape {self._h0.shape} is not square")
        d = self._h0.rows
        self._controls = [c if isinstance(c, ComplexMatrix) else ComplexMatrix(c) for c in controls]
        self._channels = []
        for op, rate in (channels or []):
            op = op if isinstance(op, ComplexMatrix) else ComplexMatrix(op)
            rate = float(rate)
            if not math.isfinite(rate) or rate < 0:
                raise InvalidParameterError(f"channel rate {rate} must be finite and >= 0")
            self._channels.append((op, rate))
        if carriers is None:
            carriers = [None] * len(self._controls)
        if len(carriers) != len(self._controls):
            raise DimensionMismatchError("one carrier entry per control is required")
        self._carriers = []
        for carrier in carriers:
            if carrier is None:
                self._carriers.append(None)
            else:
                omega, quadrature = carrier
                q = quadrature if isinstance(quadrature, ComplexMatrix) else ComplexMatrix(quadrature)
                self._carriers.append((float(omega), q))

        for label, m in [("H0", self._h0)] + [(f"H{k + 1}", c) for k, c in enumerate(self._controls)] \
                + [(f"Q{k + 1}", c[1]) for k, c in enumerate(self._carriers) if c is not None]:
            if m.shape != (d, d):
                raise DimensionMismatchError(f"{label} has shape {m.shape}, expected {(d, d)}")
            if not m.is_hermitian(HERMITIAN_TOL):
                raise InvalidParameterError(f"{label} is not Hermitian (deviation {m.hermiticity_error():.2e})")
        for l, (op, _) in enumerate(self._channels):
            if op.shape != (d, d):
                raise DimensionMismatchError(f"channel {l} has shape {op.shape}, expected {(d, d)}")

        # every operator shares the storage kind of H0
        def same_kind(m):
            return m.to_sparse() if self._h0.is_sparse else m.to_dense()
        self._controls = [same_kind(c) for c in self._controls]
        self._channels = [(same_kind(op), rate) for op, rate in self._channels]
        self._carriers = [None if c is None else (c[0], same_kind(c[1])) for c in self._carriers]

        self._name = name
        self._metadata = dict(metadata or {})
        self._decay = self._build_decay()
        self._drift_generators = {}

    def _build_decay(self):
        decay = ComplexMatrix.zeros(self.dim, sparse=self._h0.is_sparse)
        for op, rate in self._channels:
            if rate > 0:
                decay = decay + (op.dagger() @ op).scale(rate)
        return decay

    @property
    def dim(self):
        return self._h0.rows

    @property
    def name(self):
        return self._name

    @property
    def metadata(self):
        return self._metadata

    @property
    def h0(self):
        return self._h0

    @property
    def controls(self):
        return list(self._controls)

    @property
    def channels(self):
        return list(self._channels)

    @property
    def carriers(self):
        return list(self._carriers)

    @property
    def n_controls(self):
        return len(self._controls)

    @property
    def n_channels(self):
        return len(self._channels)

    @property
    def is_sparse(self):
        return self._h0.is_sparse

    @property
    def decay_operator(self):
        """
        sum_l gamma_l c_l^dagger c_l
        """
        return self._decay

    def operator(self, name):
        """
        A named operator stored by a factory (e.g. "a", "b" for the readout system)
        """
        ops = self._metadata.get("operators", {})
        if name not in ops:
            raise MissingParameterError(f"system {self._name} has no operator '{name}'")
        return ops[name]

    def without_channels(self):
        return OpenSystem(self._h0, self._controls, [], self._carriers, self._name, self._metadata)

    def with_channels(self, channels):
        return OpenSystem(self._h0, self._controls, channels, self._carriers, self._name, self._metadata)

    def control_at_step(self, k, j, dt):
        """
        The Hamiltonian multiplying u_kj
        :param k: Control index (0-based)
        :param j: Step index (1-based)
        :param dt: Step duration
        :return: ComplexMatrix
        """
        carrier = self._carriers[k]
        if carrier is None:
            return self._controls[k]
        omega, quadrature = carrier
        t = (j - 1) * dt
        return self._controls[k].scale(math.cos(omega * t)) + quadrature.scale(math.sin(omega * t))

    def drift_generator(self, dt):
        """
        -i dt (H0 - i/2 D) as a numpy array (dense) or csr_matrix (sparse), cached per dt
        """
        if dt not in self._drift_generators:
            drift = self._h0.raw - 0.5j * self._decay.raw
            self._drift_generators[dt] = (-1j * dt) * drift
        return self._drift_generators[dt]

    def to_dict(self):
        """
        Matrices as nested [re, im] lists, for explicit-matrix configs and result metadata
        """
        def pack(m):
            a = m.toarray()
            return {"re": a.real.tolist(), "im": a.imag.tolist()}
        return {
            "family": "explicit",
            "h0": pack(self._h0),
            "controls": [pack(c) for c in self._controls],
            "channels": [{"op": pack(op), "rate": rate} for op, rate in self._channels],
        }

    def __repr__(self):
        return f"OpenSystem({self._name}, d={self.dim}, K={self.n_controls}, channels={self.n_channels})"


class ControlPulse:
    """
    Piecewise-constant amplitudes u[k, j] for K controls over N steps of length dt
    """
    def __init__(self, u, dt):
        """
        Constructor
        :param u: K x N real array (a 1-D array is one control)
        :param dt: Step duration in ns
        """
        a = np.array(u, dtype=float)
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2 or a.shape[1] < 1:
            raise ShapeMismatchError(f"pulse amplitudes need shape (K, N >= 1), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidParameterError("pulse amplitudes must be finite")
        dt = float(dt)
        if not dt > 0:
            raise InvalidParameterError(f"dt must be > 0, got {dt}")
        a.setflags(write=False)
        self._u = a
        self._dt = dt

    @classmethod
    def zeros(cls, n_controls, n_steps, dt):
        return cls(np.zeros((n_controls, n_steps)), dt)

    @property
    def u(self):
        return self._u

    @property
    def dt(self):
        return self._dt

    @property
    def n_controls(self):
        return self._u.shape[0]

    @property
    def n_steps(self):
        return self._u.shape[1]

    @property
    def duration(self):
        return self._dt * self.n_steps

    @property
    def times(self):
        """
        Start time of every step
        """
        return np.arange(self.n_steps) * self._dt

    def with_amplitudes(self, u):
        return ControlPulse(u, self._dt)

    def clipped(self, bound):
        """
        :param bound: Amplitude bound, None for no clipping
        :return: A pulse with |u| <= bound
        """
        if bound is None:
            return self
        return ControlPulse(np.clip(self._u, -bound, bound), self._dt)

    def to_dict(self):
        return {"dt": self._dt, "u": self._u.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["u"], d["dt"])

    def __repr__(self):
        return f"ControlPulse(K={self.n_controls}, N={self.n_steps}, dt={self._dt})"


def check_step(sys, pulse, j):
    if pulse.n_controls != sys.n_controls:
        raise DimensionMismatchError(f"pulse has {pulse.n_controls} controls, system has {sys.n_controls}")
    if not 1 <= j <= pulse.n_steps:
        raise StepIndexError(f"step {j} outside 1..{pulse.n_steps}")


def hamiltonian_at_step(sys, pulse, j):
    """
    H_j = H0 + sum_k u_kj H_k(t_j)
    :param sys: OpenSystem
    :param pulse: ControlPulse
    :param j: Step index, 1 <= j <= N
    :return: ComplexMatrix (Hermitian)
    """
    check_step(sys, pulse, j)
    h = sys.h0
    for k in range(sys.n_controls):
        h = h + sys.control_at_step(k, j, pulse.dt).scale(pulse.u[k, j - 1])
    return h


def effective_hamiltonian(sys, pulse, j):
    """
    H_j - (i/2) sum_l gamma_l c_l^dagger c_l
    :return: ComplexMatrix
    """
    return hamiltonian_at_step(sys, pulse, j) - sys.decay_operator.scale(0.5j)


def step_generator(sys, pulse, j):
    """
    -i dt H_eff at step j. The arithmetic order matches the taped propagation in
    trajectory_engine so both give the same generator values.
    :return: ComplexMatrix with the storage kind of the system
    """
    check_step(sys, pulse, j)
    dt = pulse.dt
    a = sys.drift_generator(dt)
    for k in range(sys.n_controls):
        a = a + (pulse.u[k, j - 1] * (-1j * dt)) * sys.control_at_step(k, j, dt).raw
    return ComplexMatrix(a, sparse=sys.is_sparse)


def step_propagate(sys, pulse, j, V, event=None, tol=None, max_terms=None, fixed_terms=None):
    """
    One non-unitary step. No event: exp(-i H_eff dt) V. Event l: c_l V.
    The output is not normalised.
    :param sys: OpenSystem
    :param pulse: ControlPulse
    :param j: Step index (1-based)
    :param V: StateBatch or state vector
    :param event: None or a channel index
    :param fixed_terms: Force the Taylor term count (see matvec_exp_info)
    :return: StateBatch
    """
    if event is None:
        return matvec_exp_info(step_generator(sys, pulse, j), V, tol=tol, max_terms=max_terms,
                               fixed_terms=fixed_terms)[0]
    check_step(sys, pulse, j)
    if not 0 <= event < sys.n_channels:
        raise StepIndexError(f"channel {event} outside 0..{sys.n_channels - 1}")
    return spmv(sys.channels[event][0], V)


# Factory defaults in internal units
TRANSMON_DEFAULTS = {
    "levels": 4,
    "omega_ge": to_internal({"value": 3.9, "unit": "GHz"}, KIND_FREQUENCY),
    "alpha": to_internal({"value": -225.0, "unit": "MHz"}, KIND_FREQUENCY),
    "t1": None,
}

LAMBDA_DEFAULTS = {
    "omega1": 0.0,
    "omega2": to_internal({"value": 5.0, "unit": "GHz"}, KIND_FREQUENCY),
    "omega3": to_internal({"value": 1.8, "unit": "GHz"}, KIND_FREQUENCY),
    "alpha": 1.0,
    "t1": to_internal({"value": 20.0, "unit": "ns"}, KIND_TIME),
    # fraction of the |2> decay that ends in |1>, the rest goes to |3>
    "branching": 0.5,
}

READOUT_DEFAULTS = {
    "resonator_levels": 15,
    "qubit_levels": 3,
    "omega_q": to_internal({"value": 4.6, "unit": "GHz"}, KIND_FREQUENCY),
    "omega_r": to_internal({"value": 5.0, "unit": "GHz"}, KIND_FREQUENCY),
    "omega_d": to_internal({"value": 5.0, "unit": "GHz"}, KIND_FREQUENCY),
    "g": to_internal({"value": 50.0, "unit": "MHz"}, KIND_FREQUENCY),
    "alpha": to_internal({"value": -225.0, "unit": "MHz"}, KIND_FREQUENCY),
    "kappa": to_internal({"value": 50.0, "unit": "Ms^-1"}, KIND_RATE),
    "gamma": to_internal({"value": 1.0, "unit": "Ms^-1"}, KIND_RATE),
    "frame": "rotating",
}
READOUT_FULL_SCALE_LEVELS = 30

FAMILY_TRANSMON = "transmon"
FAMILY_LAMBDA = "lambda"
FAMILY_READOUT = "jc-readout"
FAMILIES = (FAMILY_TRANSMON, FAMILY_LAMBDA, FAMILY_READOUT)


def _merged(defaults, params, family):
    merged = dict(defaults)
    for key, value in (params or {}).items():
        if key not in defaults:
            raise ConfigError(f"unknown parameter '{key}' for system family {family}", field=f"system.params.{key}")
        merged[key] = value
    return merged


def _non_negative(params, *keys):
    for key in keys:
        value = params[key]
        if value is None:
            raise MissingParameterError(f"parameter '{key}' is required")
        if value < 0:
            raise InvalidParameterError(f"parameter '{key}' must be >= 0, got {value}")


def _build_transmon(params):
    levels = int(params["levels"])
    if levels < 2:
        raise InvalidParameterError("a transmon needs at least 2 levels")
    b = destroy(levels)
    n = number(levels)
    n_arr = n.raw
    h0 = ComplexMatrix(params["omega_ge"] * n_arr + 0.5 * params["alpha"] * n_arr @ (n_arr - np.eye(levels)))
    channels = []
    t1 = params["t1"]
    if t1 is not None:
        if t1 <= 0:
            raise InvalidParameterError(f"t1 must be > 0, got {t1}")
        channels.append((b, 1.0 / t1))
    return OpenSystem(h0, [b + b.dagger(), n], channels, name=FAMILY_TRANSMON,
                      metadata={"levels": levels, "params": params, "operators": {"b": b, "n": n}})


def _build_lambda(params):
    _non_negative(params, "t1", "branching")
    if params["t1"] <= 0:
        raise InvalidParameterError(f"t1 must be > 0, got {params['t1']}")
    if params["branching"] > 1:
        raise InvalidParameterError("branching must lie in [0, 1]")
    h0 = ComplexMatrix(np.diag([params["omega1"], params["omega2"], params["omega3"]]))
    h12 = transition(3, 0, 1) + transition(3, 1, 0)
    h23 = transition(3, 1, 2) + transition(3, 2, 1)
    control = h12 + h23.scale(params["alpha"])
    gamma = 1.0 / params["t1"]
    channels = [(transition(3, 0, 1), params["branching"] * gamma),
                (transition(3, 2, 1), (1.0 - params["branching"]) * gamma)]
    return OpenSystem(h0, [control], channels, name=FAMILY_LAMBDA,
                      metadata={"levels": 3, "params": params})


def _build_readout(params):
    _non_negative(params, "kappa", "gamma", "g")
    nr = int(params["resonator_levels"])
    nq = int(params["qubit_levels"])
    if nr < 2 or nq < 2:
        raise InvalidParameterError("readout system needs at least 2 resonator and 2 qubit levels")
    frame = params["frame"]
    if frame not in ("rotating", "lab"):
        raise ConfigError(f"unknown frame '{frame}'", field="system.params.frame")

    eye_r = ComplexMatrix.identity(nr, sparse=True)
    eye_q = ComplexMatrix.identity(nq, sparse=True)
    a = tensor(destroy(nr, sparse=True), eye_q)
    b = tensor(eye_r, destroy(nq, sparse=True))
    n_a = a.dagger() @ a
    n_b = b.dagger() @ b
    shift = params["omega_d"] if frame == "rotating" else 0.0
    anharm = n_b @ (n_b - ComplexMatrix.identity(nr * nq, sparse=True))
    h0 = n_a.scale(params["omega_r"] - shift) + n_b.scale(params["omega_q"] - shift) \
        + anharm.scale(0.5 * params["alpha"]) + (a.dagger() @ b + a @ b.dagger()).scale(params["g"])
    drive = a + a.dagger()
    carriers = None
    if frame == "lab":
        carriers = [(params["omega_d"], (a - a.dagger()).scale(1j))]
    channels = [(a, params["kappa"]), (b, params["gamma"])]
    delta = params["omega_q"] - params["omega_r"]
    n_crit = delta ** 2 / (4.0 * params["g"] ** 2) if params["g"] > 0 else math.inf
    return OpenSystem(h0, [drive], channels, carriers=carriers, name=FAMILY_READOUT,
                      metadata={"resonator_levels": nr, "qubit_levels": nq, "frame": frame,
                                "n_crit": n_crit, "params": params,
                                "operators": {"a": a, "b": b, "n_a": n_a, "n_b": n_b}})


def build_system(name, params=None, full_scale=False):
    """
    Factory for the three showcase families
    :param name: transmon, lambda or jc-readout
    :param params: Parameter overrides in internal units
    :param full_scale: Readout only, use 30 resonator levels unless given explicitly
    :return: OpenSystem
    """
    if name == FAMILY_TRANSMON:
        return _build_transmon(_merged(TRANSMON_DEFAULTS, params, name))
    if name == FAMILY_LAMBDA:
        return _build_lambda(_merged(LAMBDA_DEFAULTS, params, name))
    if name == FAMILY_READOUT:
        defaults = dict(READOUT_DEFAULTS)
        if full_scale:
            defaults["resonator_levels"] = READOUT_FULL_SCALE_LEVELS
        system = _build_readout(_merged(defaults, params, name))
        logger.debug("readout system %dx%d levels, n_crit %.2f", system.metadata["resonator_levels"],
                     system.metadata["qubit_levels"], system.metadata["n_crit"])
        return system
    raise ConfigError(f"unknown system family '{name}', expected one of {', '.join(FAMILIES)}",
                      field="system.family")


def readout_state(sys, qubit_level):
    """
    |0>_resonator |qubit_level>_qubit for the readout family
    """
    nr = sys.metadata["resonator_levels"]
    nq = sys.metadata["qubit_levels"]
    return np.kron(basis(nr, 0), basis(nq, qubit_level))


def as_state(v, dim):
    """
    Validate a state vector and return it as a normalised complex d-vector
    """
    a = np.asarray(v.vector() if isinstance(v, StateBatch) else v, dtype=np.complex128).reshape(-1)
    if a.size != dim:
        raise DimensionMismatchError(f"state of dimension {a.size}, system dimension {dim}")
    n = np.linalg.norm(a)
    if n == 0:
        raise InvalidParameterError("zero state vector")
    return a / n
