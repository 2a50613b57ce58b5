#
# oracles.py - dense density-matrix references used for validation
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Vectorisation is column stacking: vec(A X B) = (B^T kron A) vec(X).
# Nothing in here is used by the optimisation loop.
#


import logging
import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from configuration import Configuration
from quantum_model import hamiltonian_at_step, as_state, check_step
from trajectory_engine import JumpRecord, TrajectoryResult
from traj_errors import CptpViolationError, ChannelsPresentError, DimensionMismatchError, \
    InvalidParameterError, MissingStatesError


logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
EIGENVALUE_FLOOR = -1e-9


def _vec(rho):
    return np.asarray(rho).reshape(-1, order="F")


def _unvec(v, d):
    return np.asarray(v).reshape((d, d), order="F")


def _check_oracle_size(dim, max_dim=None):
    max_dim = Configuration.get(Configuration.CFG_ORACLE_MAX_DIM) if max_dim is None else max_dim
    if dim > max_dim:
        raise InvalidParameterError(f"dense oracle refused: dimension {dim} exceeds the cap {max_dim}")


class DensityMatrix:
    """
    A validated d x d density matrix
    """
    def __init__(self, rho, check=True):
        a = np.array(rho, dtype=np.complex128)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatchError(f"density matrix of shape {a.shape}")
        a.setflags(write=False)
        self._rho = a
        if check:
            self.check()

    @classmethod
    def from_state(cls, psi):
        v = np.asarray(psi, dtype=np.complex128).reshape(-1)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @property
    def rho(self):
        return self._rho

    @property
    def dim(self):
        return self._rho.shape[0]

    def hermiticity_error(self):
        return float(np.max(np.abs(self._rho - self._rho.conj().T)))

    def trace(self):
        return complex(np.trace(self._rho))

    def purity(self):
        return float(np.real(np.trace(self._rho @ self._rho)))

    def expectation(self, A):
        a = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
        return float(np.real(np.trace(a @ self._rho)))

    def population(self, level):
        return float(np.real(self._rho[level, level]))

    def check(self):
        """
        Raise CptpViolationError when Hermiticity, unit trace or positivity fail
        """
        herm = self.hermiticity_error()
        if herm > HERMITIAN_TOL:
            raise CptpViolationError(f"density matrix not Hermitian (deviation {herm:.2e})")
        trace = self.trace()
        if abs(trace - 1.0) > TRACE_TOL:
            raise CptpViolationError(f"density matrix trace {trace.real:.12f}")
        smallest = float(np.min(np.linalg.eigvalsh(0.5 * (self._rho + self._rho.conj().T))))
        if smallest < EIGENVALUE_FLOOR:
            raise CptpViolationError(f"density matrix has eigenvalue {smallest:.2e}")


def _dissipator(c):
    d = c.shape[0]
    eye = np.eye(d)
    cdc = c.conj().T @ c
    return np.kron(c.conj(), c) - 0.5 * np.kron(eye, cdc) - 0.5 * np.kron(cdc.T, eye)


def _commutator(h):
    d = h.shape[0]
    eye = np.eye(d)
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


class Liouvillian:
    """
    Generator G of d vec(rho)/dt = G vec(rho), split into a drift part
    (Hamiltonian H0 plus all dissipators) and one part per control,
    G_j = G0 + sum_k u_kj G_k.
    """
    def __init__(self, sys, max_dim=None):
        _check_oracle_size(sys.dim, max_dim)
        self._sys = sys
        g0 = _commutator(sys.h0.toarray())
        for op, rate in sys.channels:
            if rate > 0:
                g0 = g0 + rate * _dissipator(op.toarray())
        self._drift = g0

    @property
    def drift(self):
        return self._drift

    def control(self, k, j, dt):
        return _commutator(self._sys.control_at_step(k, j, dt).toarray())

    def at_step(self, pulse, j):
        check_step(self._sys, pulse, j)
        g = self._drift
        for k in range(self._sys.n_controls):
            g = g + pulse.u[k, j - 1] * self.control(k, j, pulse.dt)
        return g

    def propagator(self, pulse, j):
        """
        Lambda_j = exp(G_j dt), dense scaling and squaring
        """
        return scipy.linalg.expm(self.at_step(pulse, j) * pulse.dt)

    def trace_preservation_error(self, pulse=None, j=None):
        """
        max |vec(I)^dagger G|, zero for a trace-preserving generator
        """
        g = self._drift if pulse is None else self.at_step(pulse, j)
        d = self._sys.dim
        return float(np.max(np.abs(_vec(np.eye(d)).conj() @ g)))


def lindblad_propagate(sys, pulse, rho0, max_dim=None, check=True):
    """
    rho_j = Lambda_j ... Lambda_1 rho_0
    :param rho0: DensityMatrix, matrix or state vector
    :return: List of N + 1 DensityMatrix values (rho_0 .. rho_N)
    """
    if not isinstance(rho0, DensityMatrix):
        a = np.asarray(rho0)
        rho0 = DensityMatrix.from_state(a) if a.ndim == 1 else DensityMatrix(a)
    if rho0.dim != sys.dim:
        raise DimensionMismatchError(f"rho0 of dimension {rho0.dim}, system dimension {sys.dim}")
    liouvillian = Liouvillian(sys, max_dim)
    d = sys.dim
    trajectory = [rho0]
    v = _vec(rho0.rho)
    for j in range(1, pulse.n_steps + 1):
        v = liouvillian.propagator(pulse, j) @ v
        trajectory.append(DensityMatrix(_unvec(v, d), check=check))
    return trajectory


def open_grape_gradient(sys, pulse, rho0, rho_target, max_dim=None):
    """
    dC/du_kj = i dt Tr(lambda_j [H_k, rho_j]) for C = 1 - Tr[rho_T rho_N], with
    lambda_j the target propagated backwards to step j by the adjoint maps.
    First order in dt.
    :return: K x N array
    """
    rho_target = DensityMatrix.from_state(rho_target) if np.ndim(rho_target) == 1 else \
        (rho_target if isinstance(rho_target, DensityMatrix) else DensityMatrix(rho_target))
    trajectory = lindblad_propagate(sys, pulse, rho0, max_dim=max_dim)
    if rho_target.dim != sys.dim:
        raise DimensionMismatchError("target and system dimensions differ")
    liouvillian = Liouvillian(sys, max_dim)
    d = sys.dim
    n_steps = pulse.n_steps
    gradient = np.zeros((sys.n_controls, n_steps))
    lam = _vec(rho_target.rho)
    for j in range(n_steps, 0, -1):
        rho_j = trajectory[j].rho
        lam_m = _unvec(lam, d)
        for k in range(sys.n_controls):
            h = sys.control_at_step(k, j, pulse.dt).toarray()
            gradient[k, j - 1] = float(np.real(1j * pulse.dt * np.trace(lam_m @ (h @ rho_j - rho_j @ h))))
        lam = liouvillian.propagator(pulse, j).conj().T @ lam
    return gradient


def _closed_propagators(sys, pulse):
    return [scipy.linalg.expm(-1j * pulse.dt * hamiltonian_at_step(sys, pulse, j).toarray())
            for j in range(1, pulse.n_steps + 1)]


def closed_grape_gradient(sys, pulse, psi0, psi_target):
    """
    dC/du_kj = -2 dt Im[<psi_T,j|H_k|psi_j> <psi_T|psi_N>^*] for C = 1 - |<psi_T|psi_N>|^2.
    psi_j and the back-propagated target psi_T,j are recovered step by step
    from psi_N, without caching the forward states.
    :return: K x N array
    """
    if any(rate > 0 for _, rate in sys.channels):
        raise ChannelsPresentError("closed GRAPE needs a system without decay channels")
    psi = as_state(psi0, sys.dim)
    target = as_state(psi_target, sys.dim)
    propagators = _closed_propagators(sys, pulse)
    for u in propagators:
        psi = u @ psi
    overlap = np.vdot(target, psi)
    gradient = np.zeros((sys.n_controls, pulse.n_steps))
    chi = target
    for j in range(pulse.n_steps, 0, -1):
        for k in range(sys.n_controls):
            h = sys.control_at_step(k, j, pulse.dt).toarray()
            gradient[k, j - 1] = -2.0 * pulse.dt * float(np.imag(np.vdot(chi, h @ psi) * np.conj(overlap)))
        u_dag = propagators[j - 1].conj().T
        psi = u_dag @ psi
        chi = u_dag @ chi
    return gradient


def analytical_nojump_gradient(sys, pulse, psi0, psi_target, jumps=None, split=False):
    """
    Closed-form single-trajectory gradient of C = 1 - |<psi_T|psi_N>|^2:

        -2 dt F_j / F Im(f_jk(psi_T) <psi_N|psi_T>) + 2 (1 - C) dt F_j / F Im f_jk(psi_N)

    at no-jump steps and 0 at jump steps, with f_jk(phi) = <phi| M_N..M_j+1 H_k |psi_j>.
    The second (normalisation) term carries 2 (1 - C); direct differentiation of
    F_N gives this coefficient, and it is the one autodiff agrees with.
    :param jumps: JumpRecord or TrajectoryResult of the trajectory, None for no jumps
    :param split: Return the two terms separately
    :return: K x N array, or (term1, term2) when split
    """
    if isinstance(jumps, TrajectoryResult):
        if len(jumps.norms) != pulse.n_steps + 1:
            raise MissingStatesError("trajectory does not cover the pulse")
        jumps = jumps.jumps
    jumps = jumps or JumpRecord()
    channel_at = {j: l for j, l, _ in jumps.events}
    n_steps = pulse.n_steps
    dt = pulse.dt

    # forward pass with the exact step maps
    maps = []
    states = [as_state(psi0, sys.dim)]
    norms = [1.0]
    psi = states[0]
    for j in range(1, n_steps + 1):
        if j in channel_at:
            m = sys.channels[channel_at[j]][0].toarray()
        else:
            h_eff = hamiltonian_at_step(sys, pulse, j).toarray() - 0.5j * sys.decay_operator.toarray()
            m = scipy.linalg.expm(-1j * dt * h_eff)
        maps.append(m)
        psi = m @ psi
        n = np.linalg.norm(psi)
        if n == 0:
            raise InvalidParameterError(f"state annihilated at step {j}")
        norms.append(norms[-1] * n)
        psi = psi / n
        states.append(psi)

    target = as_state(psi_target, sys.dim)
    psi_n = states[-1]
    f_total = norms[-1]
    fidelity = abs(np.vdot(target, psi_n)) ** 2
    cost = 1.0 - fidelity
    overlap_conj = np.vdot(psi_n, target)

    term1 = np.zeros((sys.n_controls, n_steps))
    term2 = np.zeros((sys.n_controls, n_steps))
    chi = target
    eta = psi_n
    for j in range(n_steps, 0, -1):
        if j not in channel_at:
            scale = dt * norms[j] / f_total
            for k in range(sys.n_controls):
                h_psi = sys.control_at_step(k, j, dt).toarray() @ states[j]
                term1[k, j - 1] = -2.0 * scale * float(np.imag(np.vdot(chi, h_psi) * overlap_conj))
                term2[k, j - 1] = 2.0 * (1.0 - cost) * scale * float(np.imag(np.vdot(eta, h_psi)))
        m_dag = maps[j - 1].conj().T
        chi = m_dag @ chi
        eta = m_dag @ eta
    if split:
        return term1, term2
    return term1 + term2


def _sparse_liouvillian(sys, amplitudes):
    d = sys.dim
    eye = sp.identity(d, dtype=np.complex128, format="csr")
    h = sp.csr_matrix(sys.h0.raw, dtype=np.complex128)
    for k, u in enumerate(amplitudes):
        if sys.carriers[k] is not None:
            raise InvalidParameterError("steady state needs a time-independent generator (no carriers)")
        h = h + u * sp.csr_matrix(sys.controls[k].raw, dtype=np.complex128)
    g = -1j * (sp.kron(eye, h) - sp.kron(h.T, eye))
    for op, rate in sys.channels:
        if rate <= 0:
            continue
        c = sp.csr_matrix(op.raw, dtype=np.complex128)
        cdc = c.conj().T @ c
        g = g + rate * (sp.kron(c.conj(), c) - 0.5 * sp.kron(eye, cdc) - 0.5 * sp.kron(cdc.T, eye))
    return g.tocsr()


def steady_state(sys, amplitudes):
    """
    Steady state of the Lindblad equation for constant control amplitudes, by a
    sparse solve with the trace condition replacing one equation. Works for
    systems above the dense oracle cap.
    :param amplitudes: One constant amplitude per control
    :return: DensityMatrix
    """
    amplitudes = list(np.atleast_1d(amplitudes))
    if len(amplitudes) != sys.n_controls:
        raise DimensionMismatchError(f"{len(amplitudes)} amplitudes for {sys.n_controls} controls")
    d = sys.dim
    g = _sparse_liouvillian(sys, amplitudes).tolil()
    g[0, :] = _vec(np.eye(d)).reshape(1, -1)
    rhs = np.zeros(d * d, dtype=np.complex128)
    rhs[0] = 1.0
    v = spla.spsolve(g.tocsc(), rhs)
    rho = _unvec(v, d)
    rho = 0.5 * (rho + rho.conj().T)
    logger.debug("steady state: trace %.12f", np.real(np.trace(rho)))
    return DensityMatrix(rho / np.trace(rho), check=False)
