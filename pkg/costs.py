#
# costs.py - cost function library
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Three families of cost terms:
#   state terms (C1..C3) live on each trajectory's tape,
#   pulse terms (C4..C7) are computed once per batch on a tape of their own,
#   readout terms (Cf, Cr, Cq) are functions of ensemble means and are
#   differentiated in two passes (ensemble tape, then seeded trajectory tapes).
#


import math
import logging
import numpy as np
from autodiff import Tape, backward
from linalg_core import ComplexMatrix
from trajectory_engine import run_batch, replay_outcome, derive_seed
from quantum_model import readout_state
from traj_errors import CostParameterError, MissingParameterError, LengthMismatchError, EmptyEnsembleError


logger = logging.getLogger(__name__)

C1 = "C1"
C2 = "C2"
C3 = "C3"
C4 = "C4"
C5 = "C5"
C6 = "C6"
C7 = "C7"
CF = "Cf"
CR = "Cr"
CQ = "Cq"

STATE_KINDS = (C1, C2, C3)
PULSE_KINDS = (C4, C5, C6, C7)
READOUT_KINDS = (CF, CR, CQ)
ALL_KINDS = STATE_KINDS + PULSE_KINDS + READOUT_KINDS

# Default weights when a term gives none
DEFAULT_WEIGHTS = {C1: 1.0, C2: 1.0, C3: 1.0, C4: 1e-2, C5: 1e-2, C6: 1e-2, C7: 1e-2,
                   CF: 1.0, CR: 1.0, CQ: 1.0}

# Signal names recorded on readout trajectories
SIGNAL_QUADRATURE = "x"
SIGNAL_PHOTONS = "n_a"


def _column(v):
    return np.asarray(v, dtype=np.complex128).reshape(-1, 1)


class CostTerm:
    """
    One weighted cost term
    :param kind: C1..C7, Cf, Cr or Cq
    :param weight: alpha >= 0
    :param target: C1 target state (the problem's target when None)
    :param forbidden: C2 forbidden state
    :param operator: C3 Hermitian operator (ComplexMatrix or array)
    :param sigma: C7 Gaussian width in steps
    :param padded: C4/C5 treat the pulse as zero just outside the window
    """
    def __init__(self, kind, weight=None, target=None, forbidden=None, operator=None, sigma=None, padded=False):
        if kind not in ALL_KINDS:
            raise CostParameterError(f"unknown cost kind '{kind}', expected one of {', '.join(ALL_KINDS)}")
        try:
            weight = DEFAULT_WEIGHTS[kind] if weight is None else float(weight)
            sigma = None if sigma is None else float(sigma)
        except (TypeError, ValueError):
            raise CostParameterError(f"weight and sigma of {kind} must be numbers, got {weight!r}, {sigma!r}")
        if not math.isfinite(weight) or weight < 0:
            raise CostParameterError(f"weight of {kind} must be finite and >= 0, got {weight}")
        if kind == C2 and forbidden is None:
            raise MissingParameterError("C2 needs a forbidden state")
        if kind == C3 and operator is None:
            raise MissingParameterError("C3 needs an operator")
        if kind == C7:
            if sigma is None:
                raise MissingParameterError("C7 needs a Gaussian width sigma")
            if not sigma > 0:
                raise CostParameterError(f"C7 sigma must be > 0, got {sigma}")
        self.kind = kind
        self.weight = weight
        self.target = None if target is None else _column(target)
        self.forbidden = None if forbidden is None else _column(forbidden)
        if operator is not None and not isinstance(operator, ComplexMatrix):
            operator = ComplexMatrix(operator)
        self.operator = operator
        self.sigma = sigma
        self.padded = bool(padded)

    def __repr__(self):
        return f"CostTerm({self.kind}, weight={self.weight})"


class CostSpec:
    """
    C = sum_i alpha_i C_i
    """
    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise CostParameterError("a cost spec needs at least one term")
        self.terms = terms

    def _of(self, kinds):
        return [t for t in self.terms if t.kind in kinds]

    @property
    def state_terms(self):
        return self._of(STATE_KINDS)

    @property
    def pulse_terms(self):
        return self._of(PULSE_KINDS)

    @property
    def readout_terms(self):
        return self._of(READOUT_KINDS)

    @property
    def kinds(self):
        return [t.kind for t in self.terms]


def state_cost_at_step(tape, term, j, n_steps, psi, target=None):
    """
    Contribution of one state term from the state after step j (unweighted)
    :return: Node, or None when the term has nothing at this step
    """
    if term.kind == C1:
        if j != n_steps:
            return None
        target = term.target if term.target is not None else target
        if target is None:
            raise MissingParameterError("C1 needs a target state")
        return tape.sub(1.0, tape.abs2(tape.inner(_column(target), psi)))
    if j == 0:
        return None
    if term.kind == C2:
        return tape.abs2(tape.inner(term.forbidden, psi))
    if term.kind == C3:
        return tape.real(tape.inner(psi, tape.matmul(term.operator.toarray(), psi)))
    raise CostParameterError(f"{term.kind} is not a state cost")


def eval_state_costs(tape, term, states, psi_n, target=None):
    """
    C1 = 1 - |<psi_T|psi_N>|^2, C2 = sum_j |<psi_f|psi_j>|^2, C3 = sum_j <psi_j|O|psi_j>
    :param tape: Tape
    :param term: CostTerm of kind C1, C2 or C3
    :param states: Nodes (or arrays) of the normalised states psi_1..psi_N
    :param psi_n: Node of the final state
    :param target: Problem target used when the term has none
    :return: Node (unweighted)
    """
    if term.kind not in STATE_KINDS:
        raise CostParameterError(f"{term.kind} is not a state cost")
    n_steps = len(states)
    if term.kind == C1:
        return state_cost_at_step(tape, term, n_steps, n_steps, psi_n, target)
    total = None
    for j, psi in enumerate(states, start=1):
        piece = state_cost_at_step(tape, term, j, n_steps, psi, target)
        total = piece if total is None else tape.add(total, piece)
    if total is None:
        return tape.sum(np.zeros(1))
    return total


class TrajectoryCost:
    """
    The weighted state terms of a problem, evaluated step by step on a
    trajectory tape (trajectory_engine calls state_cost for j = 0..N).
    """
    def __init__(self, terms, target=None, scale=1.0):
        self._terms = [t for t in terms if t.kind in STATE_KINDS]
        self._target = None if target is None else _column(target)
        self._scale = float(scale)

    @property
    def empty(self):
        return not self._terms

    def state_cost(self, tape, j, n_steps, psi):
        total = None
        for term in self._terms:
            piece = state_cost_at_step(tape, term, j, n_steps, psi, self._target)
            if piece is None:
                continue
            piece = tape.scale(term.weight * self._scale, piece)
            total = piece if total is None else tape.add(total, piece)
        return total


def _difference_base(tape, term, u_node):
    u = u_node
    if term.padded:
        n = u_node.shape[1]
        pad = np.zeros((n, n + 2))
        pad[np.arange(n), np.arange(1, n + 1)] = 1.0
        u = tape.matmul(u_node, pad)
    return u


def envelope_weights(n_steps, sigma):
    """
    1 - exp(-(j - (N - 1)/2)^2 / 2 sigma^2) for j = 0..N-1
    """
    if not sigma > 0:
        raise CostParameterError(f"C7 sigma must be > 0, got {sigma}")
    j = np.arange(n_steps)
    return 1.0 - np.exp(-(j - 0.5 * (n_steps - 1)) ** 2 / (2.0 * sigma ** 2))


def eval_pulse_costs(tape, term, u_node):
    """
    C4 = sum |u_kj - u_kj-1|^2, C5 = sum |u_kj+1 - 2 u_kj + u_kj-1|^2,
    C6 = sum |u_kj|^2, C7 = sum |(1 - exp(-(j - (N-1)/2)^2 / 2 sigma^2)) u_kj|^2.
    Differences use interior indices; padded terms add a zero on each side.
    :param u_node: Leaf (or node) holding the K x N amplitudes
    :return: Node (unweighted)
    """
    if term.kind == C4:
        u = _difference_base(tape, term, u_node)
        diff = tape.sub(tape.slice(u, (slice(None), slice(1, None))), tape.slice(u, (slice(None), slice(None, -1))))
        return tape.sum(tape.abs2(diff))
    if term.kind == C5:
        u = _difference_base(tape, term, u_node)
        ahead = tape.slice(u, (slice(None), slice(2, None)))
        centre = tape.slice(u, (slice(None), slice(1, -1)))
        behind = tape.slice(u, (slice(None), slice(None, -2)))
        second = tape.add(tape.sub(ahead, tape.scale(2.0, centre)), behind)
        return tape.sum(tape.abs2(second))
    if term.kind == C6:
        return tape.sum(tape.abs2(u_node))
    if term.kind == C7:
        weights = envelope_weights(u_node.shape[1], term.sigma).reshape(1, -1)
        return tape.sum(tape.abs2(tape.mul(u_node, weights)))
    raise CostParameterError(f"{term.kind} is not a pulse cost")


def pulse_cost_and_gradient(spec, pulse):
    """
    Weighted pulse terms of a spec on their own tape
    :return: (value, dC/du as a K x N array, {kind: unweighted value})
    """
    terms = spec.pulse_terms if isinstance(spec, CostSpec) else list(spec)
    if not terms:
        return 0.0, np.zeros(pulse.u.shape), {}
    tape = Tape()
    u_node = tape.leaf(pulse.u, name="u")
    total = None
    values = {}
    for term in terms:
        node = eval_pulse_costs(tape, term, u_node)
        values[term.kind] = values.get(term.kind, 0.0) + float(node.value)
        weighted = tape.scale(term.weight, node)
        total = weighted if total is None else tape.add(total, weighted)
    gradient = backward(tape, total)[u_node.id]
    return float(total.value), gradient, values


class ReadoutEnsemble:
    """
    Per-trajectory readout features of the trajectories started in one qubit
    state: quadrature signals (M x N), photon numbers (M x N), final overlaps
    with the initial state (M) and estimator weights (M, summing to 1).
    """
    def __init__(self, signals, photons, overlaps, weights):
        self.signals = np.atleast_2d(np.asarray(signals, dtype=float))
        self.photons = np.atleast_2d(np.asarray(photons, dtype=float))
        self.overlaps = np.asarray(overlaps, dtype=float).reshape(-1)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        m = self.weights.size
        if m == 0:
            raise EmptyEnsembleError("readout ensemble without trajectories")
        if self.signals.shape[0] != m or self.photons.shape[0] != m or self.overlaps.size != m:
            raise LengthMismatchError("readout features and weights differ in trajectory count")
        if self.signals.shape != self.photons.shape:
            raise LengthMismatchError("signal and photon traces differ in length")

    @property
    def n_steps(self):
        return self.signals.shape[1]

    @property
    def size(self):
        return self.weights.size

    @classmethod
    def from_outcome(cls, outcome, psi_initial):
        """
        :param outcome: BatchOutcome whose trajectories recorded the "x" and "n_a" signals
        :param psi_initial: The initial state of the batch
        """
        v0 = np.asarray(psi_initial, dtype=np.complex128).reshape(-1)
        signals = [r.signals[SIGNAL_QUADRATURE] for r in outcome.results]
        photons = [r.signals[SIGNAL_PHOTONS] for r in outcome.results]
        overlaps = [abs(np.vdot(v0, r.final_state)) ** 2 for r in outcome.results]
        return cls(signals, photons, overlaps, outcome.weights)


class _EnsembleNodes:
    def __init__(self, tape, ensemble):
        self.ensemble = ensemble
        self.signals = tape.leaf(ensemble.signals, name="signals")
        self.photons = tape.leaf(ensemble.photons, name="photons")
        self.overlaps = tape.leaf(ensemble.overlaps, name="overlaps")
        self.row = ensemble.weights.reshape(1, -1)


def ensemble_leaves(tape, ensemble):
    """
    Declare the features of an ensemble as leaves of an ensemble tape
    """
    return _EnsembleNodes(tape, ensemble)


def eval_readout_costs(tape, kind, ground, excited):
    """
    Cf = -((1/T_f) int (s0 - s1) dt)^2, Cr = (1/T_f) sum_i int <a^dagger a>_i dt,
    Cq = 1 - mean |<psi_final|psi_initial>|^2. Time integrals are left Riemann
    sums over the N samples, so (1/T_f) int dt becomes (1/N) sum_j.
    :param ground: ensemble_leaves of the |0> ensemble
    :param excited: ensemble_leaves of the |1> ensemble
    :return: Node (unweighted)
    """
    if ground.ensemble.n_steps != excited.ensemble.n_steps:
        raise LengthMismatchError("readout ensembles have different horizons")
    n_steps = ground.ensemble.n_steps
    if kind == CF:
        mean0 = tape.matmul(ground.row, ground.signals)
        mean1 = tape.matmul(excited.row, excited.signals)
        separation = tape.scale(1.0 / n_steps, tape.sum(tape.sub(mean0, mean1)))
        return tape.scale(-1.0, tape.abs2(separation))
    if kind == CR:
        photons0 = tape.sum(tape.matmul(ground.row, ground.photons))
        photons1 = tape.sum(tape.matmul(excited.row, excited.photons))
        return tape.scale(1.0 / n_steps, tape.add(photons0, photons1))
    if kind == CQ:
        overlap0 = tape.sum(tape.mul(ground.ensemble.weights, ground.overlaps))
        overlap1 = tape.sum(tape.mul(excited.ensemble.weights, excited.overlaps))
        return tape.sub(1.0, tape.scale(0.5, tape.add(overlap0, overlap1)))
    raise CostParameterError(f"{kind} is not a readout cost")


class CostContext:
    """
    Everything total_cost may need: trajectory state nodes, the pulse leaf and
    readout ensembles
    """
    def __init__(self, states=None, psi_n=None, u_node=None, target=None, ground=None, excited=None):
        self.states = states
        self.psi_n = psi_n
        self.u_node = u_node
        self.target = target
        self.ground = ground
        self.excited = excited


def total_cost(tape, spec, context):
    """
    sum_i alpha_i C_i as a single scalar node
    """
    total = None
    for term in spec.terms:
        if term.kind in STATE_KINDS:
            if context.states is None or context.psi_n is None:
                raise MissingParameterError(f"{term.kind} needs trajectory states")
            node = eval_state_costs(tape, term, context.states, context.psi_n, context.target)
        elif term.kind in PULSE_KINDS:
            if context.u_node is None:
                raise MissingParameterError(f"{term.kind} needs the pulse")
            node = eval_pulse_costs(tape, term, context.u_node)
        else:
            if context.ground is None or context.excited is None:
                raise MissingParameterError(f"{term.kind} needs both readout ensembles")
            node = eval_readout_costs(tape, term.kind, context.ground, context.excited)
        weighted = tape.scale(term.weight, node)
        total = weighted if total is None else tape.add(total, weighted)
    return total


class ReadoutSeedCost:
    """
    Surrogate per-trajectory cost sum_j a_j s_j + sum_j b_j n_j + c o whose
    gradient is the trajectory's share of the readout-cost gradient, given the
    feature adjoints a, b, c from the ensemble tape.
    """
    def __init__(self, signal_seeds, photon_seeds, overlap_seed, quadrature, photons, psi_initial):
        self._signal_seeds = np.asarray(signal_seeds, dtype=float)
        self._photon_seeds = np.asarray(photon_seeds, dtype=float)
        self._overlap_seed = float(overlap_seed)
        self._quadrature = quadrature.toarray()
        self._photons = photons.toarray()
        self._psi_initial = _column(psi_initial)

    def state_cost(self, tape, j, n_steps, psi):
        total = None
        pieces = []
        if j < n_steps:
            if self._signal_seeds[j] != 0.0:
                x = tape.real(tape.inner(psi, tape.matmul(self._quadrature, psi)))
                pieces.append(tape.scale(float(self._signal_seeds[j]), x))
            if self._photon_seeds[j] != 0.0:
                n = tape.real(tape.inner(psi, tape.matmul(self._photons, psi)))
                pieces.append(tape.scale(float(self._photon_seeds[j]), n))
        elif self._overlap_seed != 0.0:
            o = tape.abs2(tape.inner(self._psi_initial, psi))
            pieces.append(tape.scale(self._overlap_seed, o))
        for piece in pieces:
            total = piece if total is None else tape.add(total, piece)
        return total


def readout_signal_operators(sys):
    """
    [("x", a + a^dagger), ("n_a", a^dagger a)] for the readout family
    """
    a = sys.operator("a")
    return [(SIGNAL_QUADRATURE, a + a.dagger()), (SIGNAL_PHOTONS, a.dagger() @ a)]


def readout_batch_gradient(spec, sys, pulse, cfg, settings=None, workers=None):
    """
    Cost and gradient of the readout and state terms of a spec for the
    trajectories started in |0> and |1> (resonator empty). Pulse terms are not
    included.
    Pass 1 simulates both batches and collects features; an ensemble tape turns
    the readout costs into per-trajectory feature adjoints; pass 2 replays every
    trajectory with the seeded surrogate cost and sums the gradients.
    :return: (cost, gradient, {kind: unweighted value}, (outcome0, outcome1))
    """
    operators = readout_signal_operators(sys)
    initial = [readout_state(sys, 0), readout_state(sys, 1)]
    state_terms = spec.state_terms
    outcomes = []
    for i, psi0 in enumerate(initial):
        local = TrajectoryCost(state_terms, target=psi0) if state_terms else None
        outcomes.append(run_batch(sys, pulse, psi0, cfg.with_seed(derive_seed(cfg.seed, i)), cost=local,
                                  settings=settings, signal_operators=operators, workers=workers))

    values = {}
    cost = 0.0
    gradient = np.zeros(pulse.u.shape)
    if state_terms:
        # state terms are averaged over the two initial states
        for outcome in outcomes:
            cost += 0.5 * outcome.cost
            gradient = gradient + 0.5 * outcome.gradient

    readout_terms = spec.readout_terms
    if not readout_terms:
        return cost, gradient, values, tuple(outcomes)

    tape = Tape()
    nodes = [ensemble_leaves(tape, ReadoutEnsemble.from_outcome(o, psi0)) for o, psi0 in zip(outcomes, initial)]
    total = None
    for term in readout_terms:
        node = eval_readout_costs(tape, term.kind, nodes[0], nodes[1])
        values[term.kind] = float(node.value)
        weighted = tape.scale(term.weight, node)
        total = weighted if total is None else tape.add(total, weighted)
    cost += float(total.value)
    seeds = backward(tape, total)

    quadrature, photons = operators[0][1], operators[1][1]
    for outcome, node, psi0 in zip(outcomes, nodes, initial):
        signal_seeds = seeds[node.signals.id]
        photon_seeds = seeds[node.photons.id]
        overlap_seeds = seeds[node.overlaps.id]
        surrogates = [ReadoutSeedCost(signal_seeds[m], photon_seeds[m], overlap_seeds[m], quadrature, photons, psi0)
                      for m in range(len(outcome.results))]
        replayed = replay_outcome(sys, pulse, psi0, outcome, surrogates, settings=settings, workers=workers)
        for result in replayed:
            gradient = gradient + result.gradient
    logger.debug("readout batch: cost %.6e, terms %s", cost, values)
    return cost, gradient, values, tuple(outcomes)
