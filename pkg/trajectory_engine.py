#
# trajectory_engine.py - quantum-jump trajectories, improved sampling and clustered propagation
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# A taped trajectory records every propagation step on its own autodiff Tape.
# Jump or no-jump is decided from the random numbers while the tape is built,
# so each trajectory differentiates its own branch structure.
#
# Draw order per trajectory stream: first threshold r, then for every jump
# one channel draw followed by a fresh threshold in [0, 1).
#


import math
import logging
import numpy as np
from joblib import Parallel, delayed
from configuration import Configuration
from linalg_core import StateBatch, matvec_exp_info, spmv, taylor_converged
from autodiff import Tape, backward
from quantum_model import step_generator, as_state, check_step
from traj_errors import StateAnnihilatedError, TaylorDivergenceError, LengthMismatchError, \
    EmptyEnsembleError, MissingStatesError, InvalidParameterError, StepIndexError, DimensionMismatchError


logger = logging.getLogger(__name__)

# Clustered columns whose survival*||trial||^2 lies this close to the
# threshold are re-propagated alone, so they truncate like a single trajectory
THRESHOLD_MARGIN = 1e-9


def trajectory_seed_sequence(seed, index):
    """
    Counter-based stream key: the stream of trajectory `index` depends only on
    (seed, index), never on the worker that runs it.
    """
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))


def trajectory_rng(seed, index):
    return np.random.default_rng(trajectory_seed_sequence(seed, index))


def derive_seed(seed, *counters):
    """
    A 64-bit seed for a sub-run (e.g. one optimizer iteration)
    """
    return int(np.random.SeedSequence([int(seed)] + [int(c) for c in counters]).generate_state(1, np.uint64)[0])


class JumpRecord:
    """
    The jumps of one trajectory as (step j, channel l, threshold r in force)
    """
    def __init__(self, events=None):
        self._events = []
        for step, channel, r in (events or []):
            self.append(step, channel, r)

    def append(self, step, channel, r):
        if self._events and step <= self._events[-1][0]:
            raise StepIndexError(f"jump steps must increase, got {step} after {self._events[-1][0]}")
        if channel < 0:
            raise StepIndexError(f"invalid channel {channel}")
        self._events.append((int(step), int(channel), float(r)))

    @property
    def events(self):
        return list(self._events)

    @property
    def steps(self):
        return [e[0] for e in self._events]

    def channel_at(self, step):
        for j, channel, _ in self._events:
            if j == step:
                return channel
        return None

    def __len__(self):
        return len(self._events)

    def __eq__(self, other):
        return isinstance(other, JumpRecord) and self._events == other._events

    def __repr__(self):
        return f"JumpRecord({self._events})"


class TrajectoryResult:
    """
    Everything recorded along one trajectory.
    states[i] is the normalised state after step state_steps[i] (step 0 is the
    initial state). norms[j] is F_j^2, the squared norm of the unnormalised
    product M_j...M_1 psi0. signals[name][j] is <A> in the state at the start
    of step j + 1, j = 0..N-1.
    """
    def __init__(self, index, states, state_steps, final_state, norms, jumps, signals,
                 survival, first_r, cost=None, gradient=None, r_floor=None):
        self.index = index
        # None for the no-jump trajectory
        self.r_floor = r_floor
        self.states = states
        self.state_steps = state_steps
        self.final_state = final_state
        self.norms = norms
        self.jumps = jumps
        self.signals = signals
        self.survival = survival
        self.first_r = first_r
        self.cost = cost
        self.gradient = gradient

    @property
    def n_steps(self):
        return len(self.norms) - 1

    def state_at(self, step):
        """
        :param step: 0..N
        :return: Normalised d-vector
        """
        if step == self.n_steps:
            return self.final_state
        try:
            i = self.state_steps.index(step)
        except ValueError:
            raise MissingStatesError(f"state of step {step} was not stored (stride too large)")
        return self.states[i]

    def __repr__(self):
        return f"TrajectoryResult(index={self.index}, jumps={len(self.jumps)}, cost={self.cost})"


class BatchConfig:
    """
    :param m_tot: Intended batch size
    :param cluster_width: Columns propagated together by simulate_ensemble
    :param seed: 64-bit seed of the batch
    :param improved_sampling: One no-jump plus conditioned jump trajectories when True
    """
    def __init__(self, m_tot, cluster_width=1, seed=0, improved_sampling=True):
        if int(m_tot) < 1:
            raise InvalidParameterError(f"m_tot must be >= 1, got {m_tot}")
        if int(cluster_width) < 1:
            raise InvalidParameterError(f"cluster_width must be >= 1, got {cluster_width}")
        self.m_tot = int(m_tot)
        self.cluster_width = int(cluster_width)
        self.seed = int(seed)
        self.improved_sampling = bool(improved_sampling)

    def with_seed(self, seed):
        return BatchConfig(self.m_tot, self.cluster_width, seed, self.improved_sampling)

    def to_dict(self):
        return {"m_tot": self.m_tot, "cluster_width": self.cluster_width,
                "seed": self.seed, "improved_sampling": self.improved_sampling}


class BatchOutcome:
    """
    Net gradient and cost of one batch plus the trajectories behind them.
    weights[i] is the estimator weight of results[i].
    """
    def __init__(self, gradient, cost, p, results, weights, improved, seed=0):
        self.seed = seed
        self.gradient = gradient
        self.cost = cost
        self.p = p
        self.results = results
        self.weights = weights
        self.improved = improved

    @property
    def m_sim(self):
        return len(self.results)

    def __iter__(self):
        return iter((self.gradient, self.cost, self.p))


class PropagationSettings:
    """
    Numerical knobs shipped to the workers, so a worker process never depends
    on its own copy of the configuration.
    """
    def __init__(self, tol=None, max_terms=None, memory_budget=None, stride=1, checkpoint=None):
        self.tol = Configuration.get(Configuration.CFG_TAYLOR_TOL) if tol is None else tol
        self.max_terms = Configuration.get(Configuration.CFG_TAYLOR_MAX_TERMS) if max_terms is None else max_terms
        self.memory_budget = Configuration.get(Configuration.CFG_STATE_MEMORY_BUDGET) \
            if memory_budget is None else memory_budget
        if int(stride) < 1:
            raise InvalidParameterError("stride must be >= 1")
        self.stride = int(stride)
        # None: decide from memory_budget
        self.checkpoint = checkpoint

    def uses_checkpointing(self, dim, n_steps):
        if self.checkpoint is not None:
            return bool(self.checkpoint)
        return dim * n_steps > self.memory_budget


class _StepContext:
    """
    Dense operators of one system/pulse pair used by the taped propagation
    """
    def __init__(self, sys, pulse, settings):
        self.sys = sys
        self.pulse = pulse
        self.settings = settings
        self.n_steps = pulse.n_steps
        drift = sys.drift_generator(pulse.dt)
        self.drift = drift.toarray() if sys.is_sparse else np.asarray(drift)
        self.channels = [op.toarray() for op, _ in sys.channels]
        self.rates = np.array([rate for _, rate in sys.channels])
        self._controls = {}

    def control(self, k, j):
        if self.sys.carriers[k] is None:
            if k not in self._controls:
                self._controls[k] = self.sys.controls[k].toarray()
            return self._controls[k]
        return self.sys.control_at_step(k, j, self.pulse.dt).toarray()


class _JumpSampler:
    """
    Decides jump or no-jump at every step from the trajectory's random stream
    """
    replaying = False

    def __init__(self, rng, rates, r_floor=0.0, no_jump=False):
        self._rng = rng
        self._rates = rates
        self.no_jump = no_jump
        self.r = 0.0 if no_jump else r_floor + (1.0 - r_floor) * rng.random()
        self.first_r = self.r
        self.survival = 1.0
        self.norm2 = 1.0
        self.norms = [1.0]
        self.record = JumpRecord()

    def decide(self, j, trial_norm2, jump_norms_fn):
        """
        :param j: Step index
        :param trial_norm2: Squared norm of the no-jump trial state
        :param jump_norms_fn: Callable returning ||c_l psi||^2 for every channel
        :return: None (no jump) or the channel index
        """
        if self.no_jump or self.survival * trial_norm2 > self.r:
            if trial_norm2 == 0.0:
                raise StateAnnihilatedError(f"state vanished at step {j}")
            self.survival *= trial_norm2
            self.norm2 *= trial_norm2
            self.norms.append(self.norm2)
            return None
        jump_norms = np.asarray(jump_norms_fn(), dtype=float)
        weights = self._rates * jump_norms
        total = float(np.sum(weights))
        if total <= 0.0:
            raise StateAnnihilatedError(f"jump threshold crossed at step {j} but no channel can fire")
        cumulative = np.cumsum(weights) / total
        channel = min(int(np.searchsorted(cumulative, self._rng.random(), side="right")), len(weights) - 1)
        self.record.append(j, channel, self.r)
        self.r = self._rng.random()
        self.survival = 1.0
        self.norm2 *= float(jump_norms[channel])
        self.norms.append(self.norm2)
        return channel


class _JumpReplayer:
    """
    Replays the jumps of a recorded trajectory (checkpoint recomputation)
    """
    replaying = True

    def __init__(self, record):
        self._channels = {j: l for j, l, _ in record.events}

    def channel_at(self, j):
        return self._channels.get(j)


class _Observer:
    """
    Collects strided states and signals during the forward pass
    """
    def __init__(self, n_steps, stride, signal_operators):
        self._n_steps = n_steps
        self._stride = stride
        self._operators = list(signal_operators or [])
        self.states = []
        self.state_steps = []
        self.final_state = None
        self.signals = {name: np.zeros(n_steps) for name, _ in self._operators}

    def observe(self, j, column):
        v = column.reshape(-1)
        if j < self._n_steps:
            for name, op in self._operators:
                self.signals[name][j] = float(np.vdot(v, op.raw @ v).real)
        if j % self._stride == 0:
            self.states.append(v.copy())
            self.state_steps.append(j)
        if j == self._n_steps:
            self.final_state = v.copy()


def _taped_generator(tape, ctx, u_node, j):
    """
    -i dt H_eff at step j on the tape, same arithmetic as quantum_model.step_generator
    """
    dt = ctx.pulse.dt
    a = ctx.drift
    for k in range(ctx.sys.n_controls):
        coefficient = tape.mul(tape.slice(u_node, (k, j - 1)), -1j * dt)
        a = tape.add(a, tape.scale(coefficient, ctx.control(k, j)))
    return a


def _taped_exp_action(tape, a, psi, tol, max_terms):
    """
    Taylor recurrence term_n = (1/n) A term_{n-1} on the tape. The truncation
    point is decided from the values, like matvec_exp.
    """
    acc = psi
    term = psi
    for n in range(1, max_terms + 1):
        term = tape.scale(1.0 / n, tape.matmul(a, term))
        acc = tape.add(acc, term)
        if taylor_converged(term.value, acc.value, tol):
            return acc
    raise TaylorDivergenceError(f"Taylor series not converged after {max_terms} terms, reduce dt")


def _taped_jump(tape, ctx, psi, channel, j):
    jumped = tape.matmul(ctx.channels[channel], psi)
    n = tape.norm(jumped)
    if float(n.value) == 0.0:
        raise StateAnnihilatedError(f"jump operator {channel} annihilated the state at step {j}")
    return tape.div(jumped, n)


def _advance(tape, ctx, u_node, j, psi, driver):
    """
    One trajectory step on the tape
    :return: Node of the normalised state after step j
    """
    settings = ctx.settings
    if driver.replaying:
        channel = driver.channel_at(j)
        if channel is not None:
            return _taped_jump(tape, ctx, psi, channel, j)
        trial = _taped_exp_action(tape, _taped_generator(tape, ctx, u_node, j), psi,
                                  settings.tol, settings.max_terms)
        return tape.div(trial, tape.norm(trial))

    trial = _taped_exp_action(tape, _taped_generator(tape, ctx, u_node, j), psi, settings.tol, settings.max_terms)
    trial_norm2 = float(np.vdot(trial.value, trial.value).real)
    psi_value = psi.value

    def jump_norms():
        return [float(np.vdot(c @ psi_value, c @ psi_value).real) for c in ctx.channels]

    channel = driver.decide(j, trial_norm2, jump_norms)
    if channel is None:
        return tape.div(trial, tape.norm(trial))
    return _taped_jump(tape, ctx, psi, channel, j)


def _accumulate(tape, total, contribution):
    if contribution is None:
        return total
    if total is None:
        return contribution
    return tape.add(total, contribution)


def _run_steps(tape, ctx, u_node, psi, j0, j1, driver, cost, include_start, observer=None, checkpoints=None):
    """
    Steps j0+1..j1 starting from the state node psi (the state after step j0)
    :return: (state node after step j1, accumulated cost node or None)
    """
    total = None
    if include_start:
        if cost is not None:
            total = _accumulate(tape, total, cost.state_cost(tape, j0, ctx.n_steps, psi))
        if observer is not None:
            observer.observe(j0, psi.value)
    for j in range(j0 + 1, j1 + 1):
        psi = _advance(tape, ctx, u_node, j, psi, driver)
        if cost is not None:
            total = _accumulate(tape, total, cost.state_cost(tape, j, ctx.n_steps, psi))
        if observer is not None:
            observer.observe(j, psi.value)
        if checkpoints is not None and j in checkpoints:
            checkpoints[j] = np.array(psi.value)
    return psi, total


def segment_bounds(n_steps, checkpointed):
    """
    Segments of ceil(sqrt(N)) steps when checkpointing, one segment otherwise
    """
    if not checkpointed:
        return [(0, n_steps)]
    size = max(1, math.ceil(math.sqrt(n_steps)))
    return [(j0, min(j0 + size, n_steps)) for j0 in range(0, n_steps, size)]


def _checkpointed_gradient(ctx, pulse, bounds, checkpoints, record, cost):
    """
    Reverse sweep over segments, each recomputed on a fresh tape. The adjoint of
    a segment's output state enters the next-earlier segment as the seed term
    Re <lambda|psi_out>.
    """
    gradient = np.zeros(pulse.u.shape)
    lam = None
    replayer = _JumpReplayer(record)
    for j0, j1 in reversed(bounds):
        tape = Tape()
        u_node = tape.leaf(pulse.u, name="u")
        psi, re, im = tape.complex_leaf(checkpoints[j0], name="psi_in")
        psi_out, total = _run_steps(tape, ctx, u_node, psi, j0, j1, replayer, cost, include_start=(j0 == 0))
        if lam is not None:
            total = _accumulate(tape, total, tape.real(tape.inner(lam, psi_out)))
        if total is None:
            lam = np.zeros_like(checkpoints[j0])
            continue
        grads = backward(tape, total)
        gradient = gradient + grads[u_node.id]
        lam = grads[re.id] + 1j * grads[im.id]
    return gradient


def _run_trajectory(sys, pulse, psi0, rng, r_floor, no_jump, cost, settings, signal_operators, index):
    ctx = _StepContext(sys, pulse, settings)
    n_steps = pulse.n_steps
    psi0_col = as_state(psi0, sys.dim).reshape(-1, 1)
    checkpointed = cost is not None and settings.uses_checkpointing(sys.dim, n_steps)
    bounds = segment_bounds(n_steps, checkpointed)

    tape = Tape(record=cost is not None and not checkpointed)
    u_node = tape.leaf(pulse.u, name="u")
    psi, _, _ = tape.complex_leaf(psi0_col, name="psi0")
    sampler = _JumpSampler(rng, ctx.rates, r_floor=r_floor, no_jump=no_jump)
    observer = _Observer(n_steps, settings.stride, signal_operators)
    checkpoints = {j0: None for j0, _ in bounds} if checkpointed else None
    if checkpointed:
        checkpoints[0] = psi0_col
    _, total = _run_steps(tape, ctx, u_node, psi, 0, n_steps, sampler, cost, True, observer, checkpoints)

    cost_value = None
    gradient = None
    if cost is not None:
        cost_value = float(total.value) if total is not None else 0.0
        if checkpointed:
            logger.debug("trajectory %d: checkpointed gradient over %d segments", index, len(bounds))
            gradient = _checkpointed_gradient(ctx, pulse, bounds, checkpoints, sampler.record, cost)
        elif total is not None:
            gradient = backward(tape, total)[u_node.id]
        else:
            gradient = np.zeros(pulse.u.shape)

    return TrajectoryResult(index=index, states=np.array(observer.states), state_steps=observer.state_steps,
                            final_state=observer.final_state, norms=np.array(sampler.norms),
                            jumps=sampler.record, signals=observer.signals, survival=sampler.survival,
                            first_r=sampler.first_r, cost=cost_value, gradient=gradient,
                            r_floor=None if no_jump else r_floor)


def simulate_jump_trajectory(sys, pulse, psi0, rng, r_floor=0.0, cost=None, settings=None,
                             signal_operators=None, index=0):
    """
    One quantum-jump trajectory. The first threshold r is drawn in [r_floor, 1),
    later thresholds in [0, 1). A step jumps when the survival probability since
    the last jump times the trial squared norm falls to r or below.
    :param sys: OpenSystem
    :param pulse: ControlPulse
    :param psi0: Initial state (normalised on entry)
    :param rng: Source of uniform draws (anything with random())
    :param r_floor: Lower bound of the first threshold
    :param cost: Optional per-trajectory cost (costs.TrajectoryCost). With a cost the
                 trajectory is taped and the result carries cost and gradient.
    :param settings: PropagationSettings
    :param signal_operators: [(name, ComplexMatrix)] recorded as expectation values
    :param index: Trajectory index within its batch
    :return: TrajectoryResult
    """
    if not 0.0 <= r_floor < 1.0:
        raise InvalidParameterError(f"r_floor must lie in [0, 1), got {r_floor}")
    settings = settings or PropagationSettings()
    return _run_trajectory(sys, pulse, psi0, rng, r_floor, False, cost, settings, signal_operators, index)


class _NoDraws:
    def random(self):
        raise RuntimeError("the no-jump trajectory draws no random numbers")


def simulate_no_jump(sys, pulse, psi0, cost=None, settings=None, signal_operators=None):
    """
    Deterministic H_eff propagation (threshold r = 0). result.survival is the
    no-jump probability p.
    :return: TrajectoryResult
    """
    settings = settings or PropagationSettings()
    return _run_trajectory(sys, pulse, psi0, _NoDraws(), 0.0, True, cost, settings, signal_operators, -1)


def jump_probability(sys, pulse, psi0, settings=None):
    """
    :return: 1 - p, the probability of at least one jump over the pulse
    """
    return 1.0 - simulate_no_jump(sys, pulse, psi0, settings=settings).survival


def parallel_map(func, jobs, workers=None):
    """
    Run func(*job) for every job, results in job order
    """
    workers = Configuration.get(Configuration.CFG_WORKERS) if workers is None else workers
    if workers is None or int(workers) <= 1 or len(jobs) <= 1:
        return [func(*job) for job in jobs]
    backend = Configuration.get(Configuration.CFG_PARALLEL_BACKEND)
    return Parallel(n_jobs=int(workers), backend=backend)(delayed(func)(*job) for job in jobs)


def _jump_worker(sys, pulse, psi0, seed, index, r_floor, cost, settings, signal_operators):
    return simulate_jump_trajectory(sys, pulse, psi0, trajectory_rng(seed, index), r_floor=r_floor, cost=cost,
                                    settings=settings, signal_operators=signal_operators, index=index)


def _weighted_mean(results, weights, attribute):
    """
    Sum in trajectory-index order, independent of worker completion order
    """
    acc = None
    for result, weight in zip(results, weights):
        value = weight * getattr(result, attribute)
        acc = value if acc is None else acc + value
    return acc


def naive_batch(sys, pulse, psi0, cfg, cost=None, settings=None, signal_operators=None, workers=None):
    """
    m_tot independent trajectories with r in [0, 1), equal weights 1/m_tot
    :return: BatchOutcome
    """
    settings = settings or PropagationSettings()
    jobs = [(sys, pulse, psi0, cfg.seed, i, 0.0, cost, settings, signal_operators) for i in range(cfg.m_tot)]
    results = parallel_map(_jump_worker, jobs, workers)
    weights = [1.0 / cfg.m_tot] * cfg.m_tot
    gradient = _weighted_mean(results, weights, "gradient") if cost is not None else None
    batch_cost = _weighted_mean(results, weights, "cost") if cost is not None else None
    p = sum(1 for r in results if len(r.jumps) == 0) / cfg.m_tot
    return BatchOutcome(gradient, batch_cost, p, results, weights, improved=False, seed=cfg.seed)


def jump_trajectory_count(p, m_tot):
    """
    m_j = ceil((1 - p) m_tot), ignoring round-off just above an integer
    """
    return max(0, math.ceil((1.0 - p) * m_tot - 1e-9))


def improved_sampling_batch(sys, pulse, psi0, cfg, cost=None, settings=None, signal_operators=None, workers=None):
    """
    One no-jump trajectory (weight p) plus m_j = ceil((1 - p) m_tot) trajectories
    whose first threshold lies in [p, 1), so each of them jumps at least once
    (total weight 1 - p, shared equally).
    :return: BatchOutcome with gradient g = (1 - p) g_j + p g_nj
    """
    settings = settings or PropagationSettings()
    no_jump = simulate_no_jump(sys, pulse, psi0, cost=cost, settings=settings, signal_operators=signal_operators)
    p = no_jump.survival
    if p <= 0.0:
        logger.warning("no-jump probability is 0, falling back to naive sampling")
        return naive_batch(sys, pulse, psi0, cfg, cost, settings, signal_operators, workers)
    m_j = jump_trajectory_count(p, cfg.m_tot)
    jobs = [(sys, pulse, psi0, cfg.seed, i, p, cost, settings, signal_operators) for i in range(m_j)]
    jump_results = parallel_map(_jump_worker, jobs, workers)
    results = [no_jump] + jump_results
    weights = [p] + ([(1.0 - p) / m_j] * m_j if m_j else [])
    gradient = _weighted_mean(results, weights, "gradient") if cost is not None else None
    batch_cost = _weighted_mean(results, weights, "cost") if cost is not None else None
    logger.debug("improved sampling: p=%.6f, m_j=%d, m_sim=%d", p, m_j, m_j + 1)
    return BatchOutcome(gradient, batch_cost, p, results, weights, improved=True, seed=cfg.seed)


def run_batch(sys, pulse, psi0, cfg, cost=None, settings=None, signal_operators=None, workers=None):
    """
    improved_sampling_batch or naive_batch according to cfg.improved_sampling
    """
    if cfg.improved_sampling:
        return improved_sampling_batch(sys, pulse, psi0, cfg, cost, settings, signal_operators, workers)
    return naive_batch(sys, pulse, psi0, cfg, cost, settings, signal_operators, workers)


def _replay_worker(sys, pulse, psi0, seed, index, r_floor, cost, settings):
    if r_floor is None:
        return simulate_no_jump(sys, pulse, psi0, cost=cost, settings=settings)
    return _jump_worker(sys, pulse, psi0, seed, index, r_floor, cost, settings, None)


def replay_outcome(sys, pulse, psi0, outcome, costs, settings=None, workers=None):
    """
    Re-run every trajectory of a batch with its own cost. The random streams
    are the same, so the trajectories (and their jumps) are reproduced exactly.
    :param outcome: BatchOutcome of an earlier run
    :param costs: One per-trajectory cost per outcome.results entry
    :return: List of TrajectoryResult in the order of outcome.results
    """
    if len(costs) != len(outcome.results):
        raise LengthMismatchError(f"{len(costs)} costs for {len(outcome.results)} trajectories")
    settings = settings or PropagationSettings()
    jobs = [(sys, pulse, psi0, outcome.seed, result.index, result.r_floor, cost, settings)
            for result, cost in zip(outcome.results, costs)]
    return parallel_map(_replay_worker, jobs, workers)


def expectation_estimate(results, A, t_index, weights=None):
    """
    Trajectory average of <psi|A|psi> at step t_index
    :param results: List of TrajectoryResult
    :param A: Hermitian ComplexMatrix
    :param t_index: Step index 0..N
    :param weights: Optional estimator weights (improved sampling), uniform otherwise
    :return: (mean, standard error); the error is infinite for a single trajectory
    """
    if not results:
        raise EmptyEnsembleError("no trajectories to average")
    if not A.is_hermitian(1e-10):
        raise InvalidParameterError("expectation values need a Hermitian operator")
    values = []
    for result in results:
        v = result.state_at(t_index)
        if v.size != A.dim:
            raise DimensionMismatchError(f"state of dimension {v.size}, operator of dimension {A.dim}")
        values.append(float(np.vdot(v, A.raw @ v).real))
    values = np.array(values)
    m = len(values)
    if weights is None:
        mean = float(np.mean(values))
        error = float(np.std(values, ddof=1) / math.sqrt(m)) if m > 1 else math.inf
        return mean, error
    w = np.asarray(weights, dtype=float)
    if w.size != m:
        raise LengthMismatchError(f"{w.size} weights for {m} trajectories")
    mean = float(np.sum(w * values) / np.sum(w))
    error = float(math.sqrt(np.sum(w ** 2 * (values - mean) ** 2)) / np.sum(w)) if m > 1 else math.inf
    return mean, error


def clustered_propagate(sys, pulse, j, batch, event_mask, tol=None, max_terms=None, fixed_terms=None):
    """
    Step j for a batch of trajectories. Columns without an event share one
    matvec_exp call; jump columns get c_l applied individually.
    :param batch: StateBatch
    :param event_mask: One entry per column, None or a channel index
    :return: StateBatch (unnormalised)
    """
    check_step(sys, pulse, j)
    cols = batch.columns if isinstance(batch, StateBatch) else StateBatch(batch).columns
    if len(event_mask) != cols.shape[1]:
        raise LengthMismatchError(f"event mask of length {len(event_mask)} for {cols.shape[1]} columns")
    out = np.empty(cols.shape, dtype=np.complex128)
    free = [i for i, e in enumerate(event_mask) if e is None]
    if free:
        propagated, _ = matvec_exp_info(step_generator(sys, pulse, j), StateBatch(cols[:, free]),
                                        tol=tol, max_terms=max_terms, fixed_terms=fixed_terms)
        out[:, free] = propagated.columns
    for i, event in enumerate(event_mask):
        if event is None:
            continue
        if not 0 <= event < sys.n_channels:
            raise StepIndexError(f"channel {event} outside 0..{sys.n_channels - 1}")
        out[:, i] = spmv(sys.channels[event][0], cols[:, i]).vector()
    return StateBatch(out)


def _ensemble_cluster(sys, pulse, psi0, seed, indices, r_floor, settings, signal_operators):
    """
    Forward-only trajectories of one cluster, propagated side by side
    that share one Taylor truncation per step. A column near its jump
    threshold is stepped on its own before the decision.
    """
    n_steps = pulse.n_steps
    width = len(indices)
    v0 = as_state(psi0, sys.dim)
    rates = np.array([rate for _, rate in sys.channels])
    samplers = [_JumpSampler(trajectory_rng(seed, i), rates, r_floor=r_floor) for i in indices]
    observers = [_Observer(n_steps, settings.stride, signal_operators) for _ in indices]
    V = np.tile(v0.reshape(-1, 1), (1, width))
    for obs, i in zip(observers, range(width)):
        obs.observe(0, V[:, i])
    for j in range(1, n_steps + 1):
        trial = np.array(clustered_propagate(sys, pulse, j, StateBatch(V), [None] * width,
                                             tol=settings.tol, max_terms=settings.max_terms).columns)
        trial_norms2 = np.einsum("ij,ij->j", trial.conj(), trial).real
        for i, sampler in enumerate(samplers):
            if not sampler.no_jump and abs(sampler.survival * trial_norms2[i] - sampler.r) < THRESHOLD_MARGIN:
                trial[:, i] = clustered_propagate(sys, pulse, j, StateBatch(V[:, [i]]), [None], tol=settings.tol,
                                                  max_terms=settings.max_terms).columns[:, 0]
                trial_norms2[i] = float(np.vdot(trial[:, i], trial[:, i]).real)
        mask = []
        for i, sampler in enumerate(samplers):
            column = V[:, i]

            def jump_norms(column=column):
                return [float(np.vdot(c.raw @ column, c.raw @ column).real) for c, _ in sys.channels]

            mask.append(sampler.decide(j, float(trial_norms2[i]), jump_norms))
        new = np.array(trial)
        jumped = [i for i, e in enumerate(mask) if e is not None]
        if jumped:
            new[:, jumped] = clustered_propagate(sys, pulse, j, StateBatch(V[:, jumped]),
                                                 [mask[i] for i in jumped]).columns
        norms = np.linalg.norm(new, axis=0)
        if np.any(norms == 0.0):
            raise StateAnnihilatedError(f"state vanished at step {j}")
        V = new / norms
        for i, obs in enumerate(observers):
            obs.observe(j, V[:, i])
    return [TrajectoryResult(index=i, states=np.array(obs.states), state_steps=obs.state_steps,
                             final_state=obs.final_state, norms=np.array(s.norms), jumps=s.record,
                             signals=obs.signals, survival=s.survival, first_r=s.first_r, r_floor=r_floor)
            for i, obs, s in zip(indices, observers, samplers)]


def simulate_ensemble(sys, pulse, psi0, M, seed, cluster_width=None, settings=None, signal_operators=None,
                      r_floor=0.0, workers=None):
    """
    M forward-only jump trajectories, propagated in clusters of cluster_width
    columns. Trajectory i uses the same random stream as simulate_jump_trajectory
    with index i.
    :return: List of TrajectoryResult in index order
    """
    if int(M) < 1:
        raise EmptyEnsembleError("M must be >= 1")
    settings = settings or PropagationSettings()
    width = int(cluster_width or 1)
    jobs = []
    for start in range(0, M, width):
        indices = list(range(start, min(start + width, M)))
        jobs.append((sys, pulse, psi0, seed, indices, r_floor, settings, signal_operators))
    clusters = parallel_map(_ensemble_cluster, jobs, workers)
    return [result for cluster in clusters for result in cluster]
