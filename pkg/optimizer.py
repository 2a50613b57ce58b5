#
# optimizer.py - mini-batch stochastic gradient pulse optimization
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Iteration i draws its batch from derive_seed(seed, i), so a run depends on
# the seed only, never on the number of workers.
#


import math
import time
import logging
import numpy as np
from configuration import Configuration
from quantum_model import ControlPulse, as_state
from trajectory_engine import BatchConfig, PropagationSettings, run_batch, derive_seed, simulate_ensemble
from costs import CostSpec, TrajectoryCost, pulse_cost_and_gradient, readout_batch_gradient
from oracles import lindblad_propagate
from results_writer import ResultMetadata, write_json, read_json
from traj_errors import GradientBlowupError, ShapeMismatchError, TaylorDivergenceError, \
    InvalidParameterError, MissingParameterError


logger = logging.getLogger(__name__)

# Counter of the evaluation streams, disjoint from the iteration counters
EVALUATION_STREAM = 2 ** 31 - 1


class OptimizerConfig:
    """
    Settings of one optimization run
    :param learning_rate: ADAM step size
    :param beta1: First moment decay (0 together with beta2 = 0 is plain SGD)
    :param beta2: Second moment decay
    :param eps_div: Denominator regulariser
    :param max_iterations: Hard iteration cap
    :param target_fidelity: Stop when an independent evaluation batch reaches it
    :param target_cost: Stop when the batch cost falls to it
    :param amplitude_bound: Hard clip |u| <= bound after every update, None for none
    :param checkpoint_every: Iterations between checkpoints (configuration default)
    :param checkpoint_path: Checkpoint file, None disables checkpoints
    :param eval_batch_size: Trajectories of the evaluation batch (configuration default)
    """
    def __init__(self, learning_rate=1e-2, beta1=0.9, beta2=0.999, eps_div=1e-8, max_iterations=1000,
                 target_fidelity=None, target_cost=None, amplitude_bound=None, checkpoint_every=None,
                 checkpoint_path=None, eval_batch_size=None):
        if not learning_rate > 0:
            raise InvalidParameterError(f"learning rate must be > 0, got {learning_rate}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise InvalidParameterError("ADAM decays must lie in [0, 1)")
        if int(max_iterations) < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        if amplitude_bound is not None and not amplitude_bound > 0:
            raise InvalidParameterError(f"amplitude bound must be > 0, got {amplitude_bound}")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps_div = float(eps_div)
        self.max_iterations = int(max_iterations)
        self.target_fidelity = target_fidelity
        self.target_cost = target_cost
        self.amplitude_bound = amplitude_bound
        self.checkpoint_every = Configuration.get(Configuration.CFG_CHECKPOINT_EVERY) \
            if checkpoint_every is None else int(checkpoint_every)
        self.checkpoint_path = checkpoint_path
        self.eval_batch_size = Configuration.get(Configuration.CFG_EVAL_BATCH_SIZE) \
            if eval_batch_size is None else int(eval_batch_size)

    def new_state(self, shape):
        return OptimizerState(shape, self.learning_rate, self.beta1, self.beta2, self.eps_div)

    def to_dict(self):
        return {"learning_rate": self.learning_rate, "beta1": self.beta1, "beta2": self.beta2,
                "eps_div": self.eps_div, "max_iterations": self.max_iterations,
                "target_fidelity": self.target_fidelity, "target_cost": self.target_cost,
                "amplitude_bound": self.amplitude_bound, "checkpoint_every": self.checkpoint_every,
                "eval_batch_size": self.eval_batch_size}


class OptimizerState:
    """
    ADAM moments and iteration counter
    """
    def __init__(self, shape, learning_rate=1e-2, beta1=0.9, beta2=0.999, eps_div=1e-8):
        self.iteration = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps_div = float(eps_div)

    @property
    def sgd(self):
        return self.beta1 == 0.0 and self.beta2 == 0.0

    def to_dict(self):
        return {"iteration": self.iteration, "m": self.m.tolist(), "v": self.v.tolist(),
                "learning_rate": self.learning_rate, "beta1": self.beta1, "beta2": self.beta2,
                "eps_div": self.eps_div}

    @classmethod
    def from_dict(cls, d):
        m = np.array(d["m"], dtype=float)
        state = cls(m.shape, d["learning_rate"], d["beta1"], d["beta2"], d["eps_div"])
        state.m = m
        state.v = np.array(d["v"], dtype=float)
        state.iteration = int(d["iteration"])
        return state


def adam_step(state, u, g):
    """
    One bias-corrected ADAM update, or u - lr g when beta1 = beta2 = 0.
    Updates the moments and iteration of state in place.
    :param state: OptimizerState
    :param u: Current amplitudes
    :param g: dC/du
    :return: Updated amplitudes (new array)
    """
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    if u.shape != g.shape or u.shape != state.m.shape:
        raise ShapeMismatchError(f"amplitudes {u.shape}, gradient {g.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise GradientBlowupError(f"non-finite gradient at iteration {state.iteration + 1}")
    state.iteration += 1
    if state.sgd:
        return u - state.learning_rate * g
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.iteration)
    v_hat = state.v / (1.0 - state.beta2 ** state.iteration)
    return u - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps_div)


class ConvergenceLog:
    """
    Append-only record of the optimization, one entry per iteration.
    An optional sink is called with every new entry (streaming to a file).
    """
    COLUMNS = ("iteration", "cost", "fidelity", "p", "m_sim")

    def __init__(self, sink=None):
        self._entries = []
        self._sink = sink
        self.stop_reason = None
        self.evaluated_fidelity = None

    def append(self, iteration, cost, terms, fidelity, p, m_sim, wall_time):
        if self._entries and iteration <= self._entries[-1]["iteration"]:
            raise InvalidParameterError("convergence log iterations must increase")
        entry = {"iteration": int(iteration), "cost": float(cost), "terms": dict(terms),
                 "fidelity": float(fidelity), "p": float(p), "m_sim": int(m_sim), "wall_time": float(wall_time)}
        self._entries.append(entry)
        if self._sink is not None:
            self._sink(entry)
        return entry

    @property
    def entries(self):
        return list(self._entries)

    @property
    def last(self):
        return self._entries[-1] if self._entries else None

    def __len__(self):
        return len(self._entries)

    def term_names(self):
        names = []
        for entry in self._entries:
            for name in entry["terms"]:
                if name not in names:
                    names.append(name)
        return names

    @classmethod
    def row(cls, entry):
        """
        One results-file row of an entry (no wall time)
        """
        out = {name: entry[name] for name in cls.COLUMNS}
        for name, value in entry["terms"].items():
            out[f"term_{name}"] = float(value)
        return out

    def columns(self):
        """
        Column arrays for the results file. Wall times are left out so the
        payload depends on the inputs only.
        """
        out = {name: np.array([e[name] for e in self._entries]) for name in self.COLUMNS}
        for name in self.term_names():
            out[f"term_{name}"] = np.array([e["terms"].get(name, math.nan) for e in self._entries])
        return out


class Problem:
    """
    What is optimized: a system, a cost spec and the state pairs the state
    terms refer to (readout problems use their own |0>, |1> pair).
    """
    def __init__(self, sys, spec, state_pairs=None):
        if not isinstance(spec, CostSpec):
            spec = CostSpec(spec)
        pairs = [(as_state(a, sys.dim), as_state(b, sys.dim)) for a, b in (state_pairs or [])]
        if spec.state_terms and not spec.readout_terms and not pairs:
            raise MissingParameterError("state cost terms need at least one (initial, target) state pair")
        self.sys = sys
        self.spec = spec
        self.state_pairs = pairs

    @property
    def is_readout(self):
        return bool(self.spec.readout_terms)


def _pair_fidelity(outcome, target):
    total = 0.0
    for result, weight in zip(outcome.results, outcome.weights):
        total += weight * abs(np.vdot(target, result.final_state)) ** 2
    return total


def batch_cost_and_gradient(problem, pulse, cfg, settings=None, workers=None):
    """
    Total cost and gradient of one mini-batch
    :return: (cost, gradient, {term: value}, fidelity, p, m_sim)
    """
    sys = problem.sys
    spec = problem.spec
    cost, gradient, terms = 0.0, np.zeros(pulse.u.shape), {}
    fidelity, p, m_sim = math.nan, 1.0, 0
    if problem.is_readout:
        cost, gradient, terms, outcomes = readout_batch_gradient(spec, sys, pulse, cfg, settings, workers)
        p = float(np.mean([o.p for o in outcomes]))
        m_sim = sum(o.m_sim for o in outcomes)
    elif spec.state_terms:
        n_pairs = len(problem.state_pairs)
        fidelity, p = 0.0, 0.0
        state_cost = 0.0
        for i, (psi0, target) in enumerate(problem.state_pairs):
            local = TrajectoryCost(spec.state_terms, target=target, scale=1.0 / n_pairs)
            outcome = run_batch(sys, pulse, psi0, cfg.with_seed(derive_seed(cfg.seed, i)), cost=local,
                                settings=settings, workers=workers)
            state_cost += outcome.cost
            gradient = gradient + outcome.gradient
            fidelity += _pair_fidelity(outcome, target) / n_pairs
            p += outcome.p / n_pairs
            m_sim += outcome.m_sim
        cost += state_cost
        terms["state"] = state_cost
    pulse_value, pulse_gradient, pulse_terms = pulse_cost_and_gradient(spec, pulse)
    cost += pulse_value
    gradient = gradient + pulse_gradient
    terms.update(pulse_terms)
    return cost, gradient, terms, fidelity, p, m_sim


def evaluate_pulse(sys, pulse, psi0, psi_target, M, seed=0, settings=None, workers=None, cluster_width=None,
                   cross_check=False):
    """
    Trajectory-averaged fidelity |<psi_T|psi_N>|^2 of a fixed pulse
    :param M: Number of trajectories
    :param cross_check: Compare with the dense Lindblad oracle (small systems only)
    :return: (mean, standard error); the error is infinite for M = 1
    """
    if int(M) < 1:
        raise InvalidParameterError("M must be >= 1")
    target = as_state(psi_target, sys.dim)
    results = simulate_ensemble(sys, pulse, psi0, int(M), seed, cluster_width=cluster_width, settings=settings,
                                workers=workers)
    values = np.array([abs(np.vdot(target, r.final_state)) ** 2 for r in results])
    mean = float(np.mean(values))
    error = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else math.inf
    if cross_check:
        if sys.dim > Configuration.get(Configuration.CFG_ORACLE_MAX_DIM):
            logger.warning("dimension %d above the oracle cap, skipping the cross-check", sys.dim)
        else:
            rho_n = lindblad_propagate(sys, pulse, as_state(psi0, sys.dim))[-1]
            exact = float(np.real(np.vdot(target, rho_n.rho @ target)))
            if abs(exact - mean) > 3.0 * error:
                logger.warning("trajectory fidelity %.6f +- %.2e differs from the oracle %.6f", mean, error, exact)
            else:
                logger.info("trajectory fidelity %.6f +- %.2e, oracle %.6f", mean, error, exact)
    return mean, error


def random_initial_pulse(n_controls, n_steps, dt, bound, seed):
    """
    Uniform random amplitudes within +-10% of the bound
    """
    if not bound > 0:
        raise InvalidParameterError(f"amplitude bound must be > 0, got {bound}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    return ControlPulse(rng.uniform(-0.1 * bound, 0.1 * bound, size=(n_controls, n_steps)), dt)


def save_checkpoint(path, pulse, state, iteration, metadata=None):
    """
    Pulse and optimizer state as JSON
    """
    payload = {"iteration": int(iteration), "pulse": pulse.to_dict(), "optimizer": state.to_dict()}
    return write_json(path, payload, metadata or ResultMetadata())


def load_checkpoint(path):
    """
    :return: (pulse, OptimizerState, iteration)
    """
    document = read_json(path)
    return ControlPulse.from_dict(document["pulse"]), OptimizerState.from_dict(document["optimizer"]), \
        int(document["iteration"])


def _independent_fidelity(problem, pulse, opt_cfg, seed, iteration, settings, workers):
    """
    Pair-averaged fidelity on trajectories the training never saw
    """
    values = []
    for i, (psi0, target) in enumerate(problem.state_pairs):
        mean, _ = evaluate_pulse(problem.sys, pulse, psi0, target, opt_cfg.eval_batch_size,
                                 seed=derive_seed(seed, EVALUATION_STREAM, iteration, i),
                                 settings=settings, workers=workers)
        values.append(mean)
    return float(np.mean(values))


def optimize(problem, batch_cfg, opt_cfg, pulse, state=None, settings=None, workers=None, sink=None,
             metadata=None):
    """
    The training loop: batch gradient, ADAM update, clipping, log; stops at
    max_iterations, the target cost, or the target fidelity confirmed on an
    independent evaluation batch.
    :param problem: Problem
    :param batch_cfg: BatchConfig; its seed seeds the whole run
    :param opt_cfg: OptimizerConfig
    :param pulse: Initial ControlPulse
    :param state: OptimizerState to resume from
    :param sink: Called with every log entry
    :param metadata: ResultMetadata for checkpoint files
    :return: (final pulse, ConvergenceLog)
    """
    if pulse.n_controls != problem.sys.n_controls:
        raise ShapeMismatchError(f"pulse has {pulse.n_controls} controls, system has {problem.sys.n_controls}")
    settings = settings or PropagationSettings()
    state = state or opt_cfg.new_state(pulse.u.shape)
    log = ConvergenceLog(sink)
    pulse = pulse.clipped(opt_cfg.amplitude_bound)
    start = state.iteration
    logger.info("optimizing %s: N=%d, dt=%g ns, m_tot=%d, improved sampling %s", problem.sys.name,
                pulse.n_steps, pulse.dt, batch_cfg.m_tot, batch_cfg.improved_sampling)

    for iteration in range(start + 1, opt_cfg.max_iterations + 1):
        t0 = time.perf_counter()
        cfg = batch_cfg.with_seed(derive_seed(batch_cfg.seed, iteration))
        try:
            cost, gradient, terms, fidelity, p, m_sim = batch_cost_and_gradient(problem, pulse, cfg, settings,
                                                                                workers)
        except TaylorDivergenceError as ex:
            logger.error("iteration %d: propagation diverged at dt=%g ns (max|u|=%g); reduce dt or the bound",
                         iteration, pulse.dt, float(np.max(np.abs(pulse.u))))
            raise TaylorDivergenceError(f"iteration {iteration}, dt={pulse.dt}: {ex.message}") from ex
        u = adam_step(state, pulse.u, gradient)
        pulse = pulse.with_amplitudes(u).clipped(opt_cfg.amplitude_bound)
        log.append(iteration, cost, terms, fidelity, p, m_sim, time.perf_counter() - t0)
        logger.debug("iteration %d: cost %.6e, fidelity %.6f, p %.4f, m_sim %d", iteration, cost, fidelity, p,
                     m_sim)

        if opt_cfg.checkpoint_path and opt_cfg.checkpoint_every > 0 and iteration % opt_cfg.checkpoint_every == 0:
            save_checkpoint(opt_cfg.checkpoint_path, pulse, state, iteration, metadata)

        if opt_cfg.target_cost is not None and cost <= opt_cfg.target_cost:
            log.stop_reason = "target-cost"
            break
        if opt_cfg.target_fidelity is not None and problem.state_pairs and not problem.is_readout \
                and fidelity >= opt_cfg.target_fidelity:
            evaluated = _independent_fidelity(problem, pulse, opt_cfg, batch_cfg.seed, iteration, settings, workers)
            log.evaluated_fidelity = evaluated
            if evaluated >= opt_cfg.target_fidelity:
                log.stop_reason = "target-fidelity"
                break
    if log.stop_reason is None:
        log.stop_reason = "max-iterations"
    logger.info("optimization stopped after %d iterations (%s)", state.iteration, log.stop_reason)
    return pulse, log


def iterations_to_target(problem, batch_cfg, opt_cfg, pulse, settings=None, workers=None):
    """
    :return: (iterations used, reached target)
    """
    _, log = optimize(problem, batch_cfg, opt_cfg, pulse, settings=settings, workers=workers)
    return len(log), log.stop_reason == "target-fidelity"


def compare_sampling(problem, batch_cfg, opt_cfg, pulse, seeds, settings=None, workers=None):
    """
    Iterations needed to reach the target fidelity with and without improved
    sampling, per seed
    :return: dict with per-seed counts and the ratio of medians naive / improved
    """
    if opt_cfg.target_fidelity is None:
        raise MissingParameterError("compare_sampling needs a target fidelity")
    counts = {"improved": [], "naive": []}
    reached = {"improved": [], "naive": []}
    for seed in seeds:
        for label, improved in (("improved", True), ("naive", False)):
            cfg = BatchConfig(batch_cfg.m_tot, batch_cfg.cluster_width, seed, improved)
            n, ok = iterations_to_target(problem, cfg, opt_cfg, pulse, settings, workers)
            counts[label].append(n)
            reached[label].append(ok)
    ratio = float(np.median(counts["naive"]) / np.median(counts["improved"]))
    logger.info("sampling comparison: improved %s, naive %s, ratio %.2f", counts["improved"], counts["naive"],
                ratio)
    return {"counts": counts, "reached": reached, "ratio": ratio}
