#
# readout.py - diffusive homodyne trajectories and the single-shot classifier
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# The stochastic Schrodinger equation is integrated in its linear form driven
# by the measurement current, one Wiener process per decay channel:
#
#   dpsi = [sum_l sqrt(g_l) c_l dW_l + dt (-i H - D/2 + sum_l g_l c_l <c_l + c_l^dagger>)] psi
#
# with D = sum_l g_l c_l^dagger c_l, and renormalised after every step.
# Signals are recorded in the frame of the system (rotating for the default
# readout family).
#


import math
import logging
import numpy as np
from quantum_model import ControlPulse, hamiltonian_at_step, as_state, readout_state, FAMILY_READOUT
from trajectory_engine import trajectory_rng, derive_seed, parallel_map, simulate_ensemble, PropagationSettings
from oracles import steady_state
from traj_errors import SdeStepTooCoarseError, DegenerateFilterError, LengthMismatchError, EmptyEnsembleError, \
    InvalidParameterError, StateAnnihilatedError


logger = logging.getLogger(__name__)

# Largest norm change the Richardson correction may make in one step
DEFAULT_MAX_DRIFT = 1e-3
# Halvings of one sub-step before the drift check gives up
DEFAULT_MAX_REFINEMENTS = 12


class DiffusiveTrajectory:
    """
    One homodyne trajectory.
    states[j] is the normalised state after step j (states[0] = psi0),
    signal[j] = <a + a^dagger> at the start of step j + 1, wiener[j, l] is the
    full-step increment of channel l.
    """
    def __init__(self, states, signal, signals, wiener, dt, index=0):
        self.states = states
        self.signal = signal
        self.signals = signals
        self.wiener = wiener
        self.dt = dt
        self.index = index

    @property
    def n_steps(self):
        return len(self.signal)

    @property
    def final_state(self):
        return self.states[-1]


def default_signal_operator(sys):
    """
    a + a^dagger for the readout family, c + c^dagger of the first channel otherwise
    """
    operators = sys.metadata.get("operators", {})
    if "a" in operators:
        a = operators["a"]
    elif sys.n_channels:
        a = sys.channels[0][0]
    else:
        raise InvalidParameterError("no signal operator: the system has neither an 'a' operator nor channels")
    return a + a.dagger()


def _em_step(h, decay, channels, psi, dt, dws):
    """
    One Euler-Maruyama step of the linear SSE
    """
    out = psi + dt * (-1j * (h @ psi) - 0.5 * (decay @ psi))
    norm2 = float(np.vdot(psi, psi).real)
    for (c, rate), dw in zip(channels, dws):
        c_psi = c @ psi
        quadrature = 2.0 * float(np.vdot(psi, c_psi).real) / norm2
        out = out + c_psi * (rate * quadrature * dt + math.sqrt(rate) * dw)
    return out


def _substeps(h, decay, psi, dt, max_drift):
    """
    Sub-steps of a pulse step that keep the deterministic half-step error,
    about (dt |G psi|)^2 / 4 with G = H - i D/2, a quarter below max_drift
    """
    action = np.linalg.norm(h @ psi - 0.5j * (decay @ psi))
    return max(1, int(math.ceil(dt * action / math.sqrt(max_drift))))


def _richardson_step(h, decay, channels, psi, step, dw_a, dw_b, rng, max_drift, refinements, j):
    """
    Advance psi over one (sub-)step with half-step increments dw_a, dw_b. A
    step whose Richardson correction changes the norm by more than max_drift
    is halved, its increments split along the Brownian bridge.
    :return: The normalised state at the end of the step
    """
    half = 0.5 * step
    full = _em_step(h, decay, channels, psi, step, dw_a + dw_b)
    halves = _em_step(h, decay, channels, _em_step(h, decay, channels, psi, half, dw_a), half, dw_b)
    combined = 2.0 * halves - full
    n_half = np.linalg.norm(halves)
    n_combined = np.linalg.norm(combined)
    if n_combined == 0.0:
        raise StateAnnihilatedError(f"diffusive state vanished at step {j}")
    drift = abs(n_combined / n_half - 1.0)
    if drift <= max_drift:
        return combined / n_combined
    if refinements == 0:
        raise SdeStepTooCoarseError(f"norm drift {drift:.2e} at step {j} exceeds {max_drift:.1e} "
                                    f"with a sub-step of {step:.3e} ns; reduce dt")
    # midpoint of a Brownian increment over half given its total: total / 2 + N(0, half / 4)
    sd = math.sqrt(0.25 * half)
    for dw in (dw_a, dw_b):
        first = 0.5 * dw + rng.normal(0.0, sd, size=dw.shape)
        psi = _richardson_step(h, decay, channels, psi, half, first, dw - first, rng, max_drift, refinements - 1, j)
    return psi


def simulate_diffusive(sys, pulse, psi0, rng, signal_operator=None, signal_operators=None,
                       max_drift=DEFAULT_MAX_DRIFT, index=0, substeps=None, max_refinements=DEFAULT_MAX_REFINEMENTS):
    """
    Euler-Maruyama with Richardson extrapolation: one full step with
    dW = dW_a + dW_b and two half steps with dW_a, dW_b combine to
    2 (half steps) - (full step). Pulse steps are split into sub-steps of
    equal length, chosen per step from the state unless substeps is given.
    :param rng: numpy Generator
    :param signal_operator: Operator of the homodyne signal (default_signal_operator)
    :param signal_operators: Extra [(name, operator)] recorded like the signal
    :param max_drift: Largest norm change of the Richardson correction per sub-step
    :param substeps: Fixed number of sub-steps per pulse step, None for automatic
    :param max_refinements: How often a sub-step may be halved before giving up
    :return: DiffusiveTrajectory
    """
    if not max_drift > 0:
        raise InvalidParameterError(f"max_drift must be > 0, got {max_drift}")
    if substeps is not None and int(substeps) < 1:
        raise InvalidParameterError(f"substeps must be >= 1, got {substeps}")
    psi = as_state(psi0, sys.dim)
    dt = pulse.dt
    n_steps = pulse.n_steps
    signal_op = (signal_operator or default_signal_operator(sys)).raw
    extra = [(name, op.raw) for name, op in (signal_operators or [])]
    channels = [(c.raw, rate) for c, rate in sys.channels if rate > 0]
    decay = sys.decay_operator.raw

    states = np.empty((n_steps + 1, sys.dim), dtype=np.complex128)
    states[0] = psi
    signal = np.empty(n_steps)
    signals = {name: np.empty(n_steps) for name, _ in extra}
    wiener = np.zeros((n_steps, len(channels)))
    for j in range(1, n_steps + 1):
        signal[j - 1] = float(np.vdot(psi, signal_op @ psi).real)
        for name, op in extra:
            signals[name][j - 1] = float(np.vdot(psi, op @ psi).real)
        h = hamiltonian_at_step(sys, pulse, j).raw
        n_sub = int(substeps) if substeps is not None else _substeps(h, decay, psi, dt, max_drift)
        step = dt / n_sub
        sd = math.sqrt(0.5 * step)
        for _ in range(n_sub):
            draws = rng.normal(0.0, sd, size=(2, len(channels)))
            wiener[j - 1] += draws[0] + draws[1]
            psi = _richardson_step(h, decay, channels, psi, step, draws[0], draws[1], rng, max_drift,
                                   int(max_refinements), j)
        states[j] = psi
    return DiffusiveTrajectory(states, signal, signals, wiener, dt, index)


def _diffusive_worker(sys, pulse, psi0, seed, index, signal_operator, signal_operators, max_drift, substeps):
    return simulate_diffusive(sys, pulse, psi0, trajectory_rng(seed, index), signal_operator=signal_operator,
                              signal_operators=signal_operators, max_drift=max_drift, index=index,
                              substeps=substeps)


def simulate_diffusive_ensemble(sys, pulse, psi0, M, seed, signal_operator=None, signal_operators=None,
                                max_drift=DEFAULT_MAX_DRIFT, workers=None, substeps=None):
    """
    M diffusive trajectories; trajectory i draws from stream (seed, i)
    :return: List of DiffusiveTrajectory in index order
    """
    if int(M) < 1:
        raise EmptyEnsembleError("M must be >= 1")
    jobs = [(sys, pulse, psi0, seed, i, signal_operator, signal_operators, max_drift, substeps)
            for i in range(int(M))]
    return parallel_map(_diffusive_worker, jobs, workers)


class FilterKernel:
    """
    Real per-step weights K(t_j) of the linear filter
    """
    def __init__(self, weights, dt):
        w = np.asarray(weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise DegenerateFilterError("filter kernel has non-finite weights")
        if not np.any(w != 0.0):
            raise DegenerateFilterError("filter kernel is identically zero")
        self.weights = w
        self.dt = float(dt)

    def __len__(self):
        return self.weights.size


def integrate_filtered(signal, kernel, dt=None):
    """
    S = sum_j s(t_j) K(t_j) dt, the left-Riemann form of the filtered integral
    :param signal: Samples s(t_j), j = 0..N-1
    :param kernel: FilterKernel or array of weights
    :param dt: Step (taken from the kernel when it is a FilterKernel)
    :return: S
    """
    s = np.asarray(signal, dtype=float).reshape(-1)
    if isinstance(kernel, FilterKernel):
        weights = kernel.weights
        dt = kernel.dt if dt is None else dt
    else:
        weights = np.asarray(kernel, dtype=float).reshape(-1)
    if dt is None:
        raise InvalidParameterError("integrate_filtered needs dt")
    if s.size != weights.size:
        raise LengthMismatchError(f"signal of length {s.size}, kernel of length {weights.size}")
    return float(np.dot(s, weights) * dt)


def build_filter(signals0, signals1, dt):
    """
    K(t) = mean s_0(t) - mean s_1(t), normalised to unit Euclidean norm
    :param signals0: M0 x N signals of the |0> ensemble
    :param signals1: M1 x N signals of the |1> ensemble
    :return: FilterKernel
    """
    s0 = np.atleast_2d(np.asarray(signals0, dtype=float))
    s1 = np.atleast_2d(np.asarray(signals1, dtype=float))
    if s0.size == 0 or s1.size == 0:
        raise EmptyEnsembleError("both signal ensembles need at least one trajectory")
    if s0.shape[1] != s1.shape[1]:
        raise LengthMismatchError(f"signals of length {s0.shape[1]} and {s1.shape[1]}")
    kernel = s0.mean(axis=0) - s1.mean(axis=0)
    norm = np.linalg.norm(kernel)
    if norm == 0.0:
        raise DegenerateFilterError("the two ensembles have identical mean signals")
    return FilterKernel(kernel / norm, dt)


class ClassifierResult:
    """
    Threshold classifier of integrated signals.
    fidelity = 1 - (p(0|1) + p(1|0)) / 2 on the held-out samples.
    """
    def __init__(self, threshold, fidelity, samples0, samples1, p01, p10, above_class, noise_level=None):
        self.threshold = float(threshold)
        self.fidelity = float(fidelity)
        self.samples0 = np.asarray(samples0, dtype=float)
        self.samples1 = np.asarray(samples1, dtype=float)
        # p01 is p(0|1), p10 is p(1|0)
        self.p01 = float(p01)
        self.p10 = float(p10)
        # class decided for samples above the threshold
        self.above_class = int(above_class)
        self.noise_level = noise_level

    def predict(self, samples):
        s = np.asarray(samples, dtype=float)
        return np.where(s > self.threshold, self.above_class, 1 - self.above_class)

    def to_dict(self):
        return {"threshold": self.threshold, "fidelity": self.fidelity, "p01": self.p01, "p10": self.p10,
                "above_class": self.above_class, "noise_level": self.noise_level,
                "n0": int(self.samples0.size), "n1": int(self.samples1.size)}


def _split(samples):
    if samples.size >= 4:
        return samples[0::2], samples[1::2]
    return samples, samples


def _best_threshold(fit0, fit1):
    pooled = np.unique(np.concatenate([fit0, fit1]))
    if pooled.size == 1:
        return float(pooled[0])
    candidates = 0.5 * (pooled[1:] + pooled[:-1])
    s0 = np.sort(fit0)
    s1 = np.sort(fit1)
    cdf0 = np.searchsorted(s0, candidates, side="right") / s0.size
    cdf1 = np.searchsorted(s1, candidates, side="right") / s1.size
    return float(candidates[int(np.argmax(np.abs(cdf0 - cdf1)))])


def classify(samples0, samples1, noise_level=None):
    """
    Threshold at the largest separation of the two empirical CDFs, fitted on
    every other sample and scored on the rest (all samples when a class has
    fewer than 4)
    :param samples0: Integrated signals of the |0> ensemble
    :param samples1: Integrated signals of the |1> ensemble
    :return: ClassifierResult
    """
    x0 = np.asarray(samples0, dtype=float).reshape(-1)
    x1 = np.asarray(samples1, dtype=float).reshape(-1)
    if x0.size == 0 or x1.size == 0:
        raise EmptyEnsembleError("both classes need at least one sample")
    fit0, held0 = _split(x0)
    fit1, held1 = _split(x1)
    threshold = _best_threshold(fit0, fit1)
    above = 0 if fit0.mean() > fit1.mean() else 1
    # p(0|1): a |1> sample decided as 0, p(1|0) likewise
    above0 = float(np.mean(held0 > threshold))
    above1 = float(np.mean(held1 > threshold))
    if above == 0:
        p01, p10 = above1, 1.0 - above0
    else:
        p01, p10 = 1.0 - above1, above0
    fidelity = 1.0 - 0.5 * (p01 + p10)
    if fidelity < 0.5:
        above = 1 - above
        p01, p10 = 1.0 - p01, 1.0 - p10
        fidelity = 1.0 - 0.5 * (p01 + p10)
    return ClassifierResult(threshold, fidelity, x0, x1, p01, p10, above, noise_level)


def add_noise(samples, noise_power, rng):
    """
    Zero-mean white Gaussian noise of variance noise_power on every sample
    :return: New array (a copy when noise_power is 0)
    """
    if noise_power < 0:
        raise InvalidParameterError(f"noise power must be >= 0, got {noise_power}")
    x = np.array(samples, dtype=float)
    if noise_power == 0:
        return x
    return x + rng.normal(0.0, math.sqrt(noise_power), size=x.shape)


class ReferenceAmplitude:
    """
    A_ph, the drive amplitude of one steady-state photon, and P_ref, the
    signal power of that steady state
    """
    def __init__(self, a_ph, p_ref, n_unit):
        self.a_ph = float(a_ph)
        self.p_ref = float(p_ref)
        # steady-state photons at drive amplitude 1
        self.n_unit = float(n_unit)

    def amplitude(self, n_photons):
        """
        A_n = sqrt(n) A_ph
        """
        if n_photons < 0:
            raise InvalidParameterError(f"photon number must be >= 0, got {n_photons}")
        return math.sqrt(n_photons) * self.a_ph

    def noise_power(self, n):
        """
        P_n = n P_ref
        """
        return n * self.p_ref


def reference_amplitude(sys):
    """
    Steady state at drive amplitude 1 gives n_1 photons, A_ph = 1/sqrt(n_1).
    P_ref = <a + a^dagger>^2 in the steady state at A_ph, or the coherent
    state value 4 n when the phase makes the quadrature vanish.
    :return: ReferenceAmplitude
    """
    if sys.name != FAMILY_READOUT:
        raise InvalidParameterError("reference amplitudes are defined for the readout family")
    operators = sys.metadata["operators"]
    n_a = operators["n_a"].toarray()
    x = (operators["a"] + operators["a"].dagger()).toarray()
    rho_unit = steady_state(sys, [1.0]).rho
    n_unit = float(np.real(np.trace(n_a @ rho_unit)))
    if not n_unit > 0:
        raise InvalidParameterError("the drive puts no photons in the resonator")
    a_ph = 1.0 / math.sqrt(n_unit)
    rho = steady_state(sys, [a_ph]).rho
    n_ph = float(np.real(np.trace(n_a @ rho)))
    p_ref = float(np.real(np.trace(x @ rho))) ** 2
    if p_ref < 1e-3 * 4.0 * n_ph:
        p_ref = 4.0 * n_ph
    logger.info("reference amplitude A_ph=%.6g rad/ns (%.4f photons), P_ref=%.6g", a_ph, n_ph, p_ref)
    return ReferenceAmplitude(a_ph, p_ref, n_unit)


def constant_pulse(n_photons, n_steps, dt, a_ph):
    """
    Square pulse of amplitude A_n = sqrt(n) A_ph
    """
    amplitude = math.sqrt(n_photons) * (a_ph.a_ph if isinstance(a_ph, ReferenceAmplitude) else float(a_ph))
    return ControlPulse(np.full((1, n_steps), amplitude), dt)


def readout_ensembles(sys, pulse, M, seed, workers=None):
    """
    Diffusive signals of the |0> and |1> ensembles
    :return: (M x N signals of |0>, M x N signals of |1>)
    """
    out = []
    for level in (0, 1):
        trajectories = simulate_diffusive_ensemble(sys, pulse, readout_state(sys, level), M,
                                                   derive_seed(seed, level), workers=workers)
        out.append(np.array([t.signal for t in trajectories]))
    return out[0], out[1]


def readout_fidelity_sweep(sys, pulse, M, noise_levels, seed, reference=None, workers=None):
    """
    Classifier fidelity of a readout pulse for a range of normalised noise
    powers. The filter is built from the noiseless ensemble means; noise of
    power P_n = n P_ref is added per time sample before integration.
    :param noise_levels: Values of n
    :param reference: ReferenceAmplitude (computed when None)
    :return: (list of ClassifierResult, FilterKernel)
    """
    reference = reference or reference_amplitude(sys)
    signals0, signals1 = readout_ensembles(sys, pulse, M, seed, workers)
    kernel = build_filter(signals0, signals1, pulse.dt)
    results = []
    for i, level in enumerate(noise_levels):
        rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, 2, i)))
        power = reference.noise_power(level)
        noisy0 = add_noise(signals0, power, rng)
        noisy1 = add_noise(signals1, power, rng)
        s0 = [integrate_filtered(s, kernel) for s in noisy0]
        s1 = [integrate_filtered(s, kernel) for s in noisy1]
        result = classify(s0, s1, noise_level=level)
        logger.info("noise level P%g: fidelity %.4f, threshold %.4g", level, result.fidelity, result.threshold)
        results.append(result)
    return results, kernel


def occupation_traces(sys, pulse, M, seed, settings=None, workers=None):
    """
    Trajectory-averaged resonator photons <a^dagger a> and qubit excitation
    <b^dagger b> at every step for both initial qubit states
    :return: {level: {"n_a": (mean, error), "n_b": (mean, error)}} with arrays of length N + 1
    """
    operators = sys.metadata["operators"]
    signal_operators = [("n_a", operators["n_a"]), ("n_b", operators["n_b"])]
    settings = settings or PropagationSettings()
    traces = {}
    for level in (0, 1):
        results = simulate_ensemble(sys, pulse, readout_state(sys, level), M, derive_seed(seed, level),
                                    settings=settings, signal_operators=signal_operators, workers=workers)
        traces[level] = {}
        for name, op in signal_operators:
            dense = op.toarray()
            rows = []
            for r in results:
                final = float(np.vdot(r.final_state, dense @ r.final_state).real)
                rows.append(np.append(r.signals[name], final))
            rows = np.array(rows)
            error = rows.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.full(rows.shape[1], math.inf)
            traces[level][name] = (rows.mean(axis=0), error)
    return traces
