#
# lambda_baselines.py - two-tone Raman reference protocol for the Lambda system
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Levels are indexed 0, 1, 2 for |1>, |2>, |3>; |2> is the intermediate level.
#


import logging
import numpy as np
from quantum_model import ControlPulse, FAMILY_LAMBDA
from oracles import lindblad_propagate, DensityMatrix
from traj_errors import InvalidParameterError


logger = logging.getLogger(__name__)

INTERMEDIATE_LEVEL = 1


class RamanResult:
    """
    Best point of a Raman grid search and the full fidelity grid
    """
    def __init__(self, detuning, amplitude, fidelity, peak_occupation, fidelities, detunings, amplitudes):
        self.detuning = float(detuning)
        self.amplitude = float(amplitude)
        self.fidelity = float(fidelity)
        self.peak_occupation = float(peak_occupation)
        # fidelities[i, k] for detunings[i], amplitudes[k]; nan where the cap excluded the amplitude
        self.fidelities = fidelities
        self.detunings = np.asarray(detunings, dtype=float)
        self.amplitudes = np.asarray(amplitudes, dtype=float)

    def to_dict(self):
        return {"detuning": self.detuning, "amplitude": self.amplitude, "fidelity": self.fidelity,
                "peak_occupation": self.peak_occupation}


def raman_pulse(params, detuning, amplitude, n_steps, dt):
    """
    zeta(t) = A [cos((w2 - w1 - d) t) + cos((w2 - w3 - d) t)] sampled at the step start times
    :param params: Lambda system parameters (omega1, omega2, omega3) in rad/ns
    :param detuning: d in rad/ns, both tones sit d below their transitions
    :param amplitude: A in rad/ns
    :return: ControlPulse with one control
    """
    t = np.arange(n_steps) * dt
    w12 = params["omega2"] - params["omega1"] - detuning
    w32 = params["omega2"] - params["omega3"] - detuning
    return ControlPulse(amplitude * (np.cos(w12 * t) + np.cos(w32 * t)), dt)


def peak_occupation(sys, pulse, rho0, level=INTERMEDIATE_LEVEL):
    """
    max_j rho_j[level, level] over the Lindblad trajectory
    """
    trajectory = lindblad_propagate(sys, pulse, rho0)
    return max(rho.population(level) for rho in trajectory)


def _evaluate(sys, pulse, rho0, target):
    trajectory = lindblad_propagate(sys, pulse, rho0)
    fidelity = float(np.real(np.vdot(target, trajectory[-1].rho @ target)))
    peak = max(rho.population(INTERMEDIATE_LEVEL) for rho in trajectory)
    return fidelity, peak


def raman_grid_search(sys, psi0, psi_target, n_steps, dt, detunings, amplitudes, bound=None):
    """
    Constant-detuning two-tone drive scanned over detuning x amplitude with the
    dense Lindblad oracle. Amplitudes whose peak 2 A exceeds the bound are skipped.
    :return: RamanResult of the highest fidelity
    """
    if sys.name != FAMILY_LAMBDA:
        raise InvalidParameterError("the Raman baseline needs a lambda system")
    params = sys.metadata["params"]
    rho0 = DensityMatrix.from_state(psi0)
    target = np.asarray(psi_target, dtype=np.complex128).reshape(-1)
    target = target / np.linalg.norm(target)
    fidelities = np.full((len(detunings), len(amplitudes)), np.nan)
    best = None
    for i, detuning in enumerate(detunings):
        for k, amplitude in enumerate(amplitudes):
            if bound is not None and 2.0 * abs(amplitude) > bound:
                continue
            pulse = raman_pulse(params, detuning, amplitude, n_steps, dt)
            fidelity, peak = _evaluate(sys, pulse, rho0, target)
            fidelities[i, k] = fidelity
            if best is None or fidelity > best[2]:
                best = (detuning, amplitude, fidelity, peak)
    if best is None:
        raise InvalidParameterError("every amplitude of the grid exceeds the amplitude bound")
    logger.info("best Raman drive: detuning %.4g rad/ns, amplitude %.4g rad/ns, fidelity %.4f, peak |2> %.4f",
                *best)
    return RamanResult(*best, fidelities, detunings, amplitudes)
