#
# run_config.py - run configuration files
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# A run configuration is one JSON document:
#   {
#     "name": "transmon-closed",
#     "seed": 1234,
#     "system": {"family": "transmon", "params": {"omega_ge": {"value": 3.9, "unit": "GHz"}}},
#     "pulse": {"n_steps": 200, "duration": {"value": 10, "unit": "ns"}, "init": "random",
#               "amplitude_bound": {"value": 0.5, "unit": "GHz"}},
#     "states": [{"initial": 0, "target": 1}],
#     "costs": [{"kind": "C1"}, {"kind": "C6", "weight": 1e-4}],
#     "batch": {"m_tot": 10, "improved_sampling": true},
#     "optimizer": {"learning_rate": 0.01, "max_iterations": 1000, "target_fidelity": 0.999},
#     "simulate": {"trajectories": 1000, "sample_times": 20},
#     "classify": {"trajectories": 200, "noise_levels": [0, 5, 10, 20]},
#     "output": {"dir": "results"}
#   }
# Quantities take {"value": v, "unit": u} or a bare number in internal units.
# Serialized configurations state every quantity in internal units.
#


import json
import math
import hashlib
import logging
import numpy as np
from configuration import Configuration
from linalg_core import ComplexMatrix
from quantum_model import OpenSystem, ControlPulse, build_system, basis, readout_state, \
    FAMILY_TRANSMON, FAMILY_LAMBDA, FAMILY_READOUT
from costs import CostTerm, CostSpec, ALL_KINDS, C1, C3, READOUT_KINDS
from trajectory_engine import BatchConfig
from optimizer import random_initial_pulse
from readout import constant_pulse, reference_amplitude
from results_writer import read_json
from units import to_internal, KIND_FREQUENCY, KIND_RATE, KIND_TIME, KIND_DIMENSIONLESS
from traj_errors import ConfigError, TrajGrapeError


logger = logging.getLogger(__name__)

FAMILY_EXPLICIT = "explicit"

# Quantity kind of every factory parameter, None for plain values
PARAM_KINDS = {
    FAMILY_TRANSMON: {"levels": None, "omega_ge": KIND_FREQUENCY, "alpha": KIND_FREQUENCY, "t1": KIND_TIME},
    FAMILY_LAMBDA: {"omega1": KIND_FREQUENCY, "omega2": KIND_FREQUENCY, "omega3": KIND_FREQUENCY,
                    "alpha": KIND_DIMENSIONLESS, "t1": KIND_TIME, "branching": KIND_DIMENSIONLESS},
    FAMILY_READOUT: {"resonator_levels": None, "qubit_levels": None, "omega_q": KIND_FREQUENCY,
                     "omega_r": KIND_FREQUENCY, "omega_d": KIND_FREQUENCY, "g": KIND_FREQUENCY,
                     "alpha": KIND_FREQUENCY, "kappa": KIND_RATE, "gamma": KIND_RATE, "frame": None},
}

# Plain integer parameters
LEVEL_PARAMS = ("levels", "resonator_levels", "qubit_levels")

# Unit written for each kind when serializing
INTERNAL_UNITS = {KIND_FREQUENCY: "rad/ns", KIND_RATE: "1/ns", KIND_TIME: "ns", KIND_DIMENSIONLESS: ""}

PULSE_INITS = ("random", "zeros", "constant", "readout-constant", "file")

TOP_LEVEL_KEYS = ("name", "seed", "system", "pulse", "states", "costs", "batch", "optimizer", "simulate",
                  "classify", "output", "full_scale")

BATCH_DEFAULTS = {"m_tot": 10, "cluster_width": 1, "improved_sampling": True}
OPTIMIZER_DEFAULTS = {"learning_rate": 1e-2, "beta1": 0.9, "beta2": 0.999, "eps_div": 1e-8,
                      "max_iterations": 1000, "target_fidelity": None, "target_cost": None,
                      "checkpoint_every": None}
SIMULATE_DEFAULTS = {"trajectories": 1000, "sample_times": 20, "cluster_width": 8}
CLASSIFY_DEFAULTS = {"trajectories": 200, "noise_levels": [0, 5, 10, 20], "reference_photons": None}
OUTPUT_DEFAULTS = {"dir": "results"}

# Value type of the numeric and flag entries; a trailing "?" allows null
SECTION_TYPES = {
    "batch": {"m_tot": "int", "cluster_width": "int", "improved_sampling": "bool"},
    "optimizer": {"learning_rate": "float", "beta1": "float", "beta2": "float", "eps_div": "float",
                  "max_iterations": "int", "target_fidelity": "float?", "target_cost": "float?",
                  "checkpoint_every": "int?"},
    "simulate": {"trajectories": "int", "sample_times": "int", "cluster_width": "int"},
    "classify": {"trajectories": "int", "reference_photons": "float?"},
}


def _quantity(value, kind, field):
    if value is None:
        return None
    if kind is None:
        return value
    return to_internal(value, kind, field=field)


def _internal(value, kind):
    if value is None or kind is None:
        return value
    return {"value": value, "unit": INTERNAL_UNITS[kind]}


def _number(value, field, integer=False):
    """
    A finite JSON number; integers also accept integral floats such as 10.0
    :raises ConfigError: naming field for strings, booleans and the like
    """
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"expected {'an integer' if integer else 'a number'}, got {value!r}", field=field)
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"expected an integer, got {value!r}", field=field)
        return int(value)
    return float(value)


def _flag(value, field):
    if not isinstance(value, bool):
        raise ConfigError(f"expected true or false, got {value!r}", field=field)
    return value


def _typed(value, value_type, field):
    if value_type.endswith("?"):
        if value is None:
            return None
        value_type = value_type[:-1]
    if value_type == "bool":
        return _flag(value, field)
    return _number(value, field, integer=value_type == "int")


def _section(document, key, defaults):
    section = document.get(key, {}) or {}
    if not isinstance(section, dict):
        raise ConfigError("expected an object", field=key)
    for name in section:
        if name not in defaults:
            raise ConfigError(f"unknown key '{name}'", field=f"{key}.{name}")
    merged = dict(defaults)
    merged.update(section)
    return merged


def _matrix(value, field):
    """
    {"re": [[...]], "im": [[...]]} or a real nested list
    """
    try:
        if isinstance(value, dict):
            return np.array(value["re"], dtype=float) + 1j * np.array(value.get("im", 0.0), dtype=float)
        return np.array(value, dtype=complex)
    except (KeyError, TypeError, ValueError):
        raise ConfigError("expected a matrix as nested lists or {\"re\", \"im\"}", field=field)


def _state_vector(spec, sys, field):
    """
    A level index, {"level": k}, {"qubit_level": k} (readout) or a list of amplitudes
    (numbers or [re, im] pairs)
    """
    try:
        if isinstance(spec, bool):
            raise ConfigError("expected a state", field=field)
        if isinstance(spec, int):
            return basis(sys.dim, spec)
        if isinstance(spec, dict) and "level" in spec:
            return basis(sys.dim, int(spec["level"]))
        if isinstance(spec, dict) and "qubit_level" in spec:
            return readout_state(sys, int(spec["qubit_level"]))
        if isinstance(spec, list):
            amplitudes = [complex(a[0], a[1]) if isinstance(a, list) else complex(a) for a in spec]
            v = np.array(amplitudes, dtype=np.complex128)
            if v.size != sys.dim:
                raise ConfigError(f"state of dimension {v.size}, system dimension {sys.dim}", field=field)
            return v / np.linalg.norm(v)
    except ConfigError:
        raise
    except (TrajGrapeError, TypeError, ValueError, IndexError) as ex:
        raise ConfigError(f"invalid state: {ex}", field=field)
    raise ConfigError("expected a level index, {\"level\": k} or a list of amplitudes", field=field)


class RunConfig:
    """
    A parsed and validated run configuration. Every quantity is held in
    internal units.
    """
    def __init__(self, document, source="<memory>"):
        if not isinstance(document, dict):
            raise ConfigError("the configuration must be a JSON object")
        for key in document:
            if key not in TOP_LEVEL_KEYS:
                raise ConfigError(f"unknown key '{key}'", field=key)
        self.source = source
        self.name = str(document.get("name", "run"))
        seed = document.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer", field="seed")
        self.seed = seed
        if "full_scale" in document:
            if not isinstance(document["full_scale"], bool):
                raise ConfigError("full_scale must be true or false", field="full_scale")
            self.full_scale = document["full_scale"]
        else:
            self.full_scale = Configuration.to_bool(Configuration.get(Configuration.CFG_FULL_SCALE))
        self._parse_system(document.get("system"))
        self._parse_pulse(document.get("pulse"))
        self.states = list(document.get("states", []) or [])
        for i, pair in enumerate(self.states):
            if not isinstance(pair, dict) or "initial" not in pair or "target" not in pair:
                raise ConfigError("expected {\"initial\": ..., \"target\": ...}", field=f"states[{i}]")
        self._parse_costs(document.get("costs"))
        self.batch = _section(document, "batch", BATCH_DEFAULTS)
        self.optimizer = _section(document, "optimizer", OPTIMIZER_DEFAULTS)
        self.simulate = _section(document, "simulate", SIMULATE_DEFAULTS)
        self.classify = _section(document, "classify", CLASSIFY_DEFAULTS)
        self.output = _section(document, "output", OUTPUT_DEFAULTS)
        self._validate_sections()

    def _parse_system(self, system):
        if not isinstance(system, dict) or "family" not in system:
            raise ConfigError("a system with a family is required", field="system")
        for key in system:
            if key not in ("family", "params", "h0", "controls", "channels"):
                raise ConfigError(f"unknown key '{key}'", field=f"system.{key}")
        self.family = system["family"]
        if self.family == FAMILY_EXPLICIT:
            if "h0" not in system or "controls" not in system:
                raise ConfigError("an explicit system needs h0 and controls", field="system")
            self.explicit = {
                "h0": _matrix(system["h0"], "system.h0"),
                "controls": [_matrix(c, f"system.controls[{i}]") for i, c in enumerate(system["controls"])],
                "channels": [],
            }
            for i, channel in enumerate(system.get("channels", []) or []):
                if not isinstance(channel, dict) or "op" not in channel or "rate" not in channel:
                    raise ConfigError("expected {\"op\": ..., \"rate\": ...}", field=f"system.channels[{i}]")
                self.explicit["channels"].append((_matrix(channel["op"], f"system.channels[{i}].op"),
                                                  to_internal(channel["rate"], KIND_RATE,
                                                              field=f"system.channels[{i}].rate")))
            self.params = {}
            return
        if self.family not in PARAM_KINDS:
            raise ConfigError(f"unknown system family '{self.family}'", field="system.family")
        self.explicit = None
        params = system.get("params", {}) or {}
        kinds = PARAM_KINDS[self.family]
        self.params = {}
        for key, value in params.items():
            if key not in kinds:
                raise ConfigError(f"unknown parameter '{key}' for system family {self.family}",
                                  field=f"system.params.{key}")
            if key in LEVEL_PARAMS:
                self.params[key] = _number(value, f"system.params.{key}", integer=True)
            else:
                self.params[key] = _quantity(value, kinds[key], f"system.params.{key}")

    def _parse_pulse(self, pulse):
        if not isinstance(pulse, dict):
            raise ConfigError("a pulse section is required", field="pulse")
        for key in pulse:
            if key not in ("n_steps", "dt", "duration", "init", "amplitude_bound", "amplitude", "photons", "file"):
                raise ConfigError(f"unknown key '{key}'", field=f"pulse.{key}")
        n_steps = pulse.get("n_steps")
        if not isinstance(n_steps, int) or isinstance(n_steps, bool) or n_steps < 1:
            raise ConfigError("n_steps must be a positive integer", field="pulse.n_steps")
        self.n_steps = n_steps
        if ("dt" in pulse) == ("duration" in pulse):
            raise ConfigError("give exactly one of dt and duration", field="pulse")
        if "dt" in pulse:
            self.dt = to_internal(pulse["dt"], KIND_TIME, field="pulse.dt")
        else:
            self.dt = to_internal(pulse["duration"], KIND_TIME, field="pulse.duration") / n_steps
        if not self.dt > 0:
            raise ConfigError("dt must be > 0", field="pulse")
        self.pulse_init = pulse.get("init", "random")
        if self.pulse_init not in PULSE_INITS:
            raise ConfigError(f"unknown pulse init '{self.pulse_init}', expected one of {', '.join(PULSE_INITS)}",
                              field="pulse.init")
        self.amplitude_bound = _quantity(pulse.get("amplitude_bound"), KIND_FREQUENCY, "pulse.amplitude_bound")
        if self.amplitude_bound is not None and not self.amplitude_bound > 0:
            raise ConfigError("amplitude_bound must be > 0", field="pulse.amplitude_bound")
        self.pulse_amplitude = _quantity(pulse.get("amplitude"), KIND_FREQUENCY, "pulse.amplitude")
        self.pulse_photons = pulse.get("photons")
        if self.pulse_photons is not None:
            self.pulse_photons = _number(self.pulse_photons, "pulse.photons")
        self.pulse_file = pulse.get("file")
        if self.pulse_init == "random" and self.amplitude_bound is None:
            raise ConfigError("a random initial pulse needs amplitude_bound", field="pulse.amplitude_bound")
        if self.pulse_init == "constant" and self.pulse_amplitude is None:
            raise ConfigError("a constant pulse needs amplitude", field="pulse.amplitude")
        if self.pulse_init == "readout-constant" and self.pulse_photons is None:
            raise ConfigError("a readout-constant pulse needs photons", field="pulse.photons")
        if self.pulse_init == "file" and not self.pulse_file:
            raise ConfigError("a file pulse needs file", field="pulse.file")

    def _parse_costs(self, costs):
        if not isinstance(costs, list) or not costs:
            raise ConfigError("at least one cost term is required", field="costs")
        self.costs = []
        for i, term in enumerate(costs):
            field = f"costs[{i}]"
            if not isinstance(term, dict) or "kind" not in term:
                raise ConfigError("expected {\"kind\": ...}", field=field)
            for key in term:
                if key not in ("kind", "weight", "target", "forbidden", "operator", "sigma", "padded"):
                    raise ConfigError(f"unknown key '{key}'", field=f"{field}.{key}")
            if term["kind"] not in ALL_KINDS:
                raise ConfigError(f"unknown cost kind '{term['kind']}'", field=f"{field}.kind")
            checked = dict(term)
            for name in ("weight", "sigma"):
                if checked.get(name) is not None:
                    checked[name] = _number(checked[name], f"{field}.{name}")
            if "padded" in checked:
                checked["padded"] = _flag(checked["padded"], f"{field}.padded")
            self.costs.append(checked)

    def _validate_sections(self):
        for key, section in (("batch", self.batch), ("optimizer", self.optimizer), ("simulate", self.simulate),
                             ("classify", self.classify)):
            for name, value_type in SECTION_TYPES[key].items():
                section[name] = _typed(section[name], value_type, f"{key}.{name}")
        levels = self.classify["noise_levels"]
        if not isinstance(levels, list) or not levels:
            raise ConfigError("expected a non-empty list of noise levels", field="classify.noise_levels")
        self.classify["noise_levels"] = [_number(v, f"classify.noise_levels[{i}]") for i, v in enumerate(levels)]
        if not isinstance(self.output["dir"], str) or not self.output["dir"]:
            raise ConfigError("expected a directory name", field="output.dir")

        if self.batch["m_tot"] < 1:
            raise ConfigError("m_tot must be >= 1", field="batch.m_tot")
        if self.batch["cluster_width"] < 1:
            raise ConfigError("cluster_width must be >= 1", field="batch.cluster_width")
        if self.optimizer["max_iterations"] < 1:
            raise ConfigError("max_iterations must be >= 1", field="optimizer.max_iterations")
        if not self.optimizer["learning_rate"] > 0:
            raise ConfigError("learning_rate must be > 0", field="optimizer.learning_rate")
        for name in ("beta1", "beta2"):
            if not 0.0 <= self.optimizer[name] < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)", field=f"optimizer.{name}")
        target = self.optimizer["target_fidelity"]
        if target is not None and not 0.0 < target <= 1.0:
            raise ConfigError("target_fidelity must lie in (0, 1]", field="optimizer.target_fidelity")
        if self.simulate["trajectories"] < 1:
            raise ConfigError("trajectories must be >= 1", field="simulate.trajectories")
        if self.classify["trajectories"] < 1:
            raise ConfigError("trajectories must be >= 1", field="classify.trajectories")
        kinds = [c["kind"] for c in self.costs]
        readout = any(k in READOUT_KINDS for k in kinds)
        if readout and self.family != FAMILY_READOUT:
            raise ConfigError("readout cost terms need the jc-readout family", field="costs")
        if not readout and any(k == C1 for k in kinds) and not self.states:
            raise ConfigError("C1 needs at least one state pair", field="states")

    @property
    def is_readout(self):
        return self.family == FAMILY_READOUT

    def build_system(self):
        if self.explicit is not None:
            return OpenSystem(ComplexMatrix(self.explicit["h0"]),
                              [ComplexMatrix(c) for c in self.explicit["controls"]],
                              [(ComplexMatrix(op), rate) for op, rate in self.explicit["channels"]],
                              name=FAMILY_EXPLICIT)
        return build_system(self.family, self.params, full_scale=self.full_scale)

    def state_pairs(self, sys):
        return [(_state_vector(p["initial"], sys, f"states[{i}].initial"),
                 _state_vector(p["target"], sys, f"states[{i}].target")) for i, p in enumerate(self.states)]

    def cost_spec(self, sys):
        terms = []
        for i, c in enumerate(self.costs):
            field = f"costs[{i}]"
            kwargs = {"weight": c.get("weight"), "sigma": c.get("sigma"), "padded": bool(c.get("padded", False))}
            if "target" in c:
                kwargs["target"] = _state_vector(c["target"], sys, f"{field}.target")
            if "forbidden" in c:
                kwargs["forbidden"] = _state_vector(c["forbidden"], sys, f"{field}.forbidden")
            if c["kind"] == C3 and "operator" in c:
                try:
                    kwargs["operator"] = sys.operator(c["operator"])
                except TrajGrapeError as ex:
                    raise ConfigError(ex.message, field=f"{field}.operator")
            try:
                terms.append(CostTerm(c["kind"], **kwargs))
            except ConfigError:
                raise
            except TrajGrapeError as ex:
                raise ConfigError(ex.message, field=field)
        return CostSpec(terms)

    def batch_config(self, seed=None):
        return BatchConfig(self.batch["m_tot"], self.batch["cluster_width"], self.seed if seed is None else seed,
                           self.batch["improved_sampling"])

    def initial_pulse(self, sys, reference=None):
        """
        :param reference: readout.ReferenceAmplitude for readout-constant pulses
        :return: ControlPulse
        """
        if self.pulse_init == "random":
            return random_initial_pulse(sys.n_controls, self.n_steps, self.dt, self.amplitude_bound, self.seed)
        if self.pulse_init == "zeros":
            return ControlPulse.zeros(sys.n_controls, self.n_steps, self.dt)
        if self.pulse_init == "constant":
            return ControlPulse(np.full((sys.n_controls, self.n_steps), self.pulse_amplitude), self.dt)
        if self.pulse_init == "readout-constant":
            reference = reference or reference_amplitude(sys)
            return constant_pulse(self.pulse_photons, self.n_steps, self.dt, reference)
        try:
            document = read_json(self.pulse_file)
        except (OSError, ValueError) as ex:
            raise ConfigError(f"unable to read pulse file {self.pulse_file}: {ex}", field="pulse.file")
        pulse = ControlPulse.from_dict(document["pulse"] if "pulse" in document else document)
        if pulse.n_steps != self.n_steps or abs(pulse.dt - self.dt) > 1e-12 * self.dt:
            raise ConfigError("pulse file does not match n_steps and dt", field="pulse.file")
        return pulse

    def with_overrides(self, seed=None, max_iterations=None, target_fidelity=None, out_dir=None, full_scale=None):
        document = self.to_dict()
        if seed is not None:
            document["seed"] = int(seed)
        if max_iterations is not None:
            document["optimizer"]["max_iterations"] = int(max_iterations)
        if target_fidelity is not None:
            document["optimizer"]["target_fidelity"] = float(target_fidelity)
        if out_dir is not None:
            document["output"]["dir"] = out_dir
        if full_scale is not None:
            document["full_scale"] = bool(full_scale)
        return RunConfig(document, self.source)

    def to_dict(self):
        """
        The configuration with every quantity in internal units
        """
        if self.explicit is not None:
            def pack(m):
                return {"re": np.real(m).tolist(), "im": np.imag(m).tolist()}
            system = {"family": FAMILY_EXPLICIT, "h0": pack(self.explicit["h0"]),
                      "controls": [pack(c) for c in self.explicit["controls"]],
                      "channels": [{"op": pack(op), "rate": _internal(rate, KIND_RATE)}
                                   for op, rate in self.explicit["channels"]]}
        else:
            kinds = PARAM_KINDS[self.family]
            system = {"family": self.family,
                      "params": {k: _internal(v, kinds[k]) for k, v in self.params.items()}}
        pulse = {"n_steps": self.n_steps, "dt": _internal(self.dt, KIND_TIME), "init": self.pulse_init}
        if self.amplitude_bound is not None:
            pulse["amplitude_bound"] = _internal(self.amplitude_bound, KIND_FREQUENCY)
        if self.pulse_amplitude is not None:
            pulse["amplitude"] = _internal(self.pulse_amplitude, KIND_FREQUENCY)
        if self.pulse_photons is not None:
            pulse["photons"] = self.pulse_photons
        if self.pulse_file is not None:
            pulse["file"] = self.pulse_file
        return {"name": self.name, "seed": self.seed, "full_scale": self.full_scale, "system": system,
                "pulse": pulse, "states": [dict(s) for s in self.states], "costs": [dict(c) for c in self.costs],
                "batch": dict(self.batch), "optimizer": dict(self.optimizer), "simulate": dict(self.simulate),
                "classify": dict(self.classify), "output": dict(self.output)}

    def serialize(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self):
        """
        sha256 of the canonical serialization
        """
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()


def parse_config(text, source="<memory>"):
    """
    Parse and validate a configuration document
    :raises ConfigError: with line and column for malformed JSON
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as ex:
        raise ConfigError(f"{source}: {ex.msg}", line=ex.lineno, column=ex.colno)
    return RunConfig(document, source)


def load_config(path):
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as ex:
        raise ConfigError(f"unable to read {path}: {ex.strerror}")
    config = parse_config(text, source=path)
    logger.debug("Loaded run configuration %s (%s)", path, config.config_hash()[:12])
    return config
