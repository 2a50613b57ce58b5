#
# traj_grape_app.py - command line app: simulate, optimize, classify, validate
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Flags override TRAJ_GRAPE_* environment variables, which override the
# run configuration file.
#


import os
import sys
import argparse
import logging
import numpy as np
from configuration import Configuration
from app_logger import configure_logging
from linalg_core import ComplexMatrix
from quantum_model import readout_state, basis
from trajectory_engine import PropagationSettings, simulate_ensemble, jump_probability, derive_seed, \
    expectation_estimate
from optimizer import OptimizerConfig, Problem, ConvergenceLog, optimize, evaluate_pulse
from readout import reference_amplitude, readout_fidelity_sweep, occupation_traces, constant_pulse
from oracles import lindblad_propagate
from validation import run_validation, STANDARD_ERROR_FLOOR
from run_config import load_config
from results_writer import ResultMetadata, write_csv, write_json, CsvStream
from traj_errors import TrajGrapeError, ConfigError, ValidationFailure, EXIT_OK
from version import version


logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "optimize", "classify", "validate")

ENV_PREFIX = Configuration.ENV_PREFIX


def _env(name, convert=str):
    value = os.environ.get(ENV_PREFIX + name)
    if value is None:
        return None
    try:
        return convert(value)
    except ValueError:
        raise ConfigError(f"invalid value '{value}' for {ENV_PREFIX}{name}")


def build_parser():
    parser = argparse.ArgumentParser(prog="traj-grape",
                                     description="Quantum-trajectory optimal control of open quantum systems")
    parser.add_argument("--version", action="version", version=f"%(prog)s {version}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="Run configuration file (JSON)")
    parser.add_argument("--seed", type=int, help="Master seed, overrides the configuration")
    parser.add_argument("--workers", type=int, help="Trajectory worker pool size")
    parser.add_argument("--out-dir", help="Directory of the result files")
    parser.add_argument("--max-iterations", type=int, help="Optimizer iteration cap")
    parser.add_argument("--target-fidelity", type=float, help="Optimizer target fidelity")
    parser.add_argument("--full-scale", action="store_true", default=None,
                        help="Use the full 30 x 3 level readout system")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return parser


def resolve_options(args):
    """
    Merge flags with their environment mirrors
    """
    options = {
        "config": args.config or _env("CONFIG"),
        "seed": args.seed if args.seed is not None else _env("SEED", int),
        "workers": args.workers if args.workers is not None else _env("WORKERS", int),
        "out_dir": args.out_dir or _env("OUT_DIR"),
        "max_iterations": args.max_iterations if args.max_iterations is not None else _env("MAX_ITERATIONS", int),
        "target_fidelity": args.target_fidelity if args.target_fidelity is not None
        else _env("TARGET_FIDELITY", float),
        "full_scale": args.full_scale if args.full_scale is not None
        else _env("FULL_SCALE", Configuration.to_bool),
    }
    if not options["config"]:
        raise ConfigError("no run configuration given (--config or TRAJ_GRAPE_CONFIG)")
    if options["workers"] is not None and options["workers"] < 1:
        raise ConfigError("--workers must be >= 1")
    return options


def _output_path(config, suffix):
    return os.path.join(config.output["dir"], f"{config.name}_{suffix}")


def _metadata(config, **extra):
    return ResultMetadata(config.config_hash(), config.seed, extra)


def _initial_state(config, system):
    if config.is_readout:
        return readout_state(system, 0)
    if config.states:
        return config.state_pairs(system)[0][0]
    return basis(system.dim, 0)


def _observables(system):
    """
    Photon and qubit numbers for the readout family, level populations otherwise
    """
    operators = system.metadata.get("operators", {})
    if "n_a" in operators:
        return [("n_a", operators["n_a"]), ("n_b", operators["n_b"])]
    return [(f"P{k}", ComplexMatrix(np.diag(np.eye(system.dim)[k]))) for k in range(system.dim)]


def run_simulate(config, workers):
    """
    Trajectory averages at sampled times, compared with the Lindblad oracle
    when the system is small enough
    """
    system = config.build_system()
    pulse = config.initial_pulse(system)
    psi0 = _initial_state(config, system)
    settings = PropagationSettings()
    M = int(config.simulate["trajectories"])
    results = simulate_ensemble(system, pulse, psi0, M, derive_seed(config.seed, 0),
                                cluster_width=int(config.simulate["cluster_width"]), settings=settings,
                                workers=workers)
    n_samples = min(int(config.simulate["sample_times"]), pulse.n_steps + 1)
    steps = np.unique(np.linspace(0, pulse.n_steps, n_samples).round().astype(int))
    exact = None
    if system.dim <= Configuration.get(Configuration.CFG_ORACLE_MAX_DIM):
        exact = lindblad_propagate(system, pulse, psi0)
    else:
        logger.warning("dimension %d above the oracle cap, no oracle comparison", system.dim)

    columns = {"step": steps, "time": steps * pulse.dt}
    worst = 0.0
    for name, op in _observables(system):
        estimates = np.array([expectation_estimate(results, op, int(j)) for j in steps])
        means, errors = estimates[:, 0], estimates[:, 1]
        columns[f"{name}_mean"] = means
        columns[f"{name}_se"] = errors
        if exact is not None:
            dense = op.toarray()
            oracle = np.array([exact[int(j)].expectation(dense) for j in steps])
            columns[f"{name}_oracle"] = oracle
            z = np.abs(means - oracle) / np.maximum(errors, STANDARD_ERROR_FLOOR)
            columns[f"{name}_z"] = z
            worst = max(worst, float(np.max(z)))
    metadata = _metadata(config)
    write_csv(_output_path(config, "simulate.csv"), columns, metadata)
    summary = {"trajectories": M, "jump_probability": jump_probability(system, pulse, psi0, settings),
               "max_deviation_sigma": worst if exact is not None else None}
    write_json(_output_path(config, "simulate.json"), summary, metadata)
    print(f"simulate: {M} trajectories, jump probability {summary['jump_probability']:.6f}"
          + (f", max deviation {worst:.2f} sigma" if exact is not None else ""))
    return EXIT_OK


def run_optimize(config, workers):
    system = config.build_system()
    spec = config.cost_spec(system)
    pairs = [] if config.is_readout else config.state_pairs(system)
    problem = Problem(system, spec, pairs)
    pulse = config.initial_pulse(system)
    o = config.optimizer
    opt_cfg = OptimizerConfig(learning_rate=o["learning_rate"], beta1=o["beta1"], beta2=o["beta2"],
                              eps_div=o["eps_div"], max_iterations=o["max_iterations"],
                              target_fidelity=o["target_fidelity"], target_cost=o["target_cost"],
                              amplitude_bound=config.amplitude_bound, checkpoint_every=o["checkpoint_every"],
                              checkpoint_path=_output_path(config, "checkpoint.json"))
    metadata = _metadata(config)
    with CsvStream(_output_path(config, "convergence.csv"), metadata) as stream:
        def sink(entry):
            stream.write_row(ConvergenceLog.row(entry))
            logger.info("iteration %d: cost %.6e, fidelity %.6f, p %.4f, m_sim %d", entry["iteration"],
                        entry["cost"], entry["fidelity"], entry["p"], entry["m_sim"])
        pulse, log = optimize(problem, config.batch_config(), opt_cfg, pulse, workers=workers, sink=sink,
                              metadata=metadata)

    summary = {"iterations": len(log), "stop_reason": log.stop_reason, "final_cost": log.last["cost"]}
    if pairs:
        fidelities = []
        for i, (psi0, target) in enumerate(pairs):
            mean, error = evaluate_pulse(system, pulse, psi0, target, opt_cfg.eval_batch_size,
                                         seed=derive_seed(config.seed, 1, i), workers=workers)
            fidelities.append({"mean": mean, "error": error})
        summary["final_fidelity"] = float(np.mean([f["mean"] for f in fidelities]))
        summary["fidelities"] = fidelities
    write_json(_output_path(config, "pulse.json"), {"pulse": pulse.to_dict()}, metadata)
    write_json(_output_path(config, "optimize.json"), summary, metadata)
    print(f"optimize: {len(log)} iterations ({log.stop_reason}), final cost {log.last['cost']:.6e}"
          + (f", fidelity {summary['final_fidelity']:.6f}" if pairs else ""))
    return EXIT_OK


def run_classify(config, workers):
    if not config.is_readout:
        raise ConfigError("classify needs a jc-readout system", field="system.family")
    system = config.build_system()
    reference = reference_amplitude(system)
    pulse = config.initial_pulse(system, reference)
    c = config.classify
    M = int(c["trajectories"])
    levels = list(c["noise_levels"])
    metadata = _metadata(config, signal_frame=system.metadata["frame"])

    results, kernel = readout_fidelity_sweep(system, pulse, M, levels, config.seed, reference, workers)
    columns = {"noise_level": np.array(levels, dtype=float),
               "threshold": np.array([r.threshold for r in results]),
               "fidelity": np.array([r.fidelity for r in results]),
               "p01": np.array([r.p01 for r in results]),
               "p10": np.array([r.p10 for r in results])}
    if c["reference_photons"] is not None:
        baseline = constant_pulse(c["reference_photons"], pulse.n_steps, pulse.dt, reference)
        baseline_results, _ = readout_fidelity_sweep(system, baseline, M, levels, config.seed, reference, workers)
        columns["constant_fidelity"] = np.array([r.fidelity for r in baseline_results])
    write_csv(_output_path(config, "classify.csv"), columns, metadata)

    histogram = {}
    for r in results:
        histogram[f"S0_P{r.noise_level:g}"] = r.samples0
        histogram[f"S1_P{r.noise_level:g}"] = r.samples1
    write_csv(_output_path(config, "histogram.csv"), histogram, metadata)
    write_csv(_output_path(config, "kernel.csv"), {"time": pulse.times, "K": kernel.weights}, metadata)

    traces = occupation_traces(system, pulse, M, derive_seed(config.seed, 3), workers=workers)
    occupation = {"step": np.arange(pulse.n_steps + 1)}
    for level in (0, 1):
        for name in ("n_a", "n_b"):
            occupation[f"{name}_{level}"] = traces[level][name][0]
            occupation[f"{name}_{level}_se"] = traces[level][name][1]
    write_csv(_output_path(config, "occupation.csv"), occupation, metadata)

    summary = {"reference": {"a_ph": reference.a_ph, "p_ref": reference.p_ref},
               "results": [r.to_dict() for r in results],
               "final_photons": {str(level): float(traces[level]["n_a"][0][-1]) for level in (0, 1)},
               "final_excitation_from_ground": float(traces[0]["n_b"][0][-1])}
    write_json(_output_path(config, "classify.json"), summary, metadata)
    print("classify: " + ", ".join(f"P{r.noise_level:g} F={r.fidelity:.4f}" for r in results))
    return EXIT_OK


def run_validate(config, workers):
    report = run_validation(config, workers=workers)
    write_json(_output_path(config, "validation.json"), report.to_dict(), _metadata(config))
    for check in report.checks:
        print(repr(check))
    if not report.passed:
        raise ValidationFailure(", ".join(c.name for c in report.failures))
    return EXIT_OK


RUNNERS = {"simulate": run_simulate, "optimize": run_optimize, "classify": run_classify, "validate": run_validate}


def run(command, config_path, seed=None, workers=None, out_dir=None, max_iterations=None, target_fidelity=None,
        full_scale=None):
    """
    Run one command
    :return: Exit status
    """
    config = load_config(config_path).with_overrides(seed=seed, max_iterations=max_iterations,
                                                     target_fidelity=target_fidelity, out_dir=out_dir,
                                                     full_scale=full_scale)
    if workers is not None:
        Configuration.set(Configuration.CFG_WORKERS, workers)
    logger.info("%s %s (config %s, seed %d)", command, config.name, config.config_hash()[:12], config.seed)
    return RUNNERS[command](config, workers)


def main(argv=None):
    args = build_parser().parse_args(argv)
    Configuration.load_configuration()
    configure_logging(args.log_level or Configuration.get(Configuration.CFG_LOG_LEVEL),
                      Configuration.get(Configuration.CFG_LOG_FILE))
    Configuration.dump_configuration()
    try:
        options = resolve_options(args)
        return run(args.command, options["config"], seed=options["seed"], workers=options["workers"],
                   out_dir=options["out_dir"], max_iterations=options["max_iterations"],
                   target_fidelity=options["target_fidelity"], full_scale=options["full_scale"])
    except TrajGrapeError as ex:
        logger.error("%s", ex)
        print(f"error: {ex}", file=sys.stderr)
        return ex.exit_code


if __name__ == "__main__":
    sys.exit(main())
