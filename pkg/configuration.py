#
# configuration.py - traj_grape application configuration
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# See _active_config definition below for content details.
# The JSON parser is quite finicky about strings being quoted as shown.
#
# This class behaves like a singleton class. There is only one instance of the configuration.
# There is no need to create an instance of this class, as everything about it is static.
# Run-specific settings (system, pulse, costs) live in run_config.py. This file
# holds the numerical and runtime knobs shared by every run.
#


import os
import json
import copy
import logging
import platform


logger = logging.getLogger(__name__)


class Configuration():
    # Essentially a singleton instance of the configuration
    # If no traj_grape.conf file exists this will be the default configuration
    _default_config = {
        "taylor_tol": 1e-12,
        "taylor_max_terms": 64,
        "oracle_max_dim": 16,
        "state_memory_budget": 2000000,
        "workers": 1,
        "parallel_backend": "loky",
        "log_level": "INFO",
        "log_file": "",
        "results_float_format": "%.12e",
        "eval_batch_size": 200,
        "checkpoint_every": 50,
        "full_scale": False,
    }
    _active_config = copy.deepcopy(_default_config)

    # Keys
    CFG_TAYLOR_TOL = "taylor_tol"  # relative truncation tolerance of matvec_exp
    CFG_TAYLOR_MAX_TERMS = "taylor_max_terms"
    CFG_ORACLE_MAX_DIM = "oracle_max_dim"  # dense oracles refuse larger systems
    CFG_STATE_MEMORY_BUDGET = "state_memory_budget"  # d*N before checkpointing
    CFG_WORKERS = "workers"
    CFG_PARALLEL_BACKEND = "parallel_backend"  # joblib backend name
    CFG_LOG_LEVEL = "log_level"
    CFG_LOG_FILE = "log_file"
    CFG_RESULTS_FLOAT_FORMAT = "results_float_format"
    CFG_EVAL_BATCH_SIZE = "eval_batch_size"
    CFG_CHECKPOINT_EVERY = "checkpoint_every"
    CFG_FULL_SCALE = "full_scale"  # readout runs whose configuration leaves it out

    # Environment variables named ENV_PREFIX + upper-case key override the file
    ENV_PREFIX = "TRAJ_GRAPE_"

    def __init__(self):
        Configuration.load_configuration()

    # Load the configuration file
    @classmethod
    def load_configuration(cls, cfg_path=None):
        """
        Load the configuration file, then apply environment overrides.
        A missing or broken file leaves the defaults in place.
        :param cfg_path: Optional explicit path. The per-user file is used otherwise.
        :return: None
        """
        cls._active_config = copy.deepcopy(cls._default_config)
        try:
            if cfg_path is None:
                cfg_path = Configuration.get_configuration_file()
            with open(cfg_path, "r") as cfg:
                cfg_json = cfg.read()
        except Exception as ex:
            logger.debug("Unable to open %s (%s), using defaults", cfg_path, str(ex))
            cls._apply_environment()
            return

        # Try to parse the conf file into a Python structure
        try:
            cls._active_config.update(json.loads(cfg_json))
        except Exception as ex:
            logger.warning("Unable to parse configuration file %s as JSON: %s", cfg_path, str(ex))
        cls._apply_environment()

    @classmethod
    def _apply_environment(cls):
        """
        Environment overrides keep the type of the default value
        :return: None
        """
        for key, default in cls._default_config.items():
            env_value = os.environ.get(cls.ENV_PREFIX + key.upper())
            if env_value is None:
                continue
            try:
                if isinstance(default, bool):
                    cls._active_config[key] = Configuration.to_bool(env_value)
                elif isinstance(default, int):
                    cls._active_config[key] = int(env_value)
                elif isinstance(default, float):
                    cls._active_config[key] = float(env_value)
                else:
                    cls._active_config[key] = env_value
            except ValueError:
                logger.warning("Ignoring %s%s=%s, not a valid value", cls.ENV_PREFIX, key.upper(), env_value)

    @classmethod
    def dump_configuration(cls):
        """
        Log the configuration
        :return: None
        """
        logger.debug("Active configuration %s", json.dumps(cls._active_config))

    @classmethod
    def get_configuration(cls):
        """
        Return the current configuration
        :return: The configuration as a dict
        """
        return cls._active_config

    @classmethod
    def get(cls, key):
        """
        Return one configuration value, falling back to the default
        :param key: One of the CFG_ keys
        :return: The value
        """
        return cls._active_config.get(key, cls._default_config.get(key))

    @classmethod
    def set(cls, key, value):
        """
        Change one configuration value for this process (CLI flags use this)
        :param key: One of the CFG_ keys
        :param value: New value
        :return: None
        """
        cls._active_config[key] = value

    @classmethod
    def reset(cls):
        """
        Back to the built-in defaults, ignoring file and environment
        :return: None
        """
        cls._active_config = copy.deepcopy(cls._default_config)

    @classmethod
    def get_configuration_file(cls):
        """
        Returns the full path to the configuration file
        """
        if Configuration.is_macos() or Configuration.is_linux():
            home_dir = f"{os.environ.get('HOME')}/.traj_grape"
        elif Configuration.is_windows():
            home_dir = f"{os.environ.get('LOCALAPPDATA')}\\traj_grape"
        else:
            # Default to the current working directory
            home_dir = os.getcwd()
        return os.path.join(home_dir, "traj_grape.conf")

    @staticmethod
    def to_bool(s) -> bool:
        """
        Converts a configuration boolean string into a bool
        :param s:
        :return:
        """
        if isinstance(s, bool):
            return s
        sl = str(s).lower()
        return sl in ["true", "yes", "1"]

    @staticmethod
    def is_windows():
        """
        Is this Windows?
        :return: True if it's Windows
        """
        return platform.system().lower() == "windows"

    @staticmethod
    def is_macos():
        """
        Is this macOS?
        :return: True if it's macOS
        """
        return platform.system().lower() == "darwin"

    @staticmethod
    def is_linux():
        """
        Is this Linux?
        :return: True if it's Linux
        """
        return platform.system().lower() == "linux"
