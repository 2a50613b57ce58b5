#
# test_configuration.py - runtime knobs, file and environment overrides
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#


import json
from configuration import Configuration


def test_defaults():
    assert Configuration.get(Configuration.CFG_ORACLE_MAX_DIM) == 16
    assert Configuration.get(Configuration.CFG_TAYLOR_TOL) == 1e-12
    assert Configuration.get(Configuration.CFG_PARALLEL_BACKEND) == "loky"


def test_file_values_override_defaults(tmp_path):
    path = tmp_path / "traj_grape.conf"
    path.write_text(json.dumps({"oracle_max_dim": 8, "workers": 3}))
    Configuration.load_configuration(str(path))
    assert Configuration.get(Configuration.CFG_ORACLE_MAX_DIM) == 8
    assert Configuration.get(Configuration.CFG_WORKERS) == 3


def test_broken_file_keeps_defaults(tmp_path):
    path = tmp_path / "traj_grape.conf"
    path.write_text("{not json")
    Configuration.load_configuration(str(path))
    assert Configuration.get(Configuration.CFG_ORACLE_MAX_DIM) == 16


def test_environment_overrides_file(tmp_path, monkeypatch):
    path = tmp_path / "traj_grape.conf"
    path.write_text(json.dumps({"workers": 3}))
    monkeypatch.setenv("TRAJ_GRAPE_WORKERS", "5")
    monkeypatch.setenv("TRAJ_GRAPE_TAYLOR_TOL", "1e-10")
    Configuration.load_configuration(str(path))
    assert Configuration.get(Configuration.CFG_WORKERS) == 5
    assert Configuration.get(Configuration.CFG_TAYLOR_TOL) == 1e-10


def test_invalid_environment_value_is_ignored(tmp_path, monkeypatch):
    monkeypatch.setenv("TRAJ_GRAPE_WORKERS", "many")
    Configuration.load_configuration(str(tmp_path / "missing.conf"))
    assert Configuration.get(Configuration.CFG_WORKERS) == 1


def test_set_and_to_bool():
    Configuration.set(Configuration.CFG_WORKERS, 4)
    assert Configuration.get(Configuration.CFG_WORKERS) == 4
    assert Configuration.to_bool("yes")
    assert not Configuration.to_bool("False")
