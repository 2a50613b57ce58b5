#
# test_increment_version.py - version bumping
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#


import json
import pytest
from increment_version import bump, version_string, main


def test_bump_resets_later_parts():
    version = {"major": 1, "minor": 2, "patch": 3, "build": 4}
    assert bump(version, "minor") == {"major": 1, "minor": 3, "patch": 0, "build": 0}
    assert bump(version) == {"major": 1, "minor": 2, "patch": 3, "build": 5}
    assert version["build"] == 4
    with pytest.raises(ValueError):
        bump(version, "epoch")


def test_main_rewrites_both_files(tmp_path):
    json_path = tmp_path / "version.json"
    py_path = tmp_path / "version.py"
    json_path.write_text(json.dumps({"major": 0, "minor": 1, "patch": 0, "build": 0}))
    assert main(["patch"], str(json_path), str(py_path)) == 0
    assert json.loads(json_path.read_text())["patch"] == 1
    assert py_path.read_text() == "version = \"0.1.1.0\"\n"
    assert main(["epoch"], str(json_path), str(py_path)) == 1
    assert main(["a", "b"], str(json_path), str(py_path)) == 2
    assert version_string({"major": 2, "minor": 0, "patch": 0, "build": 7}) == "2.0.0.7"
