#
# test_traj_errors.py - error kinds and exit codes
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#


from traj_errors import TrajGrapeError, ConfigError, ValidationFailure, TaylorDivergenceError, \
    EXIT_CONFIG_ERROR, EXIT_VALIDATION_FAILURE, EXIT_NUMERICAL_FAILURE


def test_exit_codes():
    assert ConfigError("x").exit_code == EXIT_CONFIG_ERROR == 2
    assert ValidationFailure("x").exit_code == EXIT_VALIDATION_FAILURE == 3
    assert TaylorDivergenceError("x").exit_code == EXIT_NUMERICAL_FAILURE == 4


def test_config_error_location():
    ex = ConfigError("bad value", field="pulse.dt", line=3, column=7)
    assert ex.field == "pulse.dt"
    assert "line 3" in str(ex)
    assert "column 7" in str(ex)
    assert str(ex).startswith("config-error")


def test_every_error_is_a_traj_grape_error():
    assert isinstance(TaylorDivergenceError("diverged"), TrajGrapeError)
    assert str(TrajGrapeError()) == "traj-grape-error"
