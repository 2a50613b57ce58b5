#
# test_units.py - unit conversion of configuration quantities
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#


import math
import pytest
from units import to_internal, from_internal, unit_kind, KIND_FREQUENCY, KIND_RATE, KIND_TIME
from traj_errors import ConfigError


def test_frequency_units():
    assert to_internal({"value": 1.0, "unit": "GHz"}, KIND_FREQUENCY) == pytest.approx(2 * math.pi)
    assert to_internal({"value": 50.0, "unit": "MHz"}, KIND_FREQUENCY) == pytest.approx(0.1 * math.pi)


def test_rate_and_time_units():
    assert to_internal({"value": 50.0, "unit": "Ms^-1"}, KIND_RATE) == pytest.approx(0.05)
    assert to_internal({"value": 2.0, "unit": "us"}, KIND_TIME) == pytest.approx(2000.0)


def test_bare_numbers_are_internal():
    assert to_internal(0.25, KIND_TIME) == 0.25


def test_kind_mismatch_names_the_field():
    with pytest.raises(ConfigError) as info:
        to_internal({"value": 1.0, "unit": "ns"}, KIND_FREQUENCY, field="system.params.g")
    assert info.value.field == "system.params.g"


def test_unknown_unit():
    with pytest.raises(ConfigError):
        to_internal({"value": 1.0, "unit": "furlong"}, KIND_TIME)
    with pytest.raises(ConfigError):
        unit_kind("furlong")


def test_from_internal_inverts_to_internal():
    q = from_internal(to_internal({"value": 3.9, "unit": "GHz"}, KIND_FREQUENCY), "GHz")
    assert q["unit"] == "GHz"
    assert q["value"] == pytest.approx(3.9)
