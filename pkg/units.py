#
# units.py - unit conversion for configuration quantities
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Internal units: angular frequencies and amplitudes in rad/ns, rates in 1/ns,
# times in ns. hbar = 1.
#


import math
from traj_errors import ConfigError


KIND_FREQUENCY = "frequency"
KIND_RATE = "rate"
KIND_TIME = "time"
KIND_DIMENSIONLESS = "dimensionless"

# unit -> (kind, factor to internal units)
_UNITS = {
    "GHz": (KIND_FREQUENCY, 2.0 * math.pi),
    "MHz": (KIND_FREQUENCY, 2.0 * math.pi / 1000.0),
    "rad/ns": (KIND_FREQUENCY, 1.0),
    "GHz*2pi": (KIND_FREQUENCY, 1.0),
    "1/ns": (KIND_RATE, 1.0),
    "ns^-1": (KIND_RATE, 1.0),
    "1/us": (KIND_RATE, 1.0e-3),
    "Ms^-1": (KIND_RATE, 1.0e-3),
    "ns": (KIND_TIME, 1.0),
    "us": (KIND_TIME, 1.0e3),
    "": (KIND_DIMENSIONLESS, 1.0),
}


def to_internal(quantity, kind, field=None):
    """
    Convert a configuration quantity to internal units
    :param quantity: Either a bare number (already internal) or {"value": v, "unit": u}
    :param kind: Expected kind (frequency, rate, time, dimensionless)
    :param field: Field path used in error messages
    :return: float in internal units
    """
    if isinstance(quantity, (int, float)) and not isinstance(quantity, bool):
        return float(quantity)
    if not isinstance(quantity, dict) or "value" not in quantity:
        raise ConfigError("expected a number or {\"value\": ..., \"unit\": ...}", field=field)
    unit = quantity.get("unit", "")
    if unit not in _UNITS:
        raise ConfigError(f"unknown unit '{unit}'", field=field)
    unit_kind, factor = _UNITS[unit]
    if unit_kind != kind:
        raise ConfigError(f"unit '{unit}' is a {unit_kind}, expected a {kind}", field=field)
    try:
        return float(quantity["value"]) * factor
    except (TypeError, ValueError):
        raise ConfigError("value is not a number", field=field)


def from_internal(value, unit):
    """
    Express an internal value in the given unit
    :param value: Internal value
    :param unit: Target unit
    :return: {"value": v, "unit": unit}
    """
    if unit not in _UNITS:
        raise ConfigError(f"unknown unit '{unit}'")
    return {"value": value / _UNITS[unit][1], "unit": unit}


def unit_kind(unit):
    """
    :param unit: Unit name
    :return: The kind of quantity the unit measures
    """
    if unit not in _UNITS:
        raise ConfigError(f"unknown unit '{unit}'")
    return _UNITS[unit][0]
