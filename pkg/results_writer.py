#
# results_writer.py - plot-ready result files
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Every file carries config_hash, seed and version. Payloads hold no
# timestamps, so identical inputs give identical bytes.
#


import os
import csv
import json
import logging
import numpy as np
from configuration import Configuration
from version import version
from traj_errors import LengthMismatchError


logger = logging.getLogger(__name__)


class ResultMetadata:
    """
    The provenance keys embedded in every result file
    """
    def __init__(self, config_hash="", seed=0, extra=None):
        self.config_hash = config_hash
        self.seed = int(seed)
        # Ordered (key, value) pairs, e.g. signal_frame=rotating
        self.extra = dict(extra or {})

    def items(self):
        yield "config_hash", self.config_hash
        yield "seed", self.seed
        yield "version", version
        for key, value in self.extra.items():
            yield key, value

    def to_dict(self):
        return dict(self.items())

    def with_extra(self, **kwargs):
        extra = dict(self.extra)
        extra.update(kwargs)
        return ResultMetadata(self.config_hash, self.seed, extra)


def split_complex(columns):
    """
    Replace complex columns by <name>_re and <name>_im pairs
    :param columns: Ordered dict name -> 1-D array
    :return: New ordered dict of real columns
    """
    out = {}
    for name, values in columns.items():
        a = np.asarray(values)
        if np.iscomplexobj(a):
            out[f"{name}_re"] = a.real
            out[f"{name}_im"] = a.imag
        else:
            out[name] = a
    return out


def write_csv(path, columns, metadata, float_format=None):
    """
    Headered CSV, one row per index of the columns
    :param path: Output file
    :param columns: Ordered dict name -> 1-D array (complex allowed)
    :param metadata: ResultMetadata
    :param float_format: printf format of floats (configuration default)
    :return: The path written
    """
    float_format = Configuration.get(Configuration.CFG_RESULTS_FLOAT_FORMAT) if float_format is None \
        else float_format
    columns = split_complex(columns)
    lengths = {len(np.atleast_1d(v)) for v in columns.values()}
    if len(lengths) > 1:
        raise LengthMismatchError(f"columns of different lengths {sorted(lengths)} for {path}")
    names = list(columns.keys())
    arrays = [np.atleast_1d(columns[n]) for n in names]
    n_rows = lengths.pop() if lengths else 0

    _make_parent(path)
    with open(path, "w", newline="") as fh:
        _write_metadata(fh, metadata)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        writer.writerows([_format_cell(a[i], float_format) for a in arrays] for i in range(n_rows))
    logger.debug("Wrote %d rows to %s", n_rows, path)
    return path


def _write_metadata(fh, metadata):
    for key, value in metadata.items():
        fh.write(f"# {key}={value}\n")


def _format_cell(value, float_format):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return float_format % float(value)
    return str(value)


def read_csv(path):
    """
    Read a file written by write_csv
    :return: (metadata dict, columns dict of float arrays)
    """
    metadata = {}
    body = []
    with open(path, "r", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                metadata[key] = value
            else:
                body.append(line)
    rows = [row for row in csv.reader(body) if row]
    if not rows:
        return metadata, {}
    names = rows[0]
    rows = [[float(x) for x in row] for row in rows[1:]]
    data = np.array(rows).reshape(len(rows), len(names))
    return metadata, {name: data[:, i] for i, name in enumerate(names)}


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return {"re": _jsonable(value.real), "im": _jsonable(value.imag)}
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    return value


def write_json(path, payload, metadata):
    """
    JSON side file with the metadata keys at the top level
    :return: The path written
    """
    document = metadata.to_dict()
    document.update(_jsonable(payload))
    _make_parent(path)
    with open(path, "w", newline="\n") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.debug("Wrote %s", path)
    return path


def read_json(path):
    with open(path, "r") as fh:
        return json.load(fh)


def _make_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


class CsvStream:
    """
    Writes a headered CSV one row at a time, in the write_csv format. The
    header is fixed by the first row.
    """
    def __init__(self, path, metadata, float_format=None):
        self.path = path
        self._metadata = metadata
        self._float_format = Configuration.get(Configuration.CFG_RESULTS_FLOAT_FORMAT) if float_format is None \
            else float_format
        self._names = None
        self._fh = None
        self._writer = None

    def write_row(self, row):
        """
        :param row: Ordered dict name -> scalar
        """
        if self._fh is None:
            _make_parent(self.path)
            self._fh = open(self.path, "w", newline="")
            self._names = list(row.keys())
            _write_metadata(self._fh, self._metadata)
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(self._names)
        self._writer.writerow([_format_cell(row.get(n, float("nan")), self._float_format) for n in self._names])
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
