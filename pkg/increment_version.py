#! python3
#
# increment_version.py - increment the traj_grape version
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# command syntax
#   increment_version.py {major | minor | patch | build}
# The default is to increment the build number. The version string lands in
# every result file, so bump it whenever numerical behavior changes.
#

import sys
import json

PARTS = ["major", "minor", "patch", "build"]


def bump(version, part="build"):
    """
    Increment one component and zero the ones after it
    :param version: dict with major, minor, patch and build
    :param part: The component to increment
    :return: New version dict
    """
    if part not in PARTS:
        raise ValueError(f"{part} is not a recognized version component")
    bumped = dict(version)
    index = PARTS.index(part)
    bumped[part] += 1
    for later in PARTS[index + 1:]:
        bumped[later] = 0
    return bumped


def version_string(version):
    return ".".join(str(version[p]) for p in PARTS)


def save_version(version, json_path="version.json", py_path="version.py"):
    with open(json_path, "w") as fh:
        json.dump(version, fh)
    with open(py_path, "w") as fh:
        fh.write(f"version = \"{version_string(version)}\"\n")


def main(argv, json_path="version.json", py_path="version.py"):
    if len(argv) > 1:
        print("Command syntax:")
        print("increment_version.py {major | minor | patch | build}")
        return 2
    part = argv[0] if argv else "build"
    with open(json_path, "r") as fh:
        version = json.load(fh)
    try:
        version = bump(version, part)
    except ValueError as ex:
        print(str(ex))
        return 1
    save_version(version, json_path, py_path)
    print(f"Incremented {part}: {version_string(version)}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
