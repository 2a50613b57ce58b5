#
# app_logger.py - logging setup for the traj_grape app
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#


import logging


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Handlers installed by configure_logging, so a second call replaces them
_installed_handlers = []


def configure_logging(level="INFO", log_file=""):
    """
    Configure the root logger with a console handler and an optional file handler
    :param level: Logging level name (DEBUG, INFO, WARNING, ...)
    :param log_file: Full path of a log file. Empty means console only.
    :return: The root logger
    """
    root = logging.getLogger()
    for handler in _installed_handlers:
        root.removeHandler(handler)
    _installed_handlers.clear()

    formatter = logging.Formatter(LOG_FORMAT)
    console = logging.StreamHandler()
    console.setFormatter(formatter)
    _installed_handlers.append(console)
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        _installed_handlers.append(file_handler)

    for handler in _installed_handlers:
        root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    return root
