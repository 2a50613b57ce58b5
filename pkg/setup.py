"""
setuptools script for traj_grape

Usage:
    pip install .
    traj-grape validate --config resources/transmon_closed.json
"""

from setuptools import setup
from version import version

MODULES = [
    "app_logger",
    "autodiff",
    "configuration",
    "costs",
    "lambda_baselines",
    "linalg_core",
    "optimizer",
    "oracles",
    "quantum_model",
    "readout",
    "results_writer",
    "run_config",
    "traj_errors",
    "traj_grape_app",
    "trajectory_engine",
    "units",
    "validation",
    "version",
]
DATA_FILES = [
    ("resources", [
        "resources/transmon_closed.json",
        "resources/transmon_t1_100ns.json",
        "resources/lambda_10ns.json",
        "resources/jc_readout_desk.json",
    ])
]

setup(
    name="traj_grape",
    version=version,
    description="Quantum-trajectory optimal control of open quantum systems",
    py_modules=MODULES,
    data_files=DATA_FILES,
    python_requires=">=3.8",
    install_requires=["numpy>=1.24", "scipy>=1.10", "joblib>=1.2"],
    extras_require={"test": ["pytest>=7.2"]},
    entry_points={"console_scripts": ["traj-grape = traj_grape_app:main"]},
)
