"""Configuration constants"""

from typing import Any, Dict

import numpy as np

from .config_manager import get_configured_mc_samples, get_configured_threads
from .errors import InvalidInputError

# Data invariants
UNIT_NORM_TOL = 1e-12
ORTHONORMAL_TOL = 1e-10
SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10

# Dense linear algebra limits
MAX_EIGEN_DIM = 2048
MAX_KRON_DIM = 4096

# Dataset generation
MIN_SEPARATION = 0.05
REJECTION_ATTEMPTS_PER_SAMPLE = 10 * 1000
TEACHER_HIDDEN_UNITS = 64
SERIAL_DIGITS = 17

# Convention for the vacuous pairwise minimum of a singleton dataset
SINGLETON_DELTA1 = 2.0

# Monte-Carlo estimation
MC_MIN_SAMPLES = 10_000
MC_CHUNK_SIZE = 65_536
MARGIN_STD_ERRORS = 3.0

# Gradient flow
DECAY_SLACK = 1.05
FD_ETA = 1e-6
MONOTONE_RTOL = 1e-9
MONOTONE_ATOL = 1e-16
DEFAULT_KERNEL_LOG_EVERY = 50

# Dynamic defaults from the user config file (or built-ins)
MC_DEFAULT_SAMPLES = get_configured_mc_samples(1_000_000)
THREADS = get_configured_threads()

# Independent random streams derived from one user seed
SEED_STREAMS = {
    "dataset": 0,
    "init": 1,
    "mc": 2,
    "teacher": 3,
    "points": 4,
}

EXPERIMENT_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "theorem1": {
        "n": 8, "d": 16, "k": 2, "m": 4096, "eta": 0.05, "steps": 4000,
        "target": "quadratic", "seeds": [1, 2, 3, 4, 5], "mc_samples": 1_000_000,
    },
    "theorem2": {
        "n": 8, "d": 16, "k": 2, "m": 4096, "eta": 0.05, "steps": 20000,
        "target": "quadratic", "seeds": [1, 2, 3, 4, 5], "mc_samples": 1_000_000,
    },
    "prop1": {
        "d": 10, "datasets": 20, "sweep_n": [2, 4, 8], "sweep_k": [1, 2],
        "sweep_tilt": [0.0, 0.3], "seeds": [1], "mc_samples": 1_000_000,
    },
    "lemmas": {
        "n": 4, "d": 10, "k": 2, "delta": 0.1, "seeds": list(range(1, 201)),
        "mc_samples": 1_000_000,
    },
}


def derive_seed(seed: int, stream: str, index: int = 0) -> int:
    """Derive a 64-bit seed for a named stream (and sub-index) from a user seed"""
    if int(seed) < 0:
        raise InvalidInputError(f"Seeds must be non-negative, got {seed}")
    state = np.random.SeedSequence([int(seed), SEED_STREAMS[stream], int(index)]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])


def reload_defaults():
    """Reload user-configurable defaults after the config file changed"""
    global MC_DEFAULT_SAMPLES, THREADS
    MC_DEFAULT_SAMPLES = get_configured_mc_samples(1_000_000)
    THREADS = get_configured_threads()
    return MC_DEFAULT_SAMPLES, THREADS
