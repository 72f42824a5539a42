"""Configuration module for roaflow - loads settings from environment variables."""

import os
import logging
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Paths (data directories default to the repository's data/ folder)
BASE_DIR = Path(__file__).resolve().parent.parent
RESULTS_DIR = Path(os.getenv('RESULTS_DIR', 'results'))
PRESET_DIR = Path(os.getenv('PRESET_DIR', BASE_DIR / 'data' / 'presets'))
SYSTEMS_DIR = Path(os.getenv('SYSTEMS_DIR', BASE_DIR / 'data' / 'systems'))


def parse_threads(value):
    """Worker count from ROAFLOW_THREADS; malformed or non-positive values fall back to the CPU count."""
    fallback = os.cpu_count() or 1
    if not value:
        return fallback
    try:
        threads = int(value)
    except ValueError:
        threads = 0
    if threads < 1:
        logging.getLogger(__name__).warning(
            f"ROAFLOW_THREADS={value!r} is not a positive integer; using {fallback} threads"
        )
        return fallback
    return threads


# Worker pool size; unset means one worker per CPU
THREADS = parse_threads(os.getenv('ROAFLOW_THREADS'))

# Sampling (experiments sample every 0.1 time units, 40 samples)
SAMPLE_INTERVAL = 0.1
SAMPLE_COUNT = 40
DEFAULT_HORIZON = SAMPLE_INTERVAL * SAMPLE_COUNT

# Integrator
RTOL = 1e-9
ATOL = 1e-12
CONVERGENCE_RADIUS = 1e-6
ESCAPE_RADIUS = 1e3
INTEGRATION_METHOD = 'RK45'

# Estimator
PE_RELATIVE_TOL = 1e-10
GRADIENT_FLOW_MAX_ITERS = 100_000
GRADIENT_FLOW_TOL = 1e-10

# Residual energy
ESCAPE_HORIZON = 40.0
ENERGY_RTOL = 1e-8
ENERGY_ATOL = 1e-10
NEAR_ORIGIN_RADIUS = 0.1
NEAR_ORIGIN_PROBES = 8

# Boundary flow
CURVE_POINTS = 50
MIN_CURVE_POINTS = 8
INIT_RADIUS = 0.1
FLOW_STEP = 0.02
FLOW_MAX_ITERS = 500
RESAMPLE_EVERY = 5
HISTORY_EVERY = 1

# Oracle
ORACLE_RTOL = 1e-10
ORACLE_ATOL = 1e-12
ORACLE_T_MAX = 200.0
ORACLE_TRANSIENT = 100.0
ORACLE_CYCLE_POINTS = 400

# Output formatting
CSV_FLOAT_FORMAT = '.17g'

# Exit codes
EXIT_OK = 0
EXIT_INPUT = 1
EXIT_PE = 2
EXIT_FLOW = 3

# Logging Configuration
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL),
    format=LOG_FORMAT
)
