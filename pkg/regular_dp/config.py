"""
Default parameters for solvers, certificates and the CLI.

Every value can be overridden from the environment (or a `.env` file);
command-line flags override both.
"""

import os

from dotenv import load_dotenv

load_dotenv()

# Tolerances
TOL = float(os.getenv("REGDP_TOL", "1e-9"))
PROBABILITY_SUM_TOL = float(os.getenv("REGDP_PROBABILITY_SUM_TOL", "1e-12"))
SINGULAR_PIVOT = float(os.getenv("REGDP_SINGULAR_PIVOT", "1e-12"))

# Iteration limits
MAX_ITER = int(os.getenv("REGDP_MAX_ITER", "100000"))
HORIZON_CAP = int(os.getenv("REGDP_HORIZON_CAP", "10000"))
BLOWUP_BOUND = float(os.getenv("REGDP_BLOWUP_BOUND", "1e12"))
DRIFT_WINDOW = int(os.getenv("REGDP_DRIFT_WINDOW", "32"))

# Enumeration guards
ENUMERATION_LIMIT = int(os.getenv("REGDP_ENUMERATION_LIMIT", "1000000"))
GRID_LIMIT = int(os.getenv("REGDP_GRID_LIMIT", "10000000"))

# Algorithm defaults
PROBE_COUNT = int(os.getenv("REGDP_PROBE_COUNT", "16"))
OPTIMISTIC_M = int(os.getenv("REGDP_OPTIMISTIC_M", "5"))
PERTURBATION_STEPS = int(os.getenv("REGDP_PERTURBATION_STEPS", "21"))
LP_BOX = float(os.getenv("REGDP_LP_BOX", "100"))

LOG_LEVEL = os.getenv("REGDP_LOG_LEVEL", "INFO")
