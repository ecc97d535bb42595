"""Defaults, tolerances and exit codes shared by every package."""

TOOL_NAME = "evomax"
TOOL_VERSION = "0.3.0"

# Environment
THREADS_ENV_VAR = "EVOMAX_THREADS"

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3

SUBCOMMANDS = ("expand", "solve", "mc", "compare", "sweep", "report")

# Boundary modes
PERIODIC = "periodic"
PADDED = "padded"
BOUNDARY_MODES = (PERIODIC, PADDED)

# Term kinds in the expansion CSV
KIND_REGULAR = "regular"
KIND_CORRECTION = "correction"
KIND_SINGULAR = "singular"

# Config defaults
DEFAULT_N_POINTS = 401
DEFAULT_BOUNDARY_MODE = PERIODIC
DEFAULT_PAD_MARGIN = 1.05
DEFAULT_N_TAU = 600
DEFAULT_TAU_MAX_FACTOR = 30.0
DEFAULT_ORDER = 3
DEFAULT_N_STEPS = 200
DEFAULT_T_END = 1.0
DEFAULT_EPSILONS = [0.2, 0.1, 0.05, 0.025]
DEFAULT_N_PATHS = 100000
DEFAULT_SEED = 42
MAX_SEED = 2 ** 64 - 1
DEFAULT_T_EVAL = 0.5
DEFAULT_OUT_DIR = "./out"

# Oracle defaults
DEFAULT_DT_FACTOR = 4e-3
DEFAULT_CFL = 0.8
MC_STEP_CAP = 1e-3
MC_CHUNK_SIZE = 8192

# Tolerances
ROW_SUM_TOL = 1e-9
EDGE_THRESHOLD = 1e-14
EIG_CONDITION_LIMIT = 1e8
SOLVABILITY_TOL = 1e-4
MATCHING_TOL = 1e-8
PROJECTION_TOL = 1e-10
RANGE_TOL = 1e-8
LEADING_RESIDUAL_TOL = 1e-6
TAIL_TOL = 1e-9
LAYER_DECAY_TOL = 1e-7
FLOW_RTOL = 1e-10
FLOW_ATOL = 1e-12
CERTIFICATE_SAFETY = 0.05

# Expression functions
EXPRESSION_FUNCTIONS = ("sin", "cos", "exp", "tanh", "sqrt", "abs")
EXPRESSION_VARIABLE = "u"

# CSV
CSV_DIGITS = 17

# Expansion diagnostics
LAPLACE_LAMBDAS = (0.5, 1.0, 2.0)
LAPLACE_TOL = 1e-6
EXPAND_SNAPSHOTS = 11
