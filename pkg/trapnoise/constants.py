APP_NAME = "trapnoise"
APP_VERSION = "0.1.0"

MICRON = 1e-6
MHZ = 1e6

GEOMETRY_TYPES = {
    "skeleton",
    "blade",
    "disc",
    "file",
}

ELECTRODE_ROLES = (
    "RF",
    "DC",
    "GROUND",
)

MODE_LABELS = ("x", "y", "z")

DRIVE_POLICIES = {
    "constant_ratio",
    "constant_frequency",
}

# Stability ratio threshold; a ratio equal to it still counts as stable.
STABILITY_THRESHOLD = 0.2

DEFAULT_AXIAL_FREQUENCY = 0.5 * MHZ
DEFAULT_RF_AMPLITUDE = 150.0
DEFAULT_RF_FREQUENCY = 11.0 * MHZ

DEFAULT_TARGET_EDGE = 9.0 * MICRON
DEFAULT_MESH_GRADING = 0.0
DEFAULT_MAX_EDGE_SCALE = 20.0

DENSE_PATCH_LIMIT = 20000
DEFAULT_MEMORY_CAP_GB = 8.0
NEAR_FIELD_DIAMETERS = 2.0
NEAR_FIELD_LEVELS = 4
GMRES_RTOL = 1e-12
RESIDUAL_TOLERANCE = 1e-10
DIPOLE_SEPARATION = 1e-4

SIMPLEX_ITERATIONS = 200
NEWTON_ITERATIONS = 50
GRADIENT_TOLERANCE_EV_PER_UM = 1e-9
HESSIAN_STEP_FRACTION = 0.01
RICHARDSON_TOLERANCE = 0.01
HESSIAN_ASYMMETRY_TOLERANCE = 1e-6

PROFILE_BIN = 5.0 * MICRON
PROFILE_SIGMA = 10.0 * MICRON
CONCENTRATION_RADIUS = 500.0 * MICRON
NOISE_REFERENCE_FREQUENCY = 1.0 * MHZ

TRAPMESH_HEADER = "trapmesh v1"
MATRIX_MAGIC = b"BEMM"

ENV_THREADS = "TRAPNOISE_THREADS"
ENV_LOG_LEVEL = "TRAPNOISE_LOG_LEVEL"
ENV_DENSE_LIMIT = "TRAPNOISE_DENSE_LIMIT"
ENV_MEMORY_CAP_GB = "TRAPNOISE_MEMORY_CAP_GB"

LOG_LEVELS = (
    "DEBUG",
    "INFO",
    "WARNING",
    "ERROR",
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
