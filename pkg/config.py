"""
Configuration constants for the SIM wave-domain simulator.

This module contains all configuration settings including:
- Physical constants and carrier defaults
- Metasurface geometry defaults (pitch, spacing, layer sizes)
- Optimizer and training defaults
- DOA partition and evaluation settings
- Output, schema and command-line settings
"""

import math

# =============================================================================
# PHYSICAL CONSTANTS
# =============================================================================
SPEED_OF_LIGHT = 299_792_458.0  # m/s

# =============================================================================
# CARRIER AND GEOMETRY DEFAULTS
# =============================================================================
DEFAULT_FREQUENCY_HZ = 10.0e9
DEFAULT_PITCH_WAVELENGTHS = 0.5      # element pitch = lambda/2
DEFAULT_LAYER_ROWS = 15
DEFAULT_LAYER_COLS = 15
DEFAULT_LAYER_SPACING_M = 0.003      # beamfocusing stack
DEFAULT_FEED_DISTANCE_WAVELENGTHS = 2.0

# Tolerances used by geometry validation
UNIT_NORMAL_TOL = 1e-9
COINCIDENT_TOL_M = 1e-12
PARALLEL_TOL = 1e-9

# =============================================================================
# HARDWARE PROFILES
# =============================================================================
HT1_FIXED = "HT1_fixed"
HT2_PASSIVE = "HT2_passive_programmable"
HT3_ACTIVE = "HT3_active"

HARDWARE_KINDS = [HT1_FIXED, HT2_PASSIVE, HT3_ACTIVE]

DEFAULT_HT3_AMPLITUDE_RANGE = (0.0, 4.0)
DEFAULT_COUPLING_POINTS = 65

# =============================================================================
# BEAMFOCUSING SCENARIO DEFAULTS
# =============================================================================
DEFAULT_USER_DISTANCES_M = [1.5, 3.0, 4.5, 6.0]
DEFAULT_TOTAL_POWER = 1.0e4
DEFAULT_LAYER_COUNTS = [1, 2, 4, 7]
CHANNEL_NEAR_FIELD_LOS = "near_field_LoS"
CHANNEL_CORRELATED_RAYLEIGH = "correlated_rayleigh"
CHANNEL_MODES = [CHANNEL_NEAR_FIELD_LOS, CHANNEL_CORRELATED_RAYLEIGH]
SINR_GOOD_DB = 10.0

# =============================================================================
# OPTIMIZER DEFAULTS (steps per iteration)
# =============================================================================
DEFAULT_STEP_SIZE = 0.1
DEFAULT_ITERATIONS = 2000
DEFAULT_RESTARTS = 5
DEFAULT_ALGORITHM = "adam"
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
CONVERGED_LOSS = 1e-14

# =============================================================================
# DOA / HOENN DEFAULTS
# =============================================================================
DOA_AZIMUTH_BINS = 8
DOA_ELEVATION_BINS = 8
DOA_RECEIVER_ROWS = 8
DOA_RECEIVER_COLS = 8
DOA_SIM_LAYERS = 2
DOA_LAYER_SPACING_WAVELENGTHS = 2.0

DETECTOR_MAGNITUDE = "magnitude"
DETECTOR_POWER = "magnitude_squared"
DETECTORS = [DETECTOR_MAGNITUDE, DETECTOR_POWER]

NOISE_AT_APERTURE = "aperture"
NOISE_AT_RECEIVER = "receiver"
NOISE_POINTS = [NOISE_AT_APERTURE, NOISE_AT_RECEIVER]

DEFAULT_LEARNING_RATE = 0.01
DEFAULT_BATCH_SIZE = 64
DEFAULT_EPOCHS = 50
DEFAULT_TRAIN_PER_REGION = 64
DEFAULT_VALIDATION_PER_REGION = 16
DEFAULT_TRAIN_SNR_DB = 10.0
DEFAULT_SNR_GRID_DB = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]
DEFAULT_EVAL_TRIALS = 640
MIN_STABLE_TRIALS = 100
AGC_EPSILON = 1e-30

# =============================================================================
# CHANNEL ESTIMATION DEFAULTS
# =============================================================================
DEFAULT_PILOT_SNR_GRID_DB = [0.0, 10.0, 20.0, 30.0]
DEFAULT_NMSE_TRIALS = 200
CLAMPED_MASS_WARN_FRACTION = 0.01

# =============================================================================
# SPECTRUM (WAVE-DOMAIN DFT) DEFAULTS
# =============================================================================
DEFAULT_DFT_DIMS = (4, 4)
DEFAULT_DFT_LAYERS = 5
DEFAULT_DFT_LAYER_SIDE = 8
DFT_CORRELATION_TARGET = 0.9

# =============================================================================
# OUTPUT AND SCHEMA SETTINGS
# =============================================================================
ARTIFACT_VERSION = "1.0.0"
SIM_SCHEMA_VERSION = 1
SCENARIO_SCHEMA_VERSION = 1
CHECKPOINT_SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "SIM_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"
SLOW_TESTS_ENV = "SIM_RUN_SLOW"
MANIFEST_NAME = "manifest.json"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

# =============================================================================
# SCENARIO KINDS
# =============================================================================
SCENARIO_KINDS = [
    "beamfocus",
    "doa_train",
    "doa_eval",
    "spectrum",
    "channel_est",
    "rayleigh",
]

# Subcommand descriptions for --help
SCENARIO_DESCRIPTIONS = {
    "beamfocus": "Fit SIM phases for near-field multi-user beamfocusing",
    "doa_train": "Train HOENN and baselines for DOA classification",
    "doa_eval": "Evaluate a trained HOENN checkpoint over an SNR grid",
    "spectrum": "Fit the SIM to a 2-D DFT and emit the angular spectrum",
    "channel_est": "Multi-slot least-squares channel estimation sweep",
    "rayleigh": "Rayleigh (near/far-field) distance of an aperture",
}

TWO_PI = 2.0 * math.pi
