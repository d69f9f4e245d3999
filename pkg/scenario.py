"""
Declarative experiment descriptions.

This module provides:
- Section dataclasses for every part of a scenario file
- Scenario: Fully validated run description
- parse_scenario / load_scenario: Strict TOML loading (unknown keys rejected)
- scenario_to_dict / scenario_to_toml: Canonical serialization
- scenario_hash: Content hash of the resolved scenario
- resolve_output_dir: --out / output_dir / environment / default precedence

A scenario file has top-level keys schema_version, name, kind, seed and
optionally output_dir, plus optional tables [carrier], [beamfocus], [doa],
[training], [evaluation], [optimizer], [spectrum], [channel_est] and
[rayleigh]. Missing keys take the defaults below.
"""

import json
import os
from dataclasses import dataclass, field, fields, replace, asdict

import toml

from config import (
    DEFAULT_FREQUENCY_HZ, DEFAULT_LAYER_ROWS, DEFAULT_LAYER_COLS, DEFAULT_LAYER_SPACING_M,
    DEFAULT_LAYER_COUNTS, DEFAULT_USER_DISTANCES_M, DEFAULT_TOTAL_POWER, CHANNEL_NEAR_FIELD_LOS,
    CHANNEL_MODES, HT2_PASSIVE, HARDWARE_KINDS, DEFAULT_HT3_AMPLITUDE_RANGE,
    DOA_AZIMUTH_BINS, DOA_ELEVATION_BINS, DOA_SIM_LAYERS, DOA_RECEIVER_ROWS, DOA_RECEIVER_COLS,
    DETECTOR_POWER, DETECTORS, DEFAULT_TRAIN_PER_REGION, DEFAULT_VALIDATION_PER_REGION,
    DEFAULT_LEARNING_RATE, DEFAULT_EPOCHS, DEFAULT_BATCH_SIZE, DEFAULT_TRAIN_SNR_DB,
    DEFAULT_SNR_GRID_DB, DEFAULT_EVAL_TRIALS, NOISE_AT_APERTURE, NOISE_POINTS,
    DEFAULT_STEP_SIZE, DEFAULT_ITERATIONS, DEFAULT_RESTARTS, DEFAULT_ALGORITHM,
    DEFAULT_DFT_DIMS, DEFAULT_DFT_LAYERS, DEFAULT_DFT_LAYER_SIDE,
    DEFAULT_PILOT_SNR_GRID_DB, DEFAULT_NMSE_TRIALS,
    SCENARIO_KINDS, SCENARIO_SCHEMA_VERSION, OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT,
)
from errors import ValidationError
from utils import sha256_text


# =============================================================================
# SECTIONS
# =============================================================================

@dataclass(frozen=True)
class CarrierSection:
    frequency_hz: float = DEFAULT_FREQUENCY_HZ


@dataclass(frozen=True)
class BeamfocusSection:
    """Multi-user near-field beamfocusing through a transmit SIM."""

    layer_rows: int = DEFAULT_LAYER_ROWS
    layer_cols: int = DEFAULT_LAYER_COLS
    pitch_m: float = None
    layer_spacing_m: float = DEFAULT_LAYER_SPACING_M
    layer_counts: tuple = tuple(DEFAULT_LAYER_COUNTS)
    profile: str = HT2_PASSIVE
    phase_bits: int = None
    amplitude_range: tuple = None
    coupled: bool = False
    feed_distance_m: float = None
    channel_mode: str = CHANNEL_NEAR_FIELD_LOS
    user_distances_m: tuple = tuple(DEFAULT_USER_DISTANCES_M)
    total_power: float = DEFAULT_TOTAL_POWER
    pathloss: float = 1.0
    map_x_range_m: tuple = (-1.0, 1.0)
    map_z_range_m: tuple = (0.25, 7.0)
    map_points: tuple = (41, 136)


@dataclass(frozen=True)
class DoaSection:
    """Receiver SIM geometry and dataset sizes for DOA classification."""

    az_bins: int = DOA_AZIMUTH_BINS
    el_bins: int = DOA_ELEVATION_BINS
    layers: int = DOA_SIM_LAYERS
    layer_rows: int = DEFAULT_LAYER_ROWS
    layer_cols: int = DEFAULT_LAYER_COLS
    layer_spacing_m: float = None
    receiver_rows: int = DOA_RECEIVER_ROWS
    receiver_cols: int = DOA_RECEIVER_COLS
    detector: str = DETECTOR_POWER
    agc: bool = True
    train_per_region: int = DEFAULT_TRAIN_PER_REGION
    validation_per_region: int = DEFAULT_VALIDATION_PER_REGION
    repeats: int = 1
    checkpoint: str = None


@dataclass(frozen=True)
class TrainingSection:
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    train_snr_db: float = DEFAULT_TRAIN_SNR_DB
    train_snr_max_db: float = None
    phase_jitter_std: float = 0.0
    amplitude_error_std: float = 0.0
    position_error_std_m: float = 0.0


@dataclass(frozen=True)
class EvaluationSection:
    snr_grid_db: tuple = tuple(DEFAULT_SNR_GRID_DB)
    trials: int = DEFAULT_EVAL_TRIALS
    noise_point: str = NOISE_AT_APERTURE


@dataclass(frozen=True)
class OptimizerSection:
    algorithm: str = DEFAULT_ALGORITHM
    step_size: float = DEFAULT_STEP_SIZE
    iterations: int = DEFAULT_ITERATIONS
    restarts: int = DEFAULT_RESTARTS
    cosine_decay: bool = True
    project_every_iteration: bool = False


@dataclass(frozen=True)
class SpectrumSection:
    rows: int = DEFAULT_DFT_DIMS[0]
    cols: int = DEFAULT_DFT_DIMS[1]
    layers: int = DEFAULT_DFT_LAYERS
    layer_side: int = DEFAULT_DFT_LAYER_SIDE
    layer_spacing_m: float = None


@dataclass(frozen=True)
class ChannelEstSection:
    layers: int = 2
    layer_rows: int = 4
    layer_cols: int = 4
    layer_spacing_m: float = DEFAULT_LAYER_SPACING_M
    feed_rows: int = 2
    feed_cols: int = 2
    users: int = 2
    slots: int = None
    snr_grid_db: tuple = tuple(DEFAULT_PILOT_SNR_GRID_DB)
    trials: int = DEFAULT_NMSE_TRIALS
    pathloss: float = 1.0


@dataclass(frozen=True)
class RayleighSection:
    """Aperture for the Rayleigh distance; the beamfocus layer diagonal if unset."""

    aperture_m: float = None


SECTIONS = {
    "carrier": CarrierSection,
    "beamfocus": BeamfocusSection,
    "doa": DoaSection,
    "training": TrainingSection,
    "evaluation": EvaluationSection,
    "optimizer": OptimizerSection,
    "spectrum": SpectrumSection,
    "channel_est": ChannelEstSection,
    "rayleigh": RayleighSection,
}

TOP_LEVEL_KEYS = {"schema_version", "name", "kind", "seed", "output_dir"}


@dataclass(frozen=True)
class Scenario:
    """
    One fully resolved experiment.

    Attributes:
        name: Run name (used for the default output directory)
        kind: One of SCENARIO_KINDS
        seed: Root seed of every random stream
        output_dir: Output directory, or None for the default
        carrier ... rayleigh: Section dataclasses
    """

    name: str
    kind: str
    seed: int = 0
    output_dir: str = None
    carrier: CarrierSection = field(default_factory=CarrierSection)
    beamfocus: BeamfocusSection = field(default_factory=BeamfocusSection)
    doa: DoaSection = field(default_factory=DoaSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    spectrum: SpectrumSection = field(default_factory=SpectrumSection)
    channel_est: ChannelEstSection = field(default_factory=ChannelEstSection)
    rayleigh: RayleighSection = field(default_factory=RayleighSection)

    def with_overrides(self, seed=None, output_dir=None):
        """Copy with CLI overrides applied (None keeps the current value)."""
        return replace(self,
                       seed=self.seed if seed is None else int(seed),
                       output_dir=self.output_dir if output_dir is None else str(output_dir))


# =============================================================================
# PARSING
# =============================================================================

def _coerce(value, kind, name):
    """Convert a TOML value to the field's declared type."""
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind is tuple:
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(_scalar(v, name) for v in value)
    except TypeError:
        raise ValidationError(f"expected {kind.__name__}, got {value!r}", name) from None
    return value


def _scalar(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {value!r}", name)
    return float(value) if isinstance(value, float) else value


def _parse_section(cls, table, section):
    if not isinstance(table, dict):
        raise ValidationError("must be a table", section)
    known = {f.name: f for f in fields(cls)}
    for key in table:
        if key not in known:
            raise ValidationError("unknown key", f"{section}.{key}")
    values = {key: _coerce(value, known[key].type, f"{section}.{key}") for key, value in table.items()}
    return cls(**values)


def parse_scenario(document):
    """
    Build and validate a Scenario from a decoded TOML document.

    @param document: dict from toml.loads
    @return: Scenario
    """
    for key in document:
        if key not in TOP_LEVEL_KEYS and key not in SECTIONS:
            raise ValidationError("unknown key", key)
    version = document.get("schema_version", SCENARIO_SCHEMA_VERSION)
    if version != SCENARIO_SCHEMA_VERSION:
        raise ValidationError(f"unsupported version {version!r}", "schema_version")
    for key in ("name", "kind"):
        if key not in document:
            raise ValidationError("missing required key", key)

    sections = {name: _parse_section(cls, document.get(name, {}), name)
                for name, cls in SECTIONS.items()}
    output_dir = document.get("output_dir")
    scenario = Scenario(
        name=_coerce(document["name"], str, "name"),
        kind=_coerce(document["kind"], str, "kind"),
        seed=_coerce(document.get("seed", 0), int, "seed"),
        output_dir=None if output_dir is None else _coerce(output_dir, str, "output_dir"),
        **sections,
    )
    validate_scenario(scenario)
    return scenario


def load_scenario(path):
    """
    Read a scenario file.

    @param path: TOML file
    @return: Scenario
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = toml.load(handle)
    except toml.TomlDecodeError as exc:
        raise ValidationError(f"line {exc.lineno}: {exc.msg}", str(path)) from None
    except OSError as exc:
        raise ValidationError(str(exc), "config") from None
    return parse_scenario(document)


def _require(condition, message, name):
    if not condition:
        raise ValidationError(message, name)


def validate_scenario(scenario):
    """
    Range and consistency checks of a scenario.

    @param scenario: Scenario
    @raises ValidationError: naming the first offending field
    """
    _require(scenario.kind in SCENARIO_KINDS, f"must be one of {SCENARIO_KINDS}", "kind")
    _require(scenario.name.strip() != "", "must not be empty", "name")
    _require(scenario.seed >= 0, "must be >= 0", "seed")
    _require(scenario.carrier.frequency_hz > 0, "must be positive", "carrier.frequency_hz")

    beam = scenario.beamfocus
    _require(len(beam.user_distances_m) > 0, "at least one user is required",
             "beamfocus.user_distances_m")
    _require(all(d > 0 for d in beam.user_distances_m), "distances must be positive",
             "beamfocus.user_distances_m")
    _require(len(set(beam.user_distances_m)) == len(beam.user_distances_m),
             "users must be distinct", "beamfocus.user_distances_m")
    _require(len(beam.layer_counts) > 0 and all(int(n) == n and n >= 1 for n in beam.layer_counts),
             "layer counts must be integers >= 1", "beamfocus.layer_counts")
    _require(beam.layer_rows >= 1 and beam.layer_cols >= 1, "must be >= 1", "beamfocus.layer_rows")
    _require(beam.layer_spacing_m > 0, "must be positive", "beamfocus.layer_spacing_m")
    _require(beam.profile in HARDWARE_KINDS, f"must be one of {HARDWARE_KINDS}", "beamfocus.profile")
    _require(beam.phase_bits is None or beam.phase_bits >= 1, "must be >= 1", "beamfocus.phase_bits")
    _require(beam.amplitude_range is None or len(beam.amplitude_range) == 2,
             "must be [min, max]", "beamfocus.amplitude_range")
    _require(beam.channel_mode in CHANNEL_MODES, f"must be one of {CHANNEL_MODES}",
             "beamfocus.channel_mode")
    _require(beam.total_power > 0, "must be positive", "beamfocus.total_power")
    _require(beam.pathloss >= 0, "must be >= 0", "beamfocus.pathloss")
    _require(len(beam.map_x_range_m) == 2 and len(beam.map_z_range_m) == 2,
             "ranges must be [low, high]", "beamfocus.map_x_range_m")
    _require(len(beam.map_points) == 2 and all(int(n) == n and n >= 1 for n in beam.map_points),
             "must be [nx, nz] with positive integers", "beamfocus.map_points")

    doa = scenario.doa
    _require(doa.az_bins >= 1 and doa.el_bins >= 1, "must be >= 1", "doa.az_bins")
    _require(doa.layers >= 1, "must be >= 1", "doa.layers")
    _require(doa.detector in DETECTORS, f"must be one of {DETECTORS}", "doa.detector")
    _require(doa.train_per_region >= 1, "must be >= 1", "doa.train_per_region")
    _require(doa.validation_per_region >= 0, "must be >= 0", "doa.validation_per_region")
    _require(doa.repeats >= 1, "must be >= 1", "doa.repeats")

    training = scenario.training
    _require(training.learning_rate >= 0, "must be >= 0", "training.learning_rate")
    _require(training.epochs >= 1, "must be >= 1", "training.epochs")
    _require(training.batch_size >= 1, "must be >= 1", "training.batch_size")
    _require(training.train_snr_max_db is None or training.train_snr_max_db >= training.train_snr_db,
             "must be >= train_snr_db", "training.train_snr_max_db")
    for name in ("phase_jitter_std", "amplitude_error_std", "position_error_std_m"):
        _require(getattr(training, name) >= 0, "must be >= 0", f"training.{name}")

    evaluation = scenario.evaluation
    _require(evaluation.trials >= 1, "must be >= 1", "evaluation.trials")
    _require(len(evaluation.snr_grid_db) > 0, "must not be empty", "evaluation.snr_grid_db")
    _require(evaluation.noise_point in NOISE_POINTS, f"must be one of {NOISE_POINTS}",
             "evaluation.noise_point")

    optimizer = scenario.optimizer
    _require(optimizer.algorithm in ("adam", "gd"), "must be 'adam' or 'gd'", "optimizer.algorithm")
    _require(optimizer.step_size >= 0, "must be >= 0", "optimizer.step_size")
    _require(optimizer.iterations >= 0, "must be >= 0", "optimizer.iterations")
    _require(optimizer.restarts >= 1, "must be >= 1", "optimizer.restarts")

    spectrum = scenario.spectrum
    _require(spectrum.rows >= 1 and spectrum.cols >= 1, "must be >= 1", "spectrum.rows")
    _require(spectrum.layers >= 1 and spectrum.layer_side >= 1, "must be >= 1", "spectrum.layers")

    estimation = scenario.channel_est
    _require(estimation.users >= 1, "must be >= 1", "channel_est.users")
    _require(estimation.trials >= 1, "must be >= 1", "channel_est.trials")
    _require(estimation.slots is None or estimation.slots >= 1, "must be >= 1", "channel_est.slots")
    _require(len(estimation.snr_grid_db) > 0, "must not be empty", "channel_est.snr_grid_db")

    rayleigh = scenario.rayleigh
    _require(rayleigh.aperture_m is None or rayleigh.aperture_m > 0, "must be positive",
             "rayleigh.aperture_m")


# =============================================================================
# SERIALIZATION
# =============================================================================

def _strip_none(values):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in values.items() if v is not None}


def scenario_to_dict(scenario):
    """Resolved scenario as nested plain dicts (None values omitted, tuples as lists)."""
    document = {"schema_version": SCENARIO_SCHEMA_VERSION, "name": scenario.name,
                "kind": scenario.kind, "seed": scenario.seed}
    if scenario.output_dir is not None:
        document["output_dir"] = scenario.output_dir
    for name in SECTIONS:
        document[name] = _strip_none(asdict(getattr(scenario, name)))
    return document


def scenario_to_toml(scenario):
    """Resolved scenario as a TOML document that parse_scenario reads back identically."""
    return toml.dumps(scenario_to_dict(scenario))


def scenario_hash(scenario):
    """SHA-256 of the canonical JSON form of the resolved scenario (output_dir excluded)."""
    document = scenario_to_dict(scenario)
    document.pop("output_dir", None)
    return sha256_text(json.dumps(document, sort_keys=True, separators=(",", ":")))


def resolve_output_dir(scenario, cli_out=None):
    """
    Output directory with precedence --out > output_dir > $SIM_OUTPUT_ROOT/name > runs/name.

    @param scenario: Scenario
    @param cli_out: Value of --out, or None
    @return: Directory path
    """
    if cli_out:
        return str(cli_out)
    if scenario.output_dir:
        return scenario.output_dir
    return os.path.join(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT), scenario.name)


def default_amplitude_range(section):
    """Amplitude range of an HT-III beamfocus profile."""
    return tuple(section.amplitude_range) if section.amplitude_range else DEFAULT_HT3_AMPLITUDE_RANGE
