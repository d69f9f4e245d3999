"""
Machine-readable run outputs.

This module provides:
- RunRecorder: Writes CSV tables and text files atomically into a run directory
- RunManifest: Scenario hash, version, wall clock, seeds and output checksums
- Column orders of every table the experiments emit
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field, asdict

import pandas as pd

from config import ARTIFACT_VERSION, MANIFEST_NAME
from utils import atomic_write_text, sha256_file, format_time

logger = logging.getLogger(__name__)

# Full round-trip precision for float64.
FLOAT_FORMAT = "%.17g"

# =============================================================================
# TABLE COLUMNS
# =============================================================================
BEAM_SUMMARY_COLUMNS = ["layers", "final_loss", "continuous_loss", "leakage", "condition_number",
                        "users_at_good_sinr", "iterations", "best_restart"]
BEAM_SINR_COLUMNS = ["layers", "user", "distance_m", "sinr_db", "zf_sinr_db"]
BEAM_TRACE_COLUMNS = ["layers", "iteration", "loss"]
BEAM_MAP_COLUMNS = ["row", "col", "x_m", "y_m", "z_m", "power"]
ACCURACY_COLUMNS = ["snr_db", "accuracy", "stderr", "n"]
COMPARISON_COLUMNS = ["snr_db", "hoenn", "onn_only", "random_sim_enn"]
TRAINING_COLUMNS = ["model", "repeat", "epoch", "loss"]
VALIDATION_COLUMNS = ["model", "repeat", "accuracy", "n"]
NMSE_COLUMNS = ["snr_db", "nmse", "nmse_db", "stderr", "trials"]
ESTIMATION_SUMMARY_COLUMNS = ["unknowns", "observations_per_slot", "slots", "noiseless_nmse",
                              "nmse_decades_per_10db"]
SPECTRUM_COLUMNS = ["row", "col", "power"]
DFT_FIT_COLUMNS = ["rows", "cols", "layers", "correlation", "final_loss", "iterations", "peak_row", "peak_col"]
RAYLEIGH_COLUMNS = ["aperture_m", "frequency_hz", "wavelength_m", "rayleigh_distance_m"]


@dataclass
class RunManifest:
    """
    Record of one run.

    Attributes:
        scenario_hash: SHA-256 of the resolved scenario
        artifact_version: Package version that produced the outputs
        wall_clock_s: Run duration in seconds
        seeds: Named seeds used by the run
        outputs: List of {"path", "sha256"} entries, paths relative to the run directory
        config: Resolved scenario as plain dicts
    """

    scenario_hash: str
    artifact_version: str = ARTIFACT_VERSION
    wall_clock_s: float = 0.0
    seeds: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


class RunRecorder:
    """
    Collects the files of one run and writes its manifest.

    Attributes:
        directory: Run output directory
        files: Relative paths written so far, in order
    """

    def __init__(self, directory):
        """
        Initialize a recorder and create the directory.

        @param directory: Output directory
        """
        self.directory = str(directory)
        self.files = []
        self.started = time.perf_counter()
        os.makedirs(self.directory, exist_ok=True)

    def path(self, name):
        """Absolute path of a file inside the run directory."""
        return os.path.join(self.directory, name)

    def write_table(self, name, rows, columns):
        """
        Write rows as CSV with a fixed column order.

        @param name: File name (relative)
        @param rows: List of dicts or a DataFrame
        @param columns: Column order
        @return: Absolute path
        """
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows, columns=columns)
        text = frame.to_csv(index=False, columns=columns, float_format=FLOAT_FORMAT,
                            lineterminator="\n")
        return self.write_text(name, text)

    def write_text(self, name, text):
        """Write a text file atomically and record it."""
        target = self.path(name)
        atomic_write_text(target, text)
        return self.record(name)

    def record(self, name):
        """Record a file another writer already produced."""
        if name not in self.files:
            self.files.append(name)
        logger.info("wrote %s", self.path(name))
        return self.path(name)

    def finalize(self, scenario_hash, seeds, config):
        """
        Write manifest.json with checksums of every recorded file.

        @param scenario_hash: Hash of the resolved scenario
        @param seeds: Dict of named seeds
        @param config: Resolved scenario dict
        @return: RunManifest
        """
        elapsed = time.perf_counter() - self.started
        outputs = [{"path": name, "sha256": sha256_file(self.path(name))} for name in self.files]
        manifest = RunManifest(scenario_hash, ARTIFACT_VERSION, elapsed, dict(seeds), outputs, config)
        atomic_write_text(self.path(MANIFEST_NAME), manifest.to_json())
        logger.info("run finished in %s, %d outputs", format_time(elapsed), len(outputs))
        return manifest


def load_manifest(directory):
    """Read the manifest of a run directory as a dict."""
    with open(os.path.join(directory, MANIFEST_NAME), "r", encoding="utf-8") as handle:
        return json.load(handle)
