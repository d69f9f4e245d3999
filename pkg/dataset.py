"""
Direction-of-arrival data for the HOENN classifier.

This module provides dataset generation including:
- AngularGrid: Uniform azimuth/elevation partition of the upper half space
- DoaSample / DoaDataset: Labeled incident fields
- generate_doa_dataset: Balanced, seeded dataset with aperture noise
- sample_doa_fields: Fields for an arbitrary label sequence
- encode_input: Pixel data -> phase-encoded input layer
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from config import TWO_PI, DOA_AZIMUTH_BINS, DOA_ELEVATION_BINS
from errors import ValidationError, StructuralError
from grid import steering_matrix, direction_vector
from metasurface import MetasurfaceLayer
from utils import make_rng, complex_gaussian, db_to_linear, STREAM_DATASET

logger = logging.getLogger(__name__)

# Keeps a drawn angle strictly inside its bin after floating-point scaling.
BIN_MARGIN = 1e-9


class AngularGrid:
    """
    Partition of azimuth [0, 2 pi) x elevation [0, pi/2] into equal bins.

    Region index = el_bin * az_bins + az_bin. Elevation pi/2 falls in the
    top bin.

    Attributes:
        az_bins (int): Number of azimuth bins
        el_bins (int): Number of elevation bins
    """

    __slots__ = ['az_bins', 'el_bins']

    def __init__(self, az_bins=DOA_AZIMUTH_BINS, el_bins=DOA_ELEVATION_BINS):
        """
        Initialize the partition.

        @param az_bins: Azimuth bins (>= 1)
        @param el_bins: Elevation bins (>= 1)
        """
        if int(az_bins) < 1 or int(el_bins) < 1:
            raise ValidationError(f"bins must be >= 1, got {az_bins}x{el_bins}", "angular_grid")
        self.az_bins = int(az_bins)
        self.el_bins = int(el_bins)

    @property
    def num_regions(self):
        return self.az_bins * self.el_bins

    @property
    def az_width(self):
        return TWO_PI / self.az_bins

    @property
    def el_width(self):
        return (math.pi / 2.0) / self.el_bins

    def region_index(self, azimuth_rad, elevation_rad):
        """
        Region containing a direction.

        @param azimuth_rad: Azimuth(s) in [0, 2 pi)
        @param elevation_rad: Elevation(s) in [0, pi/2]
        @return: int, or int array for array inputs
        """
        az = np.asarray(azimuth_rad, dtype=float)
        el = np.asarray(elevation_rad, dtype=float)
        if np.any((az < 0) | (az >= TWO_PI)):
            raise ValidationError("must lie in [0, 2 pi)", "azimuth_rad")
        if np.any((el < 0) | (el > math.pi / 2)):
            raise ValidationError("must lie in [0, pi/2]", "elevation_rad")
        az_bin = np.minimum(np.floor(az / self.az_width).astype(int), self.az_bins - 1)
        el_bin = np.minimum(np.floor(el / self.el_width).astype(int), self.el_bins - 1)
        index = el_bin * self.az_bins + az_bin
        return int(index) if index.ndim == 0 else index

    def region_bounds(self, index):
        """
        Angular bounds of a region.

        @param index: Region index
        @return: (az_low, az_high, el_low, el_high) in radians
        """
        el_bin, az_bin = divmod(self._check(index), self.az_bins)
        return (az_bin * self.az_width, (az_bin + 1) * self.az_width,
                el_bin * self.el_width, (el_bin + 1) * self.el_width)

    def region_center(self, index):
        """Center (azimuth, elevation) of a region in radians."""
        az_low, az_high, el_low, el_high = self.region_bounds(index)
        return (az_low + az_high) / 2.0, (el_low + el_high) / 2.0

    def direction_from_index(self, index):
        """Unit vector toward the center of a region."""
        return direction_vector(*self.region_center(index))

    def region_centers(self):
        """Arrays (azimuths, elevations) of every region center, in index order."""
        centers = np.array([self.region_center(i) for i in range(self.num_regions)])
        return centers[:, 0], centers[:, 1]

    def _check(self, index):
        index = int(index)
        if not 0 <= index < self.num_regions:
            raise ValidationError(f"must lie in [0, {self.num_regions}), got {index}", "region")
        return index

    def __eq__(self, other):
        return isinstance(other, AngularGrid) and (self.az_bins, self.el_bins) == \
            (other.az_bins, other.el_bins)

    def __hash__(self):
        return hash((self.az_bins, self.el_bins))

    def __repr__(self):
        return f"AngularGrid({self.az_bins}x{self.el_bins})"


@dataclass(frozen=True, eq=False)
class DoaSample:
    """
    One incident wave at the ONN input aperture.

    Attributes:
        field: Complex vector, one entry per aperture element
        label: Region index
        snr_db: Aperture SNR (inf when noiseless)
        true_azimuth_rad: Source azimuth
        true_elevation_rad: Source elevation
    """

    field: np.ndarray
    label: int
    snr_db: float
    true_azimuth_rad: float
    true_elevation_rad: float


@dataclass(frozen=True, eq=False)
class DoaDataset:
    """
    Column-stored batch of DoaSample.

    Attributes:
        fields: Complex array (samples x aperture elements)
        labels: Int array (samples,)
        azimuths: Source azimuths (samples,)
        elevations: Source elevations (samples,)
        snr_db: Per-sample aperture SNR (samples,)
        seed: Seed the dataset was drawn from
        receiver_snr_db: If set, classifiers add receiver noise at this SNR
    """

    fields: np.ndarray
    labels: np.ndarray
    azimuths: np.ndarray
    elevations: np.ndarray
    snr_db: np.ndarray
    seed: int = 0
    receiver_snr_db: float = None

    def __post_init__(self):
        count = self.fields.shape[0]
        for name in ("labels", "azimuths", "elevations", "snr_db"):
            if getattr(self, name).shape != (count,):
                raise StructuralError(f"{name} must have {count} entries")

    def __len__(self):
        return self.fields.shape[0]

    def __getitem__(self, index):
        return DoaSample(self.fields[index], int(self.labels[index]), float(self.snr_db[index]),
                         float(self.azimuths[index]), float(self.elevations[index]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, indices):
        """Dataset restricted to the given sample indices (order kept)."""
        indices = np.asarray(indices)
        return DoaDataset(self.fields[indices], self.labels[indices], self.azimuths[indices],
                          self.elevations[indices], self.snr_db[indices], self.seed,
                          self.receiver_snr_db)

    def with_receiver_noise(self, snr_db):
        """Same samples, evaluated with receiver-side noise at snr_db."""
        return DoaDataset(self.fields, self.labels, self.azimuths, self.elevations, self.snr_db,
                          self.seed, snr_db)

    def class_counts(self, num_regions):
        return np.bincount(self.labels, minlength=num_regions)


def _draw_snr(snr_db, count, rng):
    if snr_db is None:
        return np.full(count, math.inf)
    if isinstance(snr_db, (tuple, list)):
        low, high = (float(v) for v in snr_db)
        if low > high:
            raise ValidationError(f"empty SNR range {snr_db}", "snr_db")
        return rng.uniform(low, high, count)
    return np.full(count, float(snr_db))


def sample_doa_fields(grid, aperture, carrier, labels, snr_db, rng):
    """
    Draw one incident field per label.

    Angles are uniform within each region; aperture noise is complex AWGN
    with variance 10^(-snr/10) per element. The SNR is referenced to the
    unit-power steering vector at the aperture, not to the field after the SIM.

    @param grid: AngularGrid
    @param aperture: PlanarGrid of the ONN input layer
    @param carrier: CarrierSpec
    @param labels: Int array of region indices
    @param snr_db: float, (low, high) range, or None / inf for noiseless fields
    @param rng: numpy Generator
    @return: DoaDataset (seed field left at 0)
    """
    labels = np.asarray(labels, dtype=int)
    if np.any((labels < 0) | (labels >= grid.num_regions)):
        raise ValidationError("label outside the angular grid", "labels")
    el_bin, az_bin = np.divmod(labels, grid.az_bins)
    offsets = rng.uniform(BIN_MARGIN, 1.0 - BIN_MARGIN, (labels.size, 2))
    azimuths = (az_bin + offsets[:, 0]) * grid.az_width
    elevations = (el_bin + offsets[:, 1]) * grid.el_width

    fields = steering_matrix(aperture, azimuths, elevations, carrier)
    snr = _draw_snr(snr_db, labels.size, rng)
    noisy = np.isfinite(snr)
    if np.any(noisy):
        variance = 1.0 / db_to_linear(snr[noisy])
        noise = complex_gaussian(rng, (int(noisy.sum()), aperture.size))
        fields[noisy] += noise * np.sqrt(variance)[:, None]
    return DoaDataset(fields, labels, azimuths, elevations, snr)


def generate_doa_dataset(grid, receiver, carrier, samples_per_region, snr_db, seed):
    """
    Balanced DOA dataset: exactly samples_per_region samples per region.

    Samples are ordered by region; training shuffles them.

    @param grid: AngularGrid
    @param receiver: PlanarGrid of the ONN input aperture
    @param carrier: CarrierSpec
    @param samples_per_region: Samples per region (>= 1)
    @param snr_db: Aperture SNR in dB, a (low, high) range, or None for noiseless
    @param seed: Non-negative integer seed
    @return: DoaDataset
    """
    if int(samples_per_region) < 1:
        raise ValidationError(f"must be >= 1, got {samples_per_region}", "samples_per_region")
    rng = make_rng(seed, STREAM_DATASET)
    labels = np.repeat(np.arange(grid.num_regions), int(samples_per_region))
    dataset = sample_doa_fields(grid, receiver, carrier, labels, snr_db, rng)
    logger.debug("generated %d DOA samples (%d per region)", len(dataset), samples_per_region)
    return DoaDataset(dataset.fields, dataset.labels, dataset.azimuths, dataset.elevations,
                      dataset.snr_db, int(seed))


def encode_input(data, input_layer):
    """
    Phase-encode pixel values in [0, 1] onto a layer: p -> phase 2 pi p, amplitude 1.

    @param data: Real array shaped like the layer grid (rows x cols) or flat
    @param input_layer: MetasurfaceLayer to encode onto
    @return: New MetasurfaceLayer
    """
    grid = input_layer.grid
    data = np.asarray(data, dtype=float)
    if data.shape not in ((grid.rows, grid.cols), (grid.size,)):
        raise StructuralError(f"data shape {data.shape} does not match grid {grid.rows}x{grid.cols}")
    if not np.all(np.isfinite(data)) or np.any((data < 0) | (data > 1)):
        raise ValidationError("pixel values must lie in [0, 1]", "data")
    amplitudes = None if input_layer.profile.unit_modulus else np.ones(grid.size)
    return MetasurfaceLayer(grid, TWO_PI * data.ravel(), amplitudes, input_layer.profile)
