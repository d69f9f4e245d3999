"""
Diffraction operators and stochastic wireless channels.

This module provides:
- rs_coefficient / rs_matrix: First-kind Rayleigh-Sommerfeld point-to-point coefficients
- DiffractionOperator: Linear map between two parallel element grids
- build_interlayer_operator: Operator between adjacent layers (or feeds -> layer)
- spatial_correlation: Isotropic-scattering sinc correlation of a grid
- sample_correlated_rayleigh: Spatially correlated Rayleigh fading channel
- save/load helpers for operators and channels (.npz containers)
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from config import COINCIDENT_TOL_M, PARALLEL_TOL, CLAMPED_MASS_WARN_FRACTION
from errors import GeometryError, SingularityError, ValidationError
from grid import PlanarGrid
from utils import make_rng, complex_gaussian, STREAM_CHANNEL

logger = logging.getLogger(__name__)


# =============================================================================
# RAYLEIGH-SOMMERFELD COEFFICIENTS
# =============================================================================

def rs_matrix(source_positions, target_positions, area, normal, carrier):
    """
    Rayleigh-Sommerfeld coefficients between two point sets.

    Entry (m, n) = (A d_z / d^2) (1/(2 pi d) - j/lambda) exp(j 2 pi d / lambda)
    with d = |target_m - source_n| and d_z its component along the source normal.

    @param source_positions: Array of shape (N, 3)
    @param target_positions: Array of shape (M, 3)
    @param area: Source element area A (> 0)
    @param normal: Unit source normal, shape (3,)
    @param carrier: CarrierSpec
    @return: Complex array of shape (M, N)
    """
    if not area > 0:
        raise ValidationError(f"must be positive, got {area}", "area")
    source_positions = np.asarray(source_positions, dtype=float).reshape(-1, 3)
    target_positions = np.asarray(target_positions, dtype=float).reshape(-1, 3)
    diff = target_positions[:, None, :] - source_positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    if np.any(dist < COINCIDENT_TOL_M):
        raise SingularityError("source and target elements coincide")

    lam = carrier.wavelength_m
    d_z = diff @ np.asarray(normal, dtype=float)
    return (area * d_z / dist ** 2) * (1.0 / (2.0 * math.pi * dist) - 1j / lam) \
        * np.exp(1j * 2.0 * math.pi * dist / lam)


def rs_coefficient(source_point, area, target_point, carrier, normal=(0.0, 0.0, 1.0)):
    """
    Rayleigh-Sommerfeld coefficient from one source element to one target point.

    @param source_point: 3-D source position
    @param area: Source element area (> 0)
    @param target_point: 3-D target position
    @param carrier: CarrierSpec
    @param normal: Unit normal of the source element
    @return: Complex coefficient
    """
    return complex(rs_matrix(source_point, target_point, area, normal, carrier)[0, 0])


# =============================================================================
# DIFFRACTION OPERATORS
# =============================================================================

@dataclass(frozen=True, eq=False)
class DiffractionOperator:
    """
    Propagation from every source element to every target element.

    Attributes:
        matrix: Complex array (target.size x source.size)
        source_grid: PlanarGrid the wave leaves
        target_grid: PlanarGrid the wave reaches
        spacing_m: Plane-to-plane distance along the source normal
    """

    matrix: np.ndarray
    source_grid: PlanarGrid
    target_grid: PlanarGrid
    spacing_m: float

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=complex)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        if matrix.shape != (self.target_grid.size, self.source_grid.size):
            raise ValidationError(
                f"matrix shape {matrix.shape} does not match grids "
                f"({self.target_grid.size}, {self.source_grid.size})",
                "matrix",
            )
        if not np.all(np.isfinite(matrix)):
            raise ValidationError("operator has non-finite entries", "matrix")

    @property
    def shape(self):
        return self.matrix.shape


def build_interlayer_operator(source, target, carrier):
    """
    Rayleigh-Sommerfeld operator from a source grid to a parallel target grid.

    Entry (m, n) = rs_coefficient(source element n, target element m).
    Element positions are used as stored, so displaced (imperfect) grids work.

    @param source: Source PlanarGrid
    @param target: Target PlanarGrid (parallel to source)
    @param carrier: CarrierSpec
    @return: DiffractionOperator
    """
    if abs(abs(float(np.dot(source.normal, target.normal))) - 1.0) > PARALLEL_TOL:
        raise GeometryError("source and target grids are not parallel", "target")
    spacing = source.offset_along_normal(target.center)
    if abs(spacing) < COINCIDENT_TOL_M:
        raise GeometryError("source and target planes coincide", "target")

    matrix = rs_matrix(source.element_positions, target.element_positions,
                       source.element_area, source.normal, carrier)
    return DiffractionOperator(matrix, source, target, abs(spacing))


# =============================================================================
# CORRELATED RAYLEIGH FADING
# =============================================================================

@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """
    One draw of a spatially correlated Rayleigh channel.

    Attributes:
        matrix: Complex array (receive x transmit), here users x grid elements
        correlation: Real symmetric PSD correlation matrix R (after clamping)
        pathloss: Large-scale power gain
        seed: Seed the draw was made from
        clamped_mass: Sum of |negative eigenvalues| removed from R
    """

    matrix: np.ndarray
    correlation: np.ndarray
    pathloss: float
    seed: int
    clamped_mass: float = 0.0


def sinc_correlation(grid, carrier):
    """
    Isotropic-scattering correlation R_mn = sinc(2 d_mn / lambda) of a grid.

    Uses the normalized sinc, so R_nn = 1 and R_mn = 0 at d = lambda/2.
    """
    positions = grid.element_positions
    dist = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    return np.sinc(2.0 * dist / carrier.wavelength_m)


def spatial_correlation(grid, carrier):
    """
    Clamped sinc correlation of a grid and its symmetric square root.

    The matrix square root comes from a symmetric eigendecomposition with
    negative eigenvalues clamped to zero.

    @param grid: PlanarGrid
    @param carrier: CarrierSpec
    @return: (R_clamped, R_sqrt, clamped_mass)
    """
    corr = sinc_correlation(grid, carrier)
    eigvals, eigvecs = linalg.eigh(corr)
    clamped_mass = float(-eigvals[eigvals < 0].sum())
    eigvals = np.clip(eigvals, 0.0, None)
    corr_clamped = (eigvecs * eigvals) @ eigvecs.T
    corr_sqrt = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T

    trace = float(np.trace(corr))
    if clamped_mass > CLAMPED_MASS_WARN_FRACTION * trace:
        logger.warning("correlation clamping removed %.3g of trace %.3g", clamped_mass, trace)
    return corr_clamped, corr_sqrt, clamped_mass


def sample_correlated_rayleigh(grid, num_users, pathloss, seed, carrier):
    """
    Draw H = sqrt(pathloss) * G * R^(1/2) with G i.i.d. CN(0, 1).

    @param grid: PlanarGrid on the SIM side
    @param num_users: Number of rows (users)
    @param pathloss: Non-negative power gain
    @param seed: Non-negative integer seed
    @param carrier: CarrierSpec
    @return: ChannelRealization
    """
    if int(num_users) < 1:
        raise ValidationError(f"must be >= 1, got {num_users}", "num_users")
    if not pathloss >= 0:
        raise ValidationError(f"must be non-negative, got {pathloss}", "pathloss")

    corr, corr_sqrt, clamped = spatial_correlation(grid, carrier)
    rng = make_rng(seed, STREAM_CHANNEL)
    gaussian = complex_gaussian(rng, (int(num_users), grid.size))
    matrix = math.sqrt(pathloss) * (gaussian @ corr_sqrt)
    return ChannelRealization(matrix, corr, float(pathloss), int(seed), clamped)


# =============================================================================
# CONTAINERS
# =============================================================================

def _grid_arrays(prefix, grid):
    return {
        f"{prefix}_shape": np.array([grid.rows, grid.cols]),
        f"{prefix}_pitch": np.array(grid.pitch_m),
        f"{prefix}_center": grid.center,
        f"{prefix}_normal": grid.normal,
        f"{prefix}_positions": grid.element_positions,
    }


def _grid_from_arrays(prefix, data):
    rows, cols = (int(v) for v in data[f"{prefix}_shape"])
    return PlanarGrid(rows, cols, float(data[f"{prefix}_pitch"]), data[f"{prefix}_center"],
                      data[f"{prefix}_normal"], data[f"{prefix}_positions"])


def save_operator(path, operator):
    """
    Write a DiffractionOperator to an .npz container.

    Keys: matrix, spacing_m, and for prefix in (source, target):
    <prefix>_shape, <prefix>_pitch, <prefix>_center, <prefix>_normal, <prefix>_positions.
    """
    np.savez(path, matrix=operator.matrix, spacing_m=np.array(operator.spacing_m),
             **_grid_arrays("source", operator.source_grid),
             **_grid_arrays("target", operator.target_grid))


def load_operator(path):
    """Read a DiffractionOperator written by save_operator."""
    with np.load(path) as data:
        return DiffractionOperator(data["matrix"], _grid_from_arrays("source", data),
                                   _grid_from_arrays("target", data), float(data["spacing_m"]))


def save_channel(path, channel):
    """Write a ChannelRealization to an .npz container (keys match the field names)."""
    np.savez(path, matrix=channel.matrix, correlation=channel.correlation,
             pathloss=np.array(channel.pathloss), seed=np.array(channel.seed),
             clamped_mass=np.array(channel.clamped_mass))


def load_channel(path):
    """Read a ChannelRealization written by save_channel."""
    with np.load(path) as data:
        return ChannelRealization(data["matrix"], data["correlation"], float(data["pathloss"]),
                                  int(data["seed"]), float(data["clamped_mass"]))

