"""
Carrier and planar-grid geometry for metasurfaces and antenna arrays.

This module provides:
- CarrierSpec: Carrier frequency and derived wavelength
- PlanarGrid: Rectangular lattice of elements on a plane
- make_planar_grid: Centered, row-major lattice construction
- rayleigh_distance: Near-/far-field boundary 2 D^2 / lambda
- far_field_steering: Plane-wave array response
- near_field_response: Exact spherical-wave array response

Coordinate frame: a default grid lies in the plane z = const with normal +z.
Azimuth is measured in the x-y plane from +x, elevation from the x-y plane
toward +z.
"""

import math

import numpy as np

from config import (
    SPEED_OF_LIGHT, UNIT_NORMAL_TOL, COINCIDENT_TOL_M, DEFAULT_PITCH_WAVELENGTHS
)
from errors import ValidationError, SingularityError


# A field vector is a 1-D complex numpy array, one entry per grid element.
FieldVector = np.ndarray


def _readonly(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


class CarrierSpec:
    """
    Carrier frequency with its free-space wavelength.

    Attributes:
        frequency_hz (float): Carrier frequency in Hz
        wavelength_m (float): c / frequency_hz
    """

    __slots__ = ['frequency_hz', 'wavelength_m']

    def __init__(self, frequency_hz):
        """
        Initialize a carrier.

        @param frequency_hz: Positive carrier frequency in Hz
        """
        frequency_hz = float(frequency_hz)
        if not math.isfinite(frequency_hz) or frequency_hz <= 0:
            raise ValidationError(f"must be positive, got {frequency_hz}", "frequency_hz")
        self.frequency_hz = frequency_hz
        self.wavelength_m = SPEED_OF_LIGHT / frequency_hz

    @property
    def wavenumber(self):
        """Free-space wavenumber k = 2 pi / lambda."""
        return 2.0 * math.pi / self.wavelength_m

    def __eq__(self, other):
        return isinstance(other, CarrierSpec) and self.frequency_hz == other.frequency_hz

    def __hash__(self):
        return hash(self.frequency_hz)

    def __repr__(self):
        return f"CarrierSpec({self.frequency_hz / 1e9:g} GHz, lambda={self.wavelength_m:.6g} m)"


class PlanarGrid:
    """
    Rectangular lattice of elements on a plane.

    Element n = r * cols + c sits at
    center + (c - (cols-1)/2) * pitch * u + (r - (rows-1)/2) * pitch * v,
    where (u, v, normal) is a right-handed orthonormal frame.

    Attributes:
        rows (int): Number of rows
        cols (int): Number of columns
        pitch_m (float): Element spacing in meters
        center (ndarray): Lattice center, shape (3,)
        normal (ndarray): Unit plane normal, shape (3,)
        element_positions (ndarray): Positions, shape (rows*cols, 3)
    """

    __slots__ = ['rows', 'cols', 'pitch_m', 'center', 'normal', 'element_positions']

    def __init__(self, rows, cols, pitch_m, center, normal, element_positions):
        """
        Initialize a grid from already-computed positions.

        Use make_planar_grid to build a regular lattice.
        """
        self.rows = int(rows)
        self.cols = int(cols)
        self.pitch_m = float(pitch_m)
        self.center = _readonly(center)
        self.normal = _readonly(normal)
        self.element_positions = _readonly(element_positions)
        if self.element_positions.shape != (self.rows * self.cols, 3):
            raise ValidationError(
                f"expected {self.rows * self.cols} positions, got {self.element_positions.shape}",
                "element_positions",
            )

    @property
    def size(self):
        """Number of elements (rows * cols)."""
        return self.rows * self.cols

    @property
    def element_area(self):
        """Area attributed to one element (pitch squared)."""
        return self.pitch_m ** 2

    @property
    def aperture_m(self):
        """Diagonal extent of the physical footprint, pitch * sqrt(rows^2 + cols^2)."""
        return self.pitch_m * math.hypot(self.rows, self.cols)

    def offset_along_normal(self, point):
        """
        Signed distance of a point from the grid plane.

        @param point: 3-D point
        @return: (point - center) . normal
        """
        return float(np.dot(np.asarray(point, dtype=float) - self.center, self.normal))

    def translated(self, offset):
        """
        Copy of this grid shifted by a 3-D offset.

        @param offset: 3-D displacement in meters
        @return: New PlanarGrid
        """
        offset = np.asarray(offset, dtype=float)
        return PlanarGrid(self.rows, self.cols, self.pitch_m, self.center + offset,
                          self.normal, self.element_positions + offset)

    def with_positions(self, positions):
        """
        Copy of this grid with displaced element positions (nominal plane kept).

        @param positions: Array of shape (size, 3)
        @return: New PlanarGrid
        """
        return PlanarGrid(self.rows, self.cols, self.pitch_m, self.center,
                          self.normal, positions)

    def __repr__(self):
        return (f"PlanarGrid({self.rows}x{self.cols}, pitch={self.pitch_m:g} m, "
                f"center={tuple(np.round(self.center, 6))})")


def _in_plane_basis(normal):
    """
    Orthonormal in-plane axes (u, v) for a unit normal.

    For normal +z this gives u = +x, v = +y.
    """
    helper = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(helper, normal)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = helper - np.dot(helper, normal) * normal
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


def make_planar_grid(rows, cols, pitch_m, center=(0.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0)):
    """
    Build a centered rectangular lattice in row-major order.

    @param rows: Number of rows (>= 1)
    @param cols: Number of columns (>= 1)
    @param pitch_m: Element spacing in meters (> 0)
    @param center: Lattice center
    @param normal: Unit plane normal
    @return: PlanarGrid
    """
    if int(rows) < 1 or int(cols) < 1:
        raise ValidationError(f"rows and cols must be >= 1, got {rows}x{cols}", "rows")
    if not pitch_m > 0:
        raise ValidationError(f"must be positive, got {pitch_m}", "pitch_m")

    normal = np.asarray(normal, dtype=float)
    if normal.shape != (3,) or abs(np.linalg.norm(normal) - 1.0) > UNIT_NORMAL_TOL:
        raise ValidationError(f"must be a unit 3-vector, got {normal}", "normal")
    center = np.asarray(center, dtype=float)

    u, v = _in_plane_basis(normal)
    r_idx, c_idx = np.divmod(np.arange(rows * cols), cols)
    x_off = (c_idx - (cols - 1) / 2.0) * pitch_m
    y_off = (r_idx - (rows - 1) / 2.0) * pitch_m
    positions = center + x_off[:, None] * u + y_off[:, None] * v

    return PlanarGrid(rows, cols, pitch_m, center, normal, positions)


def default_pitch(carrier):
    """Default element pitch (lambda/2) for a carrier."""
    return DEFAULT_PITCH_WAVELENGTHS * carrier.wavelength_m


def rayleigh_distance(aperture_m, carrier):
    """
    Rayleigh distance 2 D^2 / lambda separating near and far field.

    @param aperture_m: Aperture size D in meters (> 0)
    @param carrier: CarrierSpec
    @return: Distance in meters
    """
    if not aperture_m > 0:
        raise ValidationError(f"must be positive, got {aperture_m}", "aperture_m")
    return 2.0 * aperture_m ** 2 / carrier.wavelength_m


def grid_rayleigh_distance(grid, carrier):
    """Rayleigh distance of a grid, using its diagonal footprint as aperture."""
    return rayleigh_distance(grid.aperture_m, carrier)


def direction_vector(azimuth_rad, elevation_rad):
    """
    Unit vector pointing toward (azimuth, elevation).

    @param azimuth_rad: Azimuth from +x in the x-y plane
    @param elevation_rad: Elevation from the x-y plane toward +z
    @return: ndarray of shape (3,), or (..., 3) for array inputs
    """
    az = np.asarray(azimuth_rad, dtype=float)
    el = np.asarray(elevation_rad, dtype=float)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def far_field_steering(grid, azimuth_rad, elevation_rad, carrier):
    """
    Plane-wave array response for a far-field source.

    Entry n is exp(j k <u, p_n>) where u points from the array toward the
    source. A source on the +z axis (elevation pi/2) gives all ones.

    @param grid: PlanarGrid
    @param azimuth_rad: Azimuth in [0, 2 pi)
    @param elevation_rad: Elevation in [0, pi/2]
    @param carrier: CarrierSpec
    @return: Complex vector of length grid.size with unit-modulus entries
    """
    if not 0.0 <= elevation_rad <= math.pi / 2:
        raise ValidationError(f"must lie in [0, pi/2], got {elevation_rad}", "elevation_rad")
    if not 0.0 <= azimuth_rad < 2.0 * math.pi:
        raise ValidationError(f"must lie in [0, 2 pi), got {azimuth_rad}", "azimuth_rad")
    u = direction_vector(azimuth_rad, elevation_rad)
    return np.exp(1j * carrier.wavenumber * (grid.element_positions @ u))


def steering_matrix(grid, azimuths, elevations, carrier):
    """
    Stack far-field steering vectors for many directions.

    No range checks; used for batched dataset generation.

    @return: Complex array of shape (len(azimuths), grid.size)
    """
    u = direction_vector(azimuths, elevations)
    return np.exp(1j * carrier.wavenumber * (u @ grid.element_positions.T))


def near_field_response(grid, point, carrier):
    """
    Spherical-wave response of every grid element to a point.

    Entry n is (lambda / (4 pi d_n)) exp(-j 2 pi d_n / lambda) with d_n the
    exact element-to-point distance.

    @param grid: PlanarGrid
    @param point: 3-D point
    @param carrier: CarrierSpec
    @return: Complex vector of length grid.size
    """
    return near_field_matrix(grid, np.asarray(point, dtype=float)[None, :], carrier)[0]


def near_field_matrix(grid, points, carrier):
    """
    Spherical-wave responses for many points, one row per point.

    @param grid: PlanarGrid
    @param points: Array of shape (P, 3)
    @param carrier: CarrierSpec
    @return: Complex array of shape (P, grid.size)
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    diff = points[:, None, :] - grid.element_positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    if np.any(dist < COINCIDENT_TOL_M):
        raise SingularityError("point coincides with a grid element")
    lam = carrier.wavelength_m
    return lam / (4.0 * math.pi * dist) * np.exp(-1j * 2.0 * math.pi * dist / lam)
