"""
Tests for the angular grid and DOA dataset generation.
"""

import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from dataset import AngularGrid, generate_doa_dataset, sample_doa_fields, encode_input
from errors import ValidationError, StructuralError
from grid import CarrierSpec, make_planar_grid, default_pitch, steering_matrix
from metasurface import MetasurfaceLayer, HardwareProfile
from utils import make_rng


CARRIER = CarrierSpec(10e9)


class TestAngularGrid(unittest.TestCase):

    def setUp(self):
        self.grid = AngularGrid(8, 8)

    def test_reference_directions(self):
        self.assertEqual(self.grid.region_index(math.radians(120), math.radians(60)), 42)
        self.assertEqual(self.grid.region_index(math.radians(240), math.radians(30)), 21)

    def test_edges(self):
        self.assertEqual(self.grid.region_index(0.0, 0.0), 0)
        self.assertEqual(self.grid.region_index(2 * math.pi - 1e-12, math.pi / 2), 63)
        with self.assertRaises(ValidationError):
            self.grid.region_index(2 * math.pi, 0.1)
        with self.assertRaises(ValidationError):
            self.grid.region_index(0.1, -0.1)

    def test_vectorized_index(self):
        index = self.grid.region_index(np.array([0.1, math.radians(120)]),
                                       np.array([0.1, math.radians(60)]))
        assert_array_equal(index, [0, 42])

    def test_centers_map_back_to_their_region(self):
        azimuths, elevations = self.grid.region_centers()
        assert_array_equal(self.grid.region_index(azimuths, elevations), np.arange(64))
        assert_allclose(self.grid.region_center(42), (2.5 * math.pi / 4, 5.5 * math.pi / 16))
        assert_allclose(np.linalg.norm(self.grid.direction_from_index(7)), 1.0)

    def test_bounds(self):
        az_low, az_high, el_low, el_high = self.grid.region_bounds(9)
        assert_allclose([az_low, az_high, el_low, el_high],
                        [math.pi / 4, math.pi / 2, math.pi / 16, math.pi / 8])
        with self.assertRaises(ValidationError):
            self.grid.region_bounds(64)

    def test_invalid_partition(self):
        with self.assertRaises(ValidationError):
            AngularGrid(0, 8)


class TestDatasets(unittest.TestCase):

    def setUp(self):
        self.grid = AngularGrid(4, 2)
        self.aperture = make_planar_grid(4, 4, default_pitch(CARRIER))

    def test_balanced_and_labeled_correctly(self):
        data = generate_doa_dataset(self.grid, self.aperture, CARRIER, 5, None, seed=3)
        self.assertEqual(len(data), 40)
        assert_array_equal(data.class_counts(8), np.full(8, 5))
        assert_array_equal(self.grid.region_index(data.azimuths, data.elevations), data.labels)
        self.assertEqual(data.seed, 3)

    def test_noiseless_fields_are_steering_vectors(self):
        data = generate_doa_dataset(self.grid, self.aperture, CARRIER, 2, None, seed=1)
        expected = steering_matrix(self.aperture, data.azimuths, data.elevations, CARRIER)
        assert_array_equal(data.fields, expected)
        self.assertTrue(np.all(np.isinf(data.snr_db)))

    def test_noise_power_matches_snr(self):
        labels = np.zeros(4000, dtype=int)
        clean = sample_doa_fields(self.grid, self.aperture, CARRIER, labels, None, make_rng(5))
        noisy = sample_doa_fields(self.grid, self.aperture, CARRIER, labels, 10.0, make_rng(5))
        assert_array_equal(clean.azimuths, noisy.azimuths)
        noise_power = np.mean(np.abs(noisy.fields - clean.fields) ** 2)
        self.assertAlmostEqual(noise_power, 0.1, delta=0.005)

    def test_snr_range(self):
        data = generate_doa_dataset(self.grid, self.aperture, CARRIER, 10, (0.0, 20.0), seed=2)
        self.assertTrue(np.all((data.snr_db >= 0.0) & (data.snr_db <= 20.0)))
        self.assertGreater(np.ptp(data.snr_db), 0.0)
        with self.assertRaises(ValidationError):
            generate_doa_dataset(self.grid, self.aperture, CARRIER, 1, (10.0, 0.0), seed=2)

    def test_seeded_generation(self):
        first = generate_doa_dataset(self.grid, self.aperture, CARRIER, 3, 5.0, seed=8)
        second = generate_doa_dataset(self.grid, self.aperture, CARRIER, 3, 5.0, seed=8)
        assert_array_equal(first.fields, second.fields)

    def test_subset_and_samples(self):
        data = generate_doa_dataset(self.grid, self.aperture, CARRIER, 2, None, seed=1)
        part = data.subset([3, 0])
        assert_array_equal(part.labels, data.labels[[3, 0]])
        sample = data[5]
        self.assertEqual(sample.label, int(data.labels[5]))
        self.assertEqual(len(list(iter(part))), 2)
        self.assertEqual(data.with_receiver_noise(7.0).receiver_snr_db, 7.0)

    def test_rejects_bad_labels_and_sizes(self):
        with self.assertRaises(ValidationError):
            sample_doa_fields(self.grid, self.aperture, CARRIER, [8], None, make_rng(0))
        with self.assertRaises(ValidationError):
            generate_doa_dataset(self.grid, self.aperture, CARRIER, 0, None, seed=0)


class TestEncodeInput(unittest.TestCase):

    def setUp(self):
        self.layer = MetasurfaceLayer(make_planar_grid(2, 2, 0.01), np.zeros(4))

    def test_phase_encoding(self):
        encoded = encode_input([[0.0, 0.25], [0.5, 1.0]], self.layer)
        assert_allclose(encoded.phases, [0.0, math.pi / 2, math.pi, 0.0])
        assert_allclose(encoded.amplitudes, 1.0)

    def test_active_layer_gets_unit_amplitude(self):
        profile = HardwareProfile.active((0.0, 2.0))
        layer = MetasurfaceLayer(make_planar_grid(2, 2, 0.01), np.zeros(4), np.zeros(4), profile)
        assert_allclose(encode_input(np.full(4, 0.5), layer).amplitudes, 1.0)

    def test_rejects_bad_pixels(self):
        with self.assertRaises(ValidationError):
            encode_input([[0.0, 1.5], [0.5, 1.0]], self.layer)
        with self.assertRaises(StructuralError):
            encode_input(np.zeros(3), self.layer)


if __name__ == "__main__":
    unittest.main()
