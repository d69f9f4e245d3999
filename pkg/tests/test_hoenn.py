"""
Tests for the hybrid optical-electronic DOA classifier and its baselines.
"""

import math
import os
import tempfile
import unittest
from dataclasses import replace

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from algorithms import OptimizerConfig
from dataset import AngularGrid, DoaDataset, generate_doa_dataset
from errors import ValidationError, ConfigurationError, TrainingError, StructuralError
from grid import CarrierSpec
from hoenn import (
    HoennModel, build_doa_onn, init_hoenn, hoenn_forward, angular_spectrum, cross_entropy,
    hoenn_loss_and_grad, dataset_loss, TrainConfig, train_hoenn, evaluate_accuracy,
    OnnOnlyClassifier, onn_only_classifier, fit_onn_only, random_sim_enn_classifier,
    dft_matrix_2d, SpectrumGenerator, build_dft_sim, fit_dft_spectrum,
    save_checkpoint, load_checkpoint,
)
from metasurface import ImperfectionModel, transfer_matrix
from utils import make_rng, complex_gaussian


CARRIER = CarrierSpec(10e9)


def small_onn(seed=1, rows=3, receiver=(2, 2)):
    return build_doa_onn(CARRIER, num_layers=2, rows=rows, cols=rows, receiver_shape=receiver,
                         seed=seed)


class OracleClassifier:
    """Always right."""

    def predict(self, dataset):
        return dataset.labels


class ConstantClassifier:
    """Always region 0."""

    def predict(self, dataset):
        return np.zeros(len(dataset), dtype=int)


class TestForward(unittest.TestCase):

    def setUp(self):
        self.onn = small_onn()
        self.fields = complex_gaussian(make_rng(0), (8, 9))

    def test_uniform_model(self):
        model = HoennModel(self.onn, np.zeros((64, 4)), np.zeros(64))
        assert_allclose(hoenn_forward(model, self.fields[0]), np.full(64, 1 / 64), atol=1e-15)
        labels = np.arange(64)
        logits = np.zeros((64, 64))
        self.assertAlmostEqual(cross_entropy(logits, labels), math.log(64), delta=1e-9)

    def test_posterior_is_a_distribution(self):
        model = init_hoenn(self.onn, 4, seed=2, scale=1.0)
        probabilities = hoenn_forward(model, self.fields)
        self.assertEqual(probabilities.shape, (8, 4))
        assert_allclose(probabilities.sum(axis=1), 1.0)
        self.assertTrue(np.all(probabilities >= 0))

    def test_global_phase_invariance(self):
        model = init_hoenn(self.onn, 4, seed=2, scale=1.0)
        rotated = self.fields * np.exp(1j * 1.234)
        assert_allclose(hoenn_forward(model, rotated), hoenn_forward(model, self.fields), atol=1e-12)

    def test_agc_removes_input_scale(self):
        model = init_hoenn(self.onn, 4, seed=2, scale=1.0)
        assert_allclose(hoenn_forward(model, 50.0 * self.fields), hoenn_forward(model, self.fields),
                        atol=1e-12)

    def test_readout_with_and_without_agc(self):
        weights = make_rng(3).normal(0.0, 1.0, (4, 4))
        bias = np.array([0.1, -0.2, 0.3, 0.0])
        detected = np.abs(self.fields @ transfer_matrix(self.onn).T) ** 2
        plain = HoennModel(self.onn, weights, bias, agc=False)
        logits = detected @ weights.T + bias
        expected = np.exp(logits - logits.max(axis=1, keepdims=True))
        assert_allclose(hoenn_forward(plain, self.fields),
                        expected / expected.sum(axis=1, keepdims=True), rtol=1e-10)
        gained = HoennModel(self.onn, weights, bias)
        normalized = 4.0 * detected / detected.sum(axis=1, keepdims=True)
        logits = normalized @ weights.T + bias
        expected = np.exp(logits - logits.max(axis=1, keepdims=True))
        assert_allclose(hoenn_forward(gained, self.fields),
                        expected / expected.sum(axis=1, keepdims=True), rtol=1e-10)

    def test_angular_spectrum_layout(self):
        model = init_hoenn(self.onn, 4, seed=2)
        spectrum = angular_spectrum(model, self.fields[0], AngularGrid(2, 2))
        self.assertEqual(spectrum.shape, (2, 2))
        assert_allclose(spectrum.ravel(), hoenn_forward(model, self.fields[0]))
        with self.assertRaises(ConfigurationError):
            angular_spectrum(model, self.fields[0], AngularGrid(8, 8))

    def test_model_validation(self):
        with self.assertRaises(StructuralError):
            HoennModel(self.onn, np.zeros((4, 5)), np.zeros(4))
        with self.assertRaises(StructuralError):
            HoennModel(self.onn, np.zeros((4, 4)), np.zeros(3))
        with self.assertRaises(ValidationError):
            HoennModel(self.onn, np.zeros((4, 4)), np.zeros(4), detector="square_law")


class TestGradients(unittest.TestCase):

    def check_gradients(self, detector, agc):
        onn = small_onn(seed=3)
        model = init_hoenn(onn, 4, detector=detector, agc=agc, seed=4, scale=0.5)
        rng = make_rng(5)
        fields = complex_gaussian(rng, (6, 9))
        labels = np.array([0, 1, 2, 3, 1, 2])
        loss, grad_w, grad_b, grad_phases = hoenn_loss_and_grad(model, fields, labels)
        self.assertAlmostEqual(loss, dataset_loss(model, DoaDataset(
            fields, labels, np.zeros(6), np.zeros(6), np.zeros(6))), places=12)

        step = 1e-6

        def check(analytic, numeric):
            self.assertAlmostEqual(analytic, numeric, delta=1e-5 * max(1e-3, abs(numeric)))

        for index in [(0, 0), (2, 3), (3, 1)]:
            plus, minus = model.enn_weights.copy(), model.enn_weights.copy()
            plus[index] += step
            minus[index] -= step
            numeric = (hoenn_loss_and_grad(model.with_parameters(plus, model.enn_bias), fields, labels)[0]
                       - hoenn_loss_and_grad(model.with_parameters(minus, model.enn_bias), fields,
                                             labels)[0]) / (2 * step)
            check(grad_w[index], numeric)

        plus, minus = model.enn_bias.copy(), model.enn_bias.copy()
        plus[2] += step
        minus[2] -= step
        numeric = (hoenn_loss_and_grad(model.with_parameters(model.enn_weights, plus), fields, labels)[0]
                   - hoenn_loss_and_grad(model.with_parameters(model.enn_weights, minus), fields,
                                         labels)[0]) / (2 * step)
        check(grad_b[2], numeric)

        phases = [np.array(p) for p in onn.phases()]
        for layer, atom in [(0, 0), (0, 4), (1, 8)]:
            plus = [p.copy() for p in phases]
            minus = [p.copy() for p in phases]
            plus[layer][atom] += step
            minus[layer][atom] -= step
            up = model.with_parameters(model.enn_weights, model.enn_bias, plus)
            down = model.with_parameters(model.enn_weights, model.enn_bias, minus)
            numeric = (hoenn_loss_and_grad(up, fields, labels)[0]
                       - hoenn_loss_and_grad(down, fields, labels)[0]) / (2 * step)
            check(grad_phases[layer][atom], numeric)

    def test_power_detector_with_agc(self):
        self.check_gradients("magnitude_squared", True)

    def test_power_detector_without_agc(self):
        self.check_gradients("magnitude_squared", False)

    def test_magnitude_detector_with_agc(self):
        self.check_gradients("magnitude", True)

    def test_frozen_onn_returns_no_phase_gradients(self):
        model = init_hoenn(small_onn(), 4, seed=1)
        fields = complex_gaussian(make_rng(1), (3, 9))
        self.assertIsNone(hoenn_loss_and_grad(model, fields, np.array([0, 1, 2]), train_onn=False)[3])


class TestTraining(unittest.TestCase):

    def setUp(self):
        self.grid = AngularGrid(2, 2)
        self.onn = build_doa_onn(CARRIER, num_layers=2, rows=4, cols=4, receiver_shape=(2, 2), seed=2)
        self.data = generate_doa_dataset(self.grid, self.onn.layers[0].grid, CARRIER, 16, None, seed=4)

    def test_zero_learning_rate_leaves_model_unchanged(self):
        model = init_hoenn(self.onn, 4, seed=1)
        trained, trace = train_hoenn(model, self.data,
                                     TrainConfig(learning_rate=0.0, epochs=2, batch_size=16))
        assert_array_equal(trained.enn_weights, model.enn_weights)
        assert_array_equal(trained.onn.phases()[1], model.onn.phases()[1])
        self.assertEqual(len(trace), 3)
        assert_allclose(trace, trace[0])

    def test_training_reduces_loss_and_is_deterministic(self):
        model = init_hoenn(self.onn, 4, seed=1)
        config = TrainConfig(learning_rate=0.05, epochs=8, batch_size=16, seed=3)
        trained, trace = train_hoenn(model, self.data, config)
        again, _ = train_hoenn(model, self.data, config)
        self.assertEqual(len(trace), 9)
        self.assertLess(trace[-1], trace[0])
        self.assertAlmostEqual(trace[-1], dataset_loss(trained, self.data), places=12)
        assert_array_equal(trained.enn_weights, again.enn_weights)

    def test_augmented_training_updates_nominal_phases(self):
        model = init_hoenn(self.onn, 4, seed=1)
        config = TrainConfig(learning_rate=0.05, epochs=2, batch_size=32, seed=3,
                             imperfection_augmentation=ImperfectionModel(phase_jitter_std=0.05))
        trained, trace = train_hoenn(model, self.data, config)
        self.assertEqual(len(trace), 3)
        self.assertFalse(np.allclose(trained.onn.phases()[0], model.onn.phases()[0]))

    def test_joint_training_fits_at_least_as_well_as_enn_only(self):
        joint_losses, enn_losses = [], []
        for seed in range(3):
            onn = build_doa_onn(CARRIER, num_layers=2, rows=4, cols=4, receiver_shape=(2, 2),
                                seed=10 + seed)
            model = init_hoenn(onn, 4, seed=seed)
            config = TrainConfig(learning_rate=0.05, epochs=60, batch_size=len(self.data), seed=seed)
            _, joint = train_hoenn(model, self.data, config)
            _, enn_only = train_hoenn(model, self.data, replace(config, train_onn=False))
            joint_losses.append(joint[-1])
            enn_losses.append(enn_only[-1])
        self.assertLessEqual(np.mean(joint_losses), np.mean(enn_losses))

    def test_trained_model_depends_on_per_element_phase(self):
        model = init_hoenn(self.onn, 4, seed=1)
        trained, _ = train_hoenn(model, self.data,
                                 TrainConfig(learning_rate=0.05, epochs=5, batch_size=16, seed=3))
        field = self.data.fields[0]
        permuted = np.abs(field) * np.exp(1j * np.angle(field)[make_rng(6).permutation(field.size)])
        rotated = field * np.exp(1j * 0.7)
        original = hoenn_forward(trained, field)
        assert_allclose(hoenn_forward(trained, rotated), original, atol=1e-12)
        self.assertGreater(float(np.max(np.abs(hoenn_forward(trained, permuted) - original))), 1e-6)

    def test_nan_loss(self):
        model = init_hoenn(self.onn, 4, seed=1)
        broken = model.with_parameters(np.full_like(model.enn_weights, np.nan), model.enn_bias)
        with self.assertRaises(TrainingError) as caught:
            train_hoenn(broken, self.data, TrainConfig(epochs=1, batch_size=16))
        self.assertEqual((caught.exception.epoch, caught.exception.batch), (0, 0))

    def test_config_validation(self):
        with self.assertRaises(ValidationError):
            TrainConfig(learning_rate=-0.1)
        with self.assertRaises(ValidationError):
            TrainConfig(batch_size=0)
        with self.assertRaises(ValidationError):
            TrainConfig(algorithm="rmsprop")


class TestEvaluation(unittest.TestCase):

    def setUp(self):
        self.grid = AngularGrid(2, 2)
        self.onn = small_onn()

    def test_oracle_and_chance(self):
        oracle = evaluate_accuracy(OracleClassifier(), self.grid, [0.0, 10.0], 100, seed=1,
                                   aperture=self.onn.layers[0].grid, carrier=CARRIER)
        self.assertEqual([row["accuracy"] for row in oracle], [1.0, 1.0])
        self.assertEqual(oracle[0]["stderr"], 0.0)
        self.assertEqual(oracle[1]["n"], 100)
        chance = evaluate_accuracy(ConstantClassifier(), self.grid, [0.0], 100, seed=1,
                                   aperture=self.onn.layers[0].grid, carrier=CARRIER)
        self.assertEqual(chance[0]["accuracy"], 0.25)
        self.assertAlmostEqual(chance[0]["stderr"], math.sqrt(0.25 * 0.75 / 100))

    def test_receiver_noise_point(self):
        model = init_hoenn(self.onn, 4, seed=1)
        rows = evaluate_accuracy(model, self.grid, [5.0], 100, seed=2, noise_point="receiver")
        again = evaluate_accuracy(model, self.grid, [5.0], 100, seed=2, noise_point="receiver")
        self.assertEqual(rows, again)
        with self.assertRaises(ValidationError):
            evaluate_accuracy(model, self.grid, [5.0], 100, seed=2, noise_point="antenna")

    def test_accuracy_does_not_fall_as_snr_rises(self):
        onn = build_doa_onn(CARRIER, num_layers=2, rows=4, cols=4, receiver_shape=(2, 2), seed=2)
        data = generate_doa_dataset(self.grid, onn.layers[0].grid, CARRIER, 32, None, seed=4)
        trained, _ = train_hoenn(init_hoenn(onn, 4, seed=1), data,
                                 TrainConfig(learning_rate=0.05, epochs=40, batch_size=len(data)))
        rows = evaluate_accuracy(trained, self.grid, [-10.0, 0.0, 10.0, 20.0], 400, seed=8)
        for lower, higher in zip(rows[:-1], rows[1:]):
            tolerance = 2.0 * math.hypot(lower["stderr"], higher["stderr"])
            self.assertGreaterEqual(higher["accuracy"], lower["accuracy"] - tolerance)

    def test_few_trials_warn_but_still_evaluate(self):
        with self.assertLogs("hoenn", level="WARNING"):
            rows = evaluate_accuracy(OracleClassifier(), self.grid, [0.0], 8, seed=1,
                                     aperture=self.onn.layers[0].grid, carrier=CARRIER)
        self.assertEqual((rows[0]["n"], rows[0]["accuracy"]), (8, 1.0))
        with self.assertRaises(ValidationError):
            evaluate_accuracy(OracleClassifier(), self.grid, [0.0], 0, seed=1,
                              aperture=self.onn.layers[0].grid, carrier=CARRIER)


class TestBaselines(unittest.TestCase):

    def setUp(self):
        self.grid = AngularGrid(2, 2)

    def one_hot_dataset(self):
        return DoaDataset(np.eye(4, dtype=complex), np.arange(4), np.zeros(4), np.zeros(4),
                          np.full(4, np.inf))

    def test_strongest_antenna_wins(self):
        permutation = np.array([2, 0, 3, 1])
        classifier = OnnOnlyClassifier(np.eye(4)[permutation], self.grid)
        # aperture element j lands on antenna i where permutation[i] == j
        assert_array_equal(classifier.predict(self.one_hot_dataset()), np.argsort(permutation))

    def test_ties_go_to_the_lowest_index(self):
        classifier = OnnOnlyClassifier(np.ones((4, 4)), self.grid)
        assert_array_equal(classifier.predict(self.one_hot_dataset()), np.zeros(4))

    def test_antenna_count_must_match_regions(self):
        with self.assertRaises(ConfigurationError):
            OnnOnlyClassifier(np.ones((3, 4)), self.grid)
        with self.assertRaises(ConfigurationError):
            onn_only_classifier(small_onn(receiver=(3, 3)), self.grid)

    def test_fit_onn_only(self):
        onn = small_onn(seed=2)
        classifier, report = fit_onn_only(onn, self.grid, OptimizerConfig(iterations=40, restarts=1))
        self.assertIsInstance(classifier, OnnOnlyClassifier)
        self.assertLessEqual(report.continuous_loss, report.loss_trace[0])
        assert_allclose(classifier.transfer, transfer_matrix(report.sim))

    def test_random_sim_keeps_its_phases(self):
        onn = small_onn(seed=2)
        data = generate_doa_dataset(self.grid, onn.layers[0].grid, CARRIER, 4, None, seed=1)
        config = TrainConfig(learning_rate=0.05, epochs=2, batch_size=8)
        first, trace = random_sim_enn_classifier(7, self.grid, config, data, onn)
        second, _ = random_sim_enn_classifier(7, self.grid, config, data, onn)
        self.assertEqual(len(trace), 3)
        for a, b in zip(first.onn.phases(), second.onn.phases()):
            assert_array_equal(a, b)
        self.assertFalse(np.allclose(first.onn.phases()[0], onn.phases()[0]))


class TestDftSpectrum(unittest.TestCase):

    def test_dft_matrix(self):
        assert_allclose(dft_matrix_2d(1, 1), [[1.0]])
        F = dft_matrix_2d(2, 4)
        assert_allclose(F.conj().T @ F, np.eye(8), atol=1e-12)

    def test_boresight_peak_for_an_exact_dft(self):
        generator = SpectrumGenerator(dft_matrix_2d(4, 4), (4, 4))
        power = generator(np.ones(16))
        self.assertEqual(np.unravel_index(np.argmax(power), power.shape), (0, 0))
        self.assertAlmostEqual(power[0, 0], 16.0)
        self.assertAlmostEqual(power.sum(), 16.0)

    def test_single_bin_fit(self):
        sim = build_dft_sim(CARRIER, (1, 1), num_layers=1, side=2, seed=3)
        report, generator = fit_dft_spectrum(sim, (1, 1), OptimizerConfig(iterations=30, restarts=1))
        self.assertAlmostEqual(report.correlation, 1.0, places=12)
        self.assertEqual(generator(np.ones(1)).shape, (1, 1))

    def test_shape_mismatch(self):
        sim = build_dft_sim(CARRIER, (2, 2), num_layers=1, side=3)
        with self.assertRaises(StructuralError):
            fit_dft_spectrum(sim, (3, 3))


class TestCheckpoints(unittest.TestCase):

    def test_round_trip(self):
        model = init_hoenn(small_onn(seed=5), 4, detector="magnitude", agc=False, seed=2)
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "model.npz")
            save_checkpoint(path, model, "abc123")
            loaded, header = load_checkpoint(path)
        assert_array_equal(loaded.enn_weights, model.enn_weights)
        assert_array_equal(loaded.enn_bias, model.enn_bias)
        self.assertEqual((loaded.detector, loaded.agc), ("magnitude", False))
        self.assertEqual(header["config_hash"], "abc123")
        assert_allclose(transfer_matrix(loaded.onn), transfer_matrix(model.onn), rtol=1e-12, atol=1e-15)

    def test_missing_checkpoint(self):
        with self.assertRaises(ConfigurationError):
            load_checkpoint(os.path.join(tempfile.gettempdir(), "no-such-model.npz"))


if __name__ == "__main__":
    unittest.main()
