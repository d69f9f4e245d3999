"""
Tests for metasurface layers, SIM cascades and their serialization.
"""

import math
import unittest
from unittest import mock

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

import metasurface
from errors import ValidationError, StructuralError
from grid import CarrierSpec, make_planar_grid
from metasurface import (
    HardwareProfile, CouplingCurve, default_coupling_curve, MetasurfaceLayer, SimStack,
    quantize_phases, project_to_profile, build_sim_stack, cascade_transfer, transfer_matrix,
    cascade_forward, cascade_phase_gradient, propagate_field, ImperfectionModel,
    apply_imperfections, sim_to_toml, sim_from_toml,
)
from utils import make_rng, complex_gaussian


CARRIER = CarrierSpec(10e9)


def small_sim(seed=0, layers=2, side=2, profile=None):
    """SIM with a 1x2 feed array and a 2x1 receiver, random phases."""
    return build_sim_stack(layers, side, side, CARRIER, 0.01, profile=profile, seed=seed,
                           feed_shape=(1, 2), receiver_shape=(2, 1))


class TestHardwareProfiles(unittest.TestCase):

    def test_constraints(self):
        with self.assertRaises(ValidationError):
            HardwareProfile("HT4")
        with self.assertRaises(ValidationError):
            HardwareProfile.passive(0)
        with self.assertRaises(ValidationError):
            HardwareProfile.active((2.0, 1.0))
        with self.assertRaises(ValidationError):
            HardwareProfile("HT1_fixed", amplitude_range=(0.0, 1.0))

    def test_amplitude_limits(self):
        self.assertEqual(HardwareProfile.fixed().amplitude_limits(), (1.0, 1.0))
        self.assertEqual(HardwareProfile.active((0.5, 3.0)).amplitude_limits(), (0.5, 3.0))

    def test_coupling_curve_inversion(self):
        curve = default_coupling_curve((0.0, 4.0))
        amplitude, phase = curve.at(0.5)
        self.assertAlmostEqual(float(phase), math.pi)
        self.assertAlmostEqual(float(curve.amplitude_for_phase(math.pi)), float(amplitude))

    def test_coupling_curve_must_be_invertible(self):
        with self.assertRaises(ValidationError):
            CouplingCurve([0.0, 1.0, 2.0], [1.0, 1.0, 1.0], [0.0, 2.0, 1.0])


class TestLayers(unittest.TestCase):

    def setUp(self):
        self.grid = make_planar_grid(2, 2, 0.01)

    def test_phases_are_wrapped(self):
        layer = MetasurfaceLayer(self.grid, [-0.5, 7.0, 2 * math.pi, 1.0])
        self.assertTrue(np.all((layer.phases >= 0) & (layer.phases < 2 * math.pi)))
        assert_allclose(layer.phases, [2 * math.pi - 0.5, 7.0 - 2 * math.pi, 0.0, 1.0])

    def test_unit_modulus_enforced(self):
        with self.assertRaises(ValidationError):
            MetasurfaceLayer(self.grid, np.zeros(4), [1.0, 1.0, 0.5, 1.0])
        with self.assertRaises(ValidationError):
            MetasurfaceLayer(self.grid, np.zeros(3))

    def test_active_amplitude_range(self):
        profile = HardwareProfile.active((0.0, 2.0))
        MetasurfaceLayer(self.grid, np.zeros(4), [0.0, 2.0, 1.5, 0.1], profile)
        with self.assertRaises(ValidationError):
            MetasurfaceLayer(self.grid, np.zeros(4), [0.0, 2.5, 1.5, 0.1], profile)

    def test_passive_layer_preserves_norm(self):
        rng = make_rng(4)
        layer = MetasurfaceLayer(self.grid, rng.uniform(0, 10, 4))
        field = complex_gaussian(rng, 4)
        self.assertAlmostEqual(np.linalg.norm(layer.coefficients * field), np.linalg.norm(field),
                               delta=1e-12)

    def test_from_voltages(self):
        profile = HardwareProfile.active((0.0, 4.0), coupled=True)
        layer = MetasurfaceLayer.from_voltages(self.grid, [0.0, 0.25, 0.5, 1.0], profile)
        assert_allclose(layer.amplitudes[[0, 2]], [0.0, 2.0], atol=1e-12)


class TestQuantization(unittest.TestCase):

    def setUp(self):
        self.grid = make_planar_grid(1, 6, 0.01)

    def test_one_bit_levels_and_ties(self):
        phases = [0.1, math.pi / 2, 4.0, math.pi + 0.2, 2 * math.pi - 1e-9, 2.0]
        layer = quantize_phases(MetasurfaceLayer(self.grid, phases), 1)
        assert_allclose(layer.phases, [0.0, 0.0, math.pi, math.pi, 0.0, math.pi])
        self.assertTrue(set(layer.phases.tolist()) <= {0.0, math.pi})
        self.assertEqual(layer.profile.phase_bits, 1)

    def test_idempotent(self):
        rng = make_rng(2)
        layer = MetasurfaceLayer(self.grid, rng.uniform(0, 2 * math.pi, 6))
        for bits in (1, 2, 3):
            once = quantize_phases(layer, bits)
            twice = quantize_phases(once, bits)
            assert_array_equal(once.phases, twice.phases)

    def test_two_bit_error_is_at_most_a_quarter_step(self):
        grid = make_planar_grid(1000, 1000, 0.01)
        layer = MetasurfaceLayer(grid, make_rng(9).uniform(0.0, 2 * math.pi, grid.size))
        quantized = quantize_phases(layer, 2)
        difference = np.mod(quantized.phases - layer.phases, 2 * math.pi)
        error = np.minimum(difference, 2 * math.pi - difference)
        self.assertLessEqual(float(error.max()), math.pi / 4 + 1e-12)
        self.assertGreater(float(error.max()), math.pi / 4 - 1e-3)
        self.assertTrue(set(np.round(quantized.phases / (math.pi / 2), 9).tolist()) <= {0, 1, 2, 3})

    def test_projection(self):
        passive = MetasurfaceLayer(self.grid, np.full(6, 1.0), None, HardwareProfile.passive(2))
        assert_allclose(project_to_profile(passive).phases, math.pi / 2)
        coupled = HardwareProfile.active((0.0, 4.0), coupled=True)
        active = MetasurfaceLayer(self.grid, np.full(6, math.pi), np.ones(6), coupled)
        assert_allclose(project_to_profile(active).amplitudes, 2.0, atol=1e-9)
        free = MetasurfaceLayer(self.grid, np.full(6, 1.0))
        self.assertIs(project_to_profile(free), free)


class TestCascade(unittest.TestCase):

    def test_single_layer_identity_excitation(self):
        sim = build_sim_stack(1, 2, 3, CARRIER)
        assert_allclose(transfer_matrix(sim), np.eye(6))

    def test_single_layer_phases_on_diagonal(self):
        phases = [np.array([0.0, math.pi / 2, math.pi, 1.0])]
        sim = build_sim_stack(1, 2, 2, CARRIER, phases=phases)
        assert_allclose(transfer_matrix(sim), np.diag(np.exp(1j * phases[0])), atol=1e-15)

    def test_transfer_is_operator_product(self):
        sim = small_sim(seed=1, layers=3)
        expected = sim.input_operator.matrix
        for index, layer in enumerate(sim.layers):
            if index > 0:
                expected = sim.interlayer_operators[index - 1].matrix @ expected
            expected = np.diag(layer.coefficients) @ expected
        expected = sim.output_operator.matrix @ expected
        assert_allclose(transfer_matrix(sim), expected, rtol=1e-12, atol=1e-15)

    def test_path_sum(self):
        sim = small_sim(seed=2, layers=2)
        w_in, w_mid, w_out = (sim.input_operator.matrix, sim.interlayer_operators[0].matrix,
                              sim.output_operator.matrix)
        t1, t2 = (layer.coefficients for layer in sim.layers)
        total = 0.0
        for n2 in range(4):
            for n1 in range(4):
                total += w_out[1, n2] * t2[n2] * w_mid[n2, n1] * t1[n1] * w_in[n1, 0]
        self.assertAlmostEqual(transfer_matrix(sim)[1, 0], total, places=12)

    def test_segments_multiply(self):
        sim = small_sim(seed=3, layers=4)
        full = cascade_transfer(sim, 0, 4)
        assert_allclose(cascade_transfer(sim, 2, 4) @ cascade_transfer(sim, 0, 2), full,
                        rtol=1e-10, atol=1e-14)
        with self.assertRaises(StructuralError):
            cascade_transfer(sim, 2, 2)

    def test_forward_matches_transfer(self):
        sim = small_sim(seed=4)
        inputs = complex_gaussian(make_rng(1), (2, 3))
        layer_inputs, output = cascade_forward(sim, inputs)
        self.assertEqual(len(layer_inputs), 2)
        assert_allclose(output, transfer_matrix(sim) @ inputs, rtol=1e-12)
        with self.assertRaises(StructuralError):
            cascade_forward(sim, np.ones(3))

    def test_phase_gradient_matches_finite_differences(self):
        for seed in range(5):
            sim = small_sim(seed=seed)
            target = complex_gaussian(make_rng(seed, 1), (2, 2))

            def loss(phases):
                Y = transfer_matrix(sim.with_phases(phases))
                return float(np.sum(np.abs(Y - target) ** 2))

            layer_inputs, output = cascade_forward(sim)
            grads = cascade_phase_gradient(sim, layer_inputs, 2.0 * (output - target))
            phases = [np.array(p) for p in sim.phases()]
            step = 1e-6
            for layer in range(2):
                for atom in range(4):
                    plus = [p.copy() for p in phases]
                    minus = [p.copy() for p in phases]
                    plus[layer][atom] += step
                    minus[layer][atom] -= step
                    numeric = (loss(plus) - loss(minus)) / (2 * step)
                    self.assertAlmostEqual(grads[layer][atom], numeric,
                                           delta=1e-5 * max(1.0, abs(numeric)))

    def test_output_change_is_bounded_by_the_phase_change(self):
        for seed in range(10):
            sim = small_sim(seed=seed, layers=3)
            rng = make_rng(seed, 2)
            operators = (sim.input_operator,) + sim.interlayer_operators + (sim.output_operator,)
            gain = np.prod([np.linalg.norm(op.matrix, 2) for op in operators])
            deltas = [rng.uniform(-1e-3, 1e-3, layer.size) for layer in sim.layers]
            perturbed = sim.with_phases([p + d for p, d in zip(sim.phases(), deltas)])
            inputs = complex_gaussian(rng, (sim.num_feeds, 3))

            change = np.linalg.norm((transfer_matrix(perturbed) - transfer_matrix(sim)) @ inputs)
            # unit-modulus layers: each layer moves by at most its largest phase change
            epsilon = sum(float(np.max(np.abs(d))) for d in deltas)
            self.assertGreater(change, 0.0)
            self.assertLessEqual(change, epsilon * gain * np.linalg.norm(inputs))

    def test_propagate_field_linear_and_saturated(self):
        sim = small_sim(seed=5)
        feed = np.array([1.0, 0.5j])
        assert_allclose(propagate_field(sim, feed), transfer_matrix(sim) @ feed, rtol=1e-12)

        level = 0.1
        profile = HardwareProfile.active((0.0, 4.0), saturation_level=level)
        sim = build_sim_stack(1, 2, 2, CARRIER, profile=profile)
        out = propagate_field(sim, np.full(4, 100.0 + 0j))
        self.assertTrue(np.all(np.abs(out) <= level))
        small = propagate_field(sim, np.full(4, 1e-6 + 0j))
        assert_allclose(small, np.full(4, 1e-6), rtol=1e-6)

    def test_structural_checks(self):
        sim = small_sim()
        with self.assertRaises(StructuralError):
            SimStack(sim.layers, 0.01, CARRIER, sim.input_operator, ())
        with self.assertRaises(StructuralError):
            sim.with_phases([np.zeros(4)])

    def test_geometry(self):
        sim = build_sim_stack(3, 2, 2, CARRIER, 0.003, feed_shape=(1, 2))
        z = [float(layer.grid.center[2]) for layer in sim.layers]
        assert_allclose(z, [0.0, 0.003, 0.006])
        self.assertAlmostEqual(float(sim.feed_grid.center[2]), -2 * CARRIER.wavelength_m)
        self.assertEqual((sim.num_feeds, sim.num_outputs), (2, 4))


class TestImperfections(unittest.TestCase):

    def test_identity_model(self):
        sim = small_sim()
        perturbed, clamped = apply_imperfections(sim, ImperfectionModel())
        self.assertIs(perturbed, sim)
        self.assertEqual(clamped, 0)

    def test_phase_jitter_is_seeded(self):
        sim = small_sim()
        model = ImperfectionModel(phase_jitter_std=0.1, seed=3)
        first, _ = apply_imperfections(sim, model)
        second, _ = apply_imperfections(sim, model)
        other, _ = apply_imperfections(sim, model.reseeded(4))
        assert_array_equal(first.phases()[0], second.phases()[0])
        self.assertFalse(np.allclose(first.phases()[0], other.phases()[0]))
        self.assertFalse(np.allclose(first.phases()[0], sim.phases()[0]))

    def test_amplitude_errors_are_clamped(self):
        profile = HardwareProfile.active((0.9, 1.1))
        sim = build_sim_stack(1, 4, 4, CARRIER, profile=profile)
        perturbed, clamped = apply_imperfections(sim, ImperfectionModel(amplitude_error_std=1.0))
        self.assertGreater(clamped, 0)
        amplitudes = perturbed.layers[0].amplitudes
        self.assertTrue(np.all((amplitudes >= 0.9) & (amplitudes <= 1.1)))

    def test_fixed_amplitude_layers_ignore_amplitude_errors(self):
        sim = small_sim(seed=1)
        with mock.patch.object(metasurface.logger, "warning") as warning:
            perturbed, clamped = apply_imperfections(
                sim, ImperfectionModel(amplitude_error_std=0.5, seed=2))
        self.assertEqual(clamped, 0)
        warning.assert_not_called()
        assert_array_equal(transfer_matrix(perturbed), transfer_matrix(sim))

    def test_deviation_grows_with_phase_jitter(self):
        sim = small_sim(seed=2, layers=3)
        nominal = transfer_matrix(sim)

        def mean_deviation(std):
            deviations = []
            for seed in range(100):
                perturbed, _ = apply_imperfections(sim, ImperfectionModel(phase_jitter_std=std,
                                                                          seed=seed))
                deviations.append(np.linalg.norm(transfer_matrix(perturbed) - nominal))
            return float(np.mean(deviations))

        small, large = mean_deviation(0.01), mean_deviation(0.02)
        self.assertGreater(small, 0.0)
        self.assertGreater(large, 1.5 * small)
        self.assertLess(large, 2.5 * small)

    def test_position_errors_rebuild_operators(self):
        sim = small_sim()
        perturbed, _ = apply_imperfections(sim, ImperfectionModel(position_error_std_m=1e-4))
        self.assertFalse(np.allclose(transfer_matrix(perturbed), transfer_matrix(sim)))
        assert_array_equal(perturbed.feed_grid.element_positions, sim.feed_grid.element_positions)

    def test_rejects_negative_std(self):
        with self.assertRaises(ValidationError):
            ImperfectionModel(phase_jitter_std=-0.1)


class TestSerialization(unittest.TestCase):

    def test_round_trip_preserves_transfer(self):
        for profile in (HardwareProfile.passive(3), HardwareProfile.active((0.0, 4.0), coupled=True,
                                                                           saturation_level=2.0)):
            sim = small_sim(seed=7, profile=profile)
            restored = sim_from_toml(sim_to_toml(sim))
            self.assertEqual(restored.num_layers, sim.num_layers)
            self.assertEqual(restored.layers[0].profile.kind, profile.kind)
            assert_allclose(transfer_matrix(restored), transfer_matrix(sim), rtol=1e-12, atol=1e-15)

    def test_unknown_schema(self):
        text = sim_to_toml(small_sim()).replace("schema_version = 1", "schema_version = 99")
        with self.assertRaises(ValidationError):
            sim_from_toml(text)


if __name__ == "__main__":
    unittest.main()
