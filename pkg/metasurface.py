"""
Stacked intelligent metasurface (SIM) model.

This module provides:
- HardwareProfile / CouplingCurve: HT-I/II/III constraints
- MetasurfaceLayer: Grid plus per-meta-atom transmission coefficients
- SimStack: Ordered layers with feed, inter-layer and receiver operators
- transfer_matrix / cascade_transfer: End-to-end linear response
- cascade_forward / cascade_phase_gradient: Forward pass and adjoint phase gradient
- propagate_field: Field propagation including the optional HT-III amplifier map
- quantize_phases / project_to_profile: Hardware projections
- ImperfectionModel / apply_imperfections: Phase, amplitude and position errors
- sim_to_toml / sim_from_toml: Versioned text serialization

All values are immutable; "mutating" operations return new objects.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import toml

from config import (
    HT1_FIXED, HT2_PASSIVE, HT3_ACTIVE, HARDWARE_KINDS, TWO_PI,
    DEFAULT_HT3_AMPLITUDE_RANGE, DEFAULT_COUPLING_POINTS, DEFAULT_LAYER_SPACING_M,
    DEFAULT_FEED_DISTANCE_WAVELENGTHS, SIM_SCHEMA_VERSION,
)
from errors import ValidationError, StructuralError
from grid import CarrierSpec, make_planar_grid, default_pitch
from propagation import build_interlayer_operator
from utils import wrap_phase, make_rng, STREAM_IMPERFECTION, STREAM_INIT

logger = logging.getLogger(__name__)

UNIT_AMPLITUDE_TOL = 1e-12


# =============================================================================
# HARDWARE PROFILES
# =============================================================================

@dataclass(frozen=True, eq=False)
class CouplingCurve:
    """
    Tabulated HT-III control map v -> (amplitude(v), phase(v)).

    Phases must be non-decreasing in v so the map can be inverted; values
    between samples are linearly interpolated.
    """

    voltages: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        for name in ("voltages", "amplitudes", "phases"):
            values = np.array(getattr(self, name), dtype=float)
            values.setflags(write=False)
            object.__setattr__(self, name, values)
        if not (self.voltages.shape == self.amplitudes.shape == self.phases.shape):
            raise ValidationError("voltages, amplitudes and phases must have equal length",
                                  "coupling_curve")
        if self.voltages.size < 2 or np.any(np.diff(self.voltages) <= 0):
            raise ValidationError("voltages must be strictly increasing", "coupling_curve")
        if np.any(np.diff(self.phases) < 0):
            raise ValidationError("phases must be non-decreasing in voltage", "coupling_curve")

    def at(self, voltage):
        """
        Amplitude and phase for control voltage(s).

        @param voltage: Scalar or array of control values
        @return: (amplitude, phase)
        """
        return (np.interp(voltage, self.voltages, self.amplitudes),
                np.interp(voltage, self.voltages, self.phases))

    def amplitude_for_phase(self, phase):
        """Amplitude the amplifier produces when tuned to the given phase(s)."""
        voltage = np.interp(wrap_phase(phase), self.phases, self.voltages)
        return np.interp(voltage, self.voltages, self.amplitudes)


def default_coupling_curve(amplitude_range=DEFAULT_HT3_AMPLITUDE_RANGE,
                           points=DEFAULT_COUPLING_POINTS):
    """
    Smooth monotone HT-III coupling over control v in [0, 1].

    phase(v) = 2 pi v, amplitude(v) = a_min + (a_max - a_min) (1 - cos(pi v)) / 2.
    """
    a_min, a_max = amplitude_range
    voltages = np.linspace(0.0, 1.0, points)
    amplitudes = a_min + (a_max - a_min) * (1.0 - np.cos(math.pi * voltages)) / 2.0
    return CouplingCurve(voltages, amplitudes, TWO_PI * voltages)


@dataclass(frozen=True, eq=False)
class HardwareProfile:
    """
    Hardware-type constraints of a metasurface layer.

    Attributes:
        kind: HT1_fixed, HT2_passive_programmable or HT3_active
        phase_bits: HT-II phase resolution (None = continuous)
        amplitude_range: HT-III (min, max) amplitude
        coupling_curve: HT-III amplitude/phase coupling (None = independent)
        saturation_level: HT-III amplifier saturation (None = linear)
    """

    kind: str = HT2_PASSIVE
    phase_bits: int = None
    amplitude_range: tuple = None
    coupling_curve: CouplingCurve = None
    saturation_level: float = None

    def __post_init__(self):
        if self.kind not in HARDWARE_KINDS:
            raise ValidationError(f"unknown kind {self.kind!r}", "profile.kind")
        if self.phase_bits is not None:
            if self.kind != HT2_PASSIVE:
                raise ValidationError("phase_bits only applies to HT-II", "profile.phase_bits")
            if int(self.phase_bits) < 1:
                raise ValidationError("must be >= 1", "profile.phase_bits")
        if self.kind != HT3_ACTIVE and (self.amplitude_range is not None
                                        or self.coupling_curve is not None
                                        or self.saturation_level is not None):
            raise ValidationError("amplitude control only applies to HT-III", "profile.kind")
        if self.amplitude_range is not None:
            low, high = (float(v) for v in self.amplitude_range)
            if not 0.0 <= low <= high:
                raise ValidationError(f"need 0 <= min <= max, got {self.amplitude_range}",
                                      "profile.amplitude_range")
            object.__setattr__(self, "amplitude_range", (low, high))
        if self.saturation_level is not None and not self.saturation_level > 0:
            raise ValidationError("must be positive", "profile.saturation_level")

    @classmethod
    def fixed(cls):
        return cls(HT1_FIXED)

    @classmethod
    def passive(cls, phase_bits=None):
        return cls(HT2_PASSIVE, phase_bits=phase_bits)

    @classmethod
    def active(cls, amplitude_range=DEFAULT_HT3_AMPLITUDE_RANGE, coupled=False,
               saturation_level=None):
        curve = default_coupling_curve(amplitude_range) if coupled else None
        return cls(HT3_ACTIVE, amplitude_range=tuple(amplitude_range), coupling_curve=curve,
                   saturation_level=saturation_level)

    @property
    def unit_modulus(self):
        """HT-I and HT-II atoms are lossless phase shifters."""
        return self.kind != HT3_ACTIVE

    def amplitude_limits(self):
        """(min, max) amplitude allowed by the profile."""
        if self.unit_modulus:
            return 1.0, 1.0
        if self.amplitude_range is None:
            return 0.0, math.inf
        return self.amplitude_range


# =============================================================================
# LAYERS
# =============================================================================

def _readonly(values):
    values = np.array(values, dtype=float)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class MetasurfaceLayer:
    """
    One metasurface layer: diagonal transmission matrix on a grid.

    Phases are stored wrapped into [0, 2 pi). Amplitude constraints of the
    profile are enforced here; phase quantization and HT-III coupling are
    enforced by project_to_profile.

    Attributes:
        grid: PlanarGrid of meta-atoms
        phases: Real vector in [0, 2 pi)
        amplitudes: Non-negative real vector
        profile: HardwareProfile
    """

    grid: object
    phases: np.ndarray
    amplitudes: np.ndarray = None
    profile: HardwareProfile = field(default_factory=HardwareProfile)

    def __post_init__(self):
        phases = np.asarray(self.phases, dtype=float).ravel()
        if phases.size != self.grid.size:
            raise ValidationError(f"expected {self.grid.size} phases, got {phases.size}", "phases")
        if not np.all(np.isfinite(phases)):
            raise ValidationError("phases must be finite", "phases")
        object.__setattr__(self, "phases", _readonly(wrap_phase(phases)))

        amplitudes = np.ones(self.grid.size) if self.amplitudes is None else \
            np.asarray(self.amplitudes, dtype=float).ravel()
        if amplitudes.size != self.grid.size:
            raise ValidationError(
                f"expected {self.grid.size} amplitudes, got {amplitudes.size}", "amplitudes")
        low, high = self.profile.amplitude_limits()
        if self.profile.unit_modulus:
            if np.any(np.abs(amplitudes - 1.0) > UNIT_AMPLITUDE_TOL):
                raise ValidationError(f"{self.profile.kind} requires unit amplitude", "amplitudes")
        elif np.any(amplitudes < low) or np.any(amplitudes > high):
            raise ValidationError(f"amplitudes must lie in [{low}, {high}]", "amplitudes")
        object.__setattr__(self, "amplitudes", _readonly(amplitudes))

    @classmethod
    def from_voltages(cls, grid, voltages, profile):
        """
        HT-III layer driven through its coupling curve.

        @param grid: PlanarGrid
        @param voltages: Control value per atom
        @param profile: HT-III HardwareProfile with a coupling curve
        @return: MetasurfaceLayer
        """
        if profile.coupling_curve is None:
            raise ValidationError("profile has no coupling curve", "profile.coupling_curve")
        amplitudes, phases = profile.coupling_curve.at(np.asarray(voltages, dtype=float))
        return cls(grid, phases, amplitudes, profile)

    @property
    def size(self):
        return self.grid.size

    @property
    def coefficients(self):
        """Complex transmission coefficients amplitudes * exp(j phases)."""
        return self.amplitudes * np.exp(1j * self.phases)

    def with_phases(self, phases):
        """Copy with new phases, amplitudes unchanged."""
        return replace(self, phases=phases)

    def with_grid(self, grid):
        """Copy placed on another (e.g. displaced) grid."""
        return replace(self, grid=grid)


def quantize_phases(layer, bits):
    """
    Snap every phase to the nearest of 2**bits uniform levels on the circle.

    Ties (exactly half-way) go to the lower level. The result is an HT-II
    layer with unit amplitudes.

    @param layer: MetasurfaceLayer
    @param bits: Phase resolution in bits (>= 1)
    @return: New MetasurfaceLayer
    """
    bits = int(bits)
    if bits < 1:
        raise ValidationError(f"must be >= 1, got {bits}", "bits")
    levels = 2 ** bits
    step = TWO_PI / levels
    position = layer.phases / step
    lower = np.floor(position)
    index = np.where(position - lower > 0.5, lower + 1, lower).astype(np.int64) % levels
    return MetasurfaceLayer(layer.grid, index * step, None, HardwareProfile.passive(bits))


def project_to_profile(layer):
    """
    Project a layer onto its hardware profile.

    HT-II with phase_bits -> quantize_phases; coupled HT-III -> amplitudes
    re-derived from the coupling curve; anything else is returned unchanged.
    """
    profile = layer.profile
    if profile.kind == HT2_PASSIVE and profile.phase_bits is not None:
        return quantize_phases(layer, profile.phase_bits)
    if profile.kind == HT3_ACTIVE and profile.coupling_curve is not None:
        amplitudes = profile.coupling_curve.amplitude_for_phase(layer.phases)
        low, high = profile.amplitude_limits()
        return replace(layer, amplitudes=np.clip(amplitudes, low, high))
    return layer


# =============================================================================
# STACK
# =============================================================================

@dataclass(frozen=True, eq=False)
class SimStack:
    """
    Stacked intelligent metasurface.

    transfer = W_out Phi_L W_L ... W_2 Phi_1 W_in, where W_in is the feed
    operator (identity when input_operator is None) and W_out the optional
    operator from the last layer to a receiving array.

    Attributes:
        layers: Tuple of MetasurfaceLayer (>= 1)
        layer_spacing_m: Nominal spacing between adjacent layers
        carrier: CarrierSpec
        input_operator: DiffractionOperator feeds -> layer 1, or None
        interlayer_operators: Tuple of DiffractionOperator, layer l -> l+1
        output_operator: DiffractionOperator last layer -> receivers, or None
    """

    layers: tuple
    layer_spacing_m: float
    carrier: CarrierSpec
    input_operator: object = None
    interlayer_operators: tuple = ()
    output_operator: object = None

    def __post_init__(self):
        layers = tuple(self.layers)
        operators = tuple(self.interlayer_operators)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "interlayer_operators", operators)
        if not layers:
            raise StructuralError("a SIM needs at least one layer")
        if len(operators) != len(layers) - 1:
            raise StructuralError(
                f"{len(layers)} layers need {len(layers) - 1} inter-layer operators, "
                f"got {len(operators)}")
        for index, operator in enumerate(operators):
            if operator.shape != (layers[index + 1].size, layers[index].size):
                raise StructuralError(f"inter-layer operator {index} has shape {operator.shape}")
        if self.input_operator is not None and self.input_operator.shape[0] != layers[0].size:
            raise StructuralError("input operator does not reach the first layer")
        if self.output_operator is not None and self.output_operator.shape[1] != layers[-1].size:
            raise StructuralError("output operator does not leave the last layer")

    @property
    def num_layers(self):
        return len(self.layers)

    @property
    def num_feeds(self):
        """Number of inputs (feed antennas, or layer-1 atoms in identity mode)."""
        if self.input_operator is None:
            return self.layers[0].size
        return self.input_operator.shape[1]

    @property
    def num_outputs(self):
        """Number of outputs (receivers, or last-layer atoms)."""
        if self.output_operator is None:
            return self.layers[-1].size
        return self.output_operator.shape[0]

    @property
    def feed_grid(self):
        return None if self.input_operator is None else self.input_operator.source_grid

    @property
    def receiver_grid(self):
        return None if self.output_operator is None else self.output_operator.target_grid

    @property
    def output_grid(self):
        """Grid the stack's output lives on (receivers or last layer)."""
        return self.receiver_grid or self.layers[-1].grid

    def phases(self):
        """Per-layer phase vectors."""
        return [layer.phases for layer in self.layers]

    def with_phases(self, phases):
        """Copy with per-layer phases replaced (operators reused)."""
        if len(phases) != self.num_layers:
            raise StructuralError(f"expected {self.num_layers} phase vectors, got {len(phases)}")
        layers = tuple(layer.with_phases(p) for layer, p in zip(self.layers, phases))
        return replace(self, layers=layers)

    def with_layers(self, layers):
        """Copy with layers replaced (same grids, operators reused)."""
        return replace(self, layers=tuple(layers))


def assemble_sim_stack(layers, carrier, feed_grid=None, receiver_grid=None,
                       layer_spacing_m=None):
    """
    Build all diffraction operators for a list of layers.

    @param layers: Sequence of MetasurfaceLayer in propagation order
    @param carrier: CarrierSpec
    @param feed_grid: PlanarGrid of feed antennas (None = identity excitation)
    @param receiver_grid: PlanarGrid of receiving antennas (None = no readout operator)
    @param layer_spacing_m: Nominal spacing; derived from the first two layers if omitted
    @return: SimStack
    """
    layers = tuple(layers)
    operators = tuple(build_interlayer_operator(a.grid, b.grid, carrier)
                      for a, b in zip(layers[:-1], layers[1:]))
    if layer_spacing_m is None:
        layer_spacing_m = operators[0].spacing_m if operators else DEFAULT_LAYER_SPACING_M
    input_operator = None if feed_grid is None else \
        build_interlayer_operator(feed_grid, layers[0].grid, carrier)
    output_operator = None if receiver_grid is None else \
        build_interlayer_operator(layers[-1].grid, receiver_grid, carrier)
    return SimStack(layers, float(layer_spacing_m), carrier, input_operator, operators,
                    output_operator)


def build_sim_stack(num_layers, rows, cols, carrier, layer_spacing_m=DEFAULT_LAYER_SPACING_M,
                    pitch_m=None, profile=None, phases=None, seed=None,
                    feed_shape=None, feed_distance_m=None, feed_pitch_m=None,
                    receiver_shape=None, receiver_distance_m=None, receiver_pitch_m=None):
    """
    Build a SIM with identical square-lattice layers along +z.

    Layer l sits at z = l * layer_spacing_m. Feeds (if any) sit at
    z = -feed_distance_m, receivers (if any) at the last layer + receiver_distance_m.

    @param num_layers: Number of layers (>= 1)
    @param rows: Meta-atom rows per layer
    @param cols: Meta-atom columns per layer
    @param carrier: CarrierSpec
    @param layer_spacing_m: Spacing between layers
    @param pitch_m: Meta-atom pitch (default lambda/2)
    @param profile: HardwareProfile for every layer (default HT-II continuous)
    @param phases: Per-layer phase vectors; zeros if omitted and seed is None
    @param seed: If given (and phases omitted), phases are i.i.d. uniform
    @param feed_shape: (rows, cols) of feed antennas, or None for identity excitation
    @param feed_distance_m: Feed plane distance before layer 1 (default 2 lambda)
    @param feed_pitch_m: Feed pitch (default lambda/2)
    @param receiver_shape: (rows, cols) of receiving antennas, or None
    @param receiver_distance_m: Receiver plane distance after the last layer
    @param receiver_pitch_m: Receiver pitch (default lambda/2)
    @return: SimStack
    """
    if int(num_layers) < 1:
        raise ValidationError(f"must be >= 1, got {num_layers}", "num_layers")
    if not layer_spacing_m > 0:
        raise ValidationError(f"must be positive, got {layer_spacing_m}", "layer_spacing_m")
    profile = profile or HardwareProfile.passive()
    pitch_m = pitch_m or default_pitch(carrier)
    lam = carrier.wavelength_m

    grids = [make_planar_grid(rows, cols, pitch_m, (0.0, 0.0, index * layer_spacing_m))
             for index in range(int(num_layers))]
    if phases is None:
        if seed is None:
            phases = [np.zeros(g.size) for g in grids]
        else:
            rng = make_rng(seed, STREAM_INIT)
            phases = [rng.uniform(0.0, TWO_PI, g.size) for g in grids]
    if len(phases) != len(grids):
        raise StructuralError(f"expected {len(grids)} phase vectors, got {len(phases)}")

    if profile.kind == HT3_ACTIVE and profile.coupling_curve is not None:
        layers = [project_to_profile(MetasurfaceLayer(g, p, np.full(g.size, profile.amplitude_limits()[0]),
                                                      profile))
                  for g, p in zip(grids, phases)]
    elif profile.unit_modulus:
        layers = [MetasurfaceLayer(g, p, None, profile) for g, p in zip(grids, phases)]
    else:
        low, high = profile.amplitude_limits()
        amplitude = 1.0 if low <= 1.0 <= high else low
        layers = [MetasurfaceLayer(g, p, np.full(g.size, amplitude), profile)
                  for g, p in zip(grids, phases)]

    feed_grid = None
    if feed_shape is not None:
        distance = feed_distance_m or DEFAULT_FEED_DISTANCE_WAVELENGTHS * lam
        feed_grid = make_planar_grid(feed_shape[0], feed_shape[1], feed_pitch_m or lam / 2.0,
                                     (0.0, 0.0, -distance))
    receiver_grid = None
    if receiver_shape is not None:
        distance = receiver_distance_m or layer_spacing_m
        z_last = (int(num_layers) - 1) * layer_spacing_m
        receiver_grid = make_planar_grid(receiver_shape[0], receiver_shape[1],
                                         receiver_pitch_m or lam / 2.0,
                                         (0.0, 0.0, z_last + distance))
    return assemble_sim_stack(layers, carrier, feed_grid, receiver_grid, layer_spacing_m)


# =============================================================================
# CASCADE
# =============================================================================

def _leading_operator(sim, index):
    """Operator feeding layer `index` (None means identity)."""
    if index == 0:
        return None if sim.input_operator is None else sim.input_operator.matrix
    return sim.interlayer_operators[index - 1].matrix


def cascade_transfer(sim, start, stop):
    """
    Transfer of layers [start, stop): Phi_{stop-1} W_{stop-1} ... Phi_start W_start.

    W_0 is the feed operator (identity in identity-excitation mode); the
    receiver operator is not included.

    @param sim: SimStack
    @param start: First layer index
    @param stop: One past the last layer index
    @return: Complex matrix
    """
    if not 0 <= start < stop <= sim.num_layers:
        raise StructuralError(f"invalid layer range [{start}, {stop})")
    leading = _leading_operator(sim, start)
    if leading is None:
        current = np.diag(sim.layers[start].coefficients)
    else:
        current = sim.layers[start].coefficients[:, None] * leading
    for index in range(start + 1, stop):
        current = sim.layers[index].coefficients[:, None] * (_leading_operator(sim, index) @ current)
    return current


def transfer_matrix(sim):
    """
    End-to-end transfer W_out Phi_L W_L ... Phi_1 W_in.

    @param sim: SimStack
    @return: Complex matrix (outputs x feeds)
    """
    transfer = cascade_transfer(sim, 0, sim.num_layers)
    if sim.output_operator is not None:
        transfer = sim.output_operator.matrix @ transfer
    return transfer


def cascade_forward(sim, inputs=None):
    """
    Run the linear cascade and keep the field entering every layer.

    @param sim: SimStack
    @param inputs: Feed-side inputs (feeds x S); None means the identity,
                   so the output is the transfer matrix
    @return: (layer_inputs, output) where layer_inputs[l] is the field
             arriving at layer l (atoms x S) and output is (outputs x S)
    """
    if inputs is not None:
        inputs = np.asarray(inputs)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        if inputs.shape[0] != sim.num_feeds:
            raise StructuralError(f"expected {sim.num_feeds} feed rows, got {inputs.shape[0]}")

    leading = _leading_operator(sim, 0)
    if inputs is None:
        current = np.eye(sim.num_feeds, dtype=complex) if leading is None else leading
    else:
        current = inputs.astype(complex) if leading is None else leading @ inputs

    layer_inputs = []
    for index, layer in enumerate(sim.layers):
        if index > 0:
            current = _leading_operator(sim, index) @ current
        layer_inputs.append(current)
        current = layer.coefficients[:, None] * current
    if sim.output_operator is not None:
        current = sim.output_operator.matrix @ current
    return layer_inputs, current


def cascade_phase_gradient(sim, layer_inputs, output_gradient):
    """
    Gradient of a real loss with respect to every layer's phases.

    The loss L depends on the cascade output Y through
    dL = Re tr(G^H dY); G is output_gradient. Amplitudes are held fixed.

    @param sim: SimStack
    @param layer_inputs: From cascade_forward
    @param output_gradient: Complex array shaped like the cascade output
    @return: List of real arrays, one per layer
    """
    adjoint = np.asarray(output_gradient, dtype=complex)
    if adjoint.ndim == 1:
        adjoint = adjoint[:, None]
    if sim.output_operator is not None:
        adjoint = sim.output_operator.matrix.conj().T @ adjoint

    gradients = [None] * sim.num_layers
    for index in range(sim.num_layers - 1, -1, -1):
        coefficients = sim.layers[index].coefficients
        overlap = np.sum(adjoint.conj() * layer_inputs[index], axis=1)
        gradients[index] = -np.imag(coefficients * overlap)
        if index > 0:
            adjoint = _leading_operator(sim, index).conj().T @ (coefficients.conj()[:, None] * adjoint)
    return gradients


def _saturate(field_values, level):
    magnitude = np.abs(field_values)
    scale = np.ones_like(magnitude)
    nonzero = magnitude > 0
    scale[nonzero] = level * np.tanh(magnitude[nonzero] / level) / magnitude[nonzero]
    return field_values * scale


def propagate_field(sim, feed_field):
    """
    Propagate a feed excitation through the stack.

    HT-III layers with a saturation_level apply the amplifier map
    a_sat * tanh(|x| / a_sat) * x / |x| after their transmission; otherwise
    the result equals transfer_matrix(sim) @ feed_field.

    @param sim: SimStack
    @param feed_field: Complex vector (feeds,)
    @return: Complex vector (outputs,)
    """
    feed_field = np.asarray(feed_field, dtype=complex)
    if feed_field.shape != (sim.num_feeds,):
        raise StructuralError(f"expected {sim.num_feeds} feed values, got {feed_field.shape}")
    current = feed_field
    for index, layer in enumerate(sim.layers):
        leading = _leading_operator(sim, index)
        if leading is not None:
            current = leading @ current
        current = layer.coefficients * current
        if layer.profile.saturation_level is not None:
            current = _saturate(current, layer.profile.saturation_level)
    if sim.output_operator is not None:
        current = sim.output_operator.matrix @ current
    return current


# =============================================================================
# IMPERFECTIONS
# =============================================================================

@dataclass(frozen=True)
class ImperfectionModel:
    """
    Random hardware errors applied to a SIM.

    Attributes:
        phase_jitter_std: Gaussian phase error std (radians)
        amplitude_error_std: Relative amplitude error std
        position_error_std_m: Per-axis Gaussian displacement std of each meta-atom
        seed: Non-negative integer seed
    """

    phase_jitter_std: float = 0.0
    amplitude_error_std: float = 0.0
    position_error_std_m: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("phase_jitter_std", "amplitude_error_std", "position_error_std_m"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"must be finite and >= 0, got {value}", name)

    @property
    def is_identity(self):
        return (self.phase_jitter_std == 0 and self.amplitude_error_std == 0
                and self.position_error_std_m == 0)

    def reseeded(self, seed):
        """Same error levels with another seed."""
        return replace(self, seed=int(seed))


def apply_imperfections(sim, model):
    """
    Perturbed copy of a SIM; the input is left untouched.

    Phases get wrapped Gaussian jitter, amplitudes are multiplied by
    (1 + Gaussian) and clamped to the profile limits, and element positions get
    Gaussian displacements (operators are rebuilt only when positions move).
    Layers with a fixed amplitude (HT-I/II) receive no amplitude error, so
    they never contribute to the clamp count.

    @param sim: SimStack
    @param model: ImperfectionModel
    @return: (perturbed SimStack, number of clamped amplitudes)
    """
    if model.is_identity:
        return sim, 0

    rng = make_rng(model.seed, STREAM_IMPERFECTION)
    clamped = 0
    layers = []
    for layer in sim.layers:
        phases = layer.phases
        if model.phase_jitter_std > 0:
            phases = phases + rng.normal(0.0, model.phase_jitter_std, layer.size)
        amplitudes = layer.amplitudes
        low, high = layer.profile.amplitude_limits()
        # fixed-amplitude atoms (HT-I/II) have no amplitude to perturb
        if model.amplitude_error_std > 0 and high > low:
            amplitudes = amplitudes * (1.0 + rng.normal(0.0, model.amplitude_error_std, layer.size))
            outside = (amplitudes < low) | (amplitudes > high)
            clamped += int(np.count_nonzero(outside))
            amplitudes = np.clip(amplitudes, low, high)
        grid = layer.grid
        if model.position_error_std_m > 0:
            grid = grid.with_positions(
                grid.element_positions + rng.normal(0.0, model.position_error_std_m, (grid.size, 3)))
        layers.append(MetasurfaceLayer(grid, phases, amplitudes, layer.profile))

    if clamped:
        logger.warning("apply_imperfections clamped %d amplitudes to the profile range", clamped)

    if model.position_error_std_m > 0:
        perturbed = assemble_sim_stack(layers, sim.carrier, sim.feed_grid, sim.receiver_grid,
                                       sim.layer_spacing_m)
    else:
        perturbed = sim.with_layers(layers)
    return perturbed, clamped


# =============================================================================
# SERIALIZATION
# =============================================================================

def _grid_record(grid):
    return {
        "rows": grid.rows,
        "cols": grid.cols,
        "pitch_m": grid.pitch_m,
        "center": [float(v) for v in grid.center],
        "normal": [float(v) for v in grid.normal],
    }


def _grid_from_record(record):
    return make_planar_grid(int(record["rows"]), int(record["cols"]), float(record["pitch_m"]),
                            record["center"], record["normal"])


def sim_to_toml(sim):
    """
    Serialize a SIM configuration to a TOML document.

    Schema (version 1): top-level schema_version, frequency_hz,
    layer_spacing_m; optional [feed] and [receiver] grid tables; one
    [[layers]] table per layer with rows, cols, pitch_m, center, normal,
    profile_kind, optional phase_bits / amplitude_min / amplitude_max /
    saturation_level / coupling_voltages / coupling_amplitudes /
    coupling_phases, and the phases and amplitudes arrays. Element
    displacements are not stored; grids are rebuilt as nominal lattices.

    @param sim: SimStack
    @return: TOML text
    """
    document = {
        "schema_version": SIM_SCHEMA_VERSION,
        "frequency_hz": sim.carrier.frequency_hz,
        "layer_spacing_m": sim.layer_spacing_m,
    }
    if sim.feed_grid is not None:
        document["feed"] = _grid_record(sim.feed_grid)
    if sim.receiver_grid is not None:
        document["receiver"] = _grid_record(sim.receiver_grid)

    records = []
    for layer in sim.layers:
        record = _grid_record(layer.grid)
        profile = layer.profile
        record["profile_kind"] = profile.kind
        if profile.phase_bits is not None:
            record["phase_bits"] = int(profile.phase_bits)
        if profile.amplitude_range is not None:
            record["amplitude_min"], record["amplitude_max"] = profile.amplitude_range
        if profile.saturation_level is not None:
            record["saturation_level"] = float(profile.saturation_level)
        if profile.coupling_curve is not None:
            record["coupling_voltages"] = profile.coupling_curve.voltages.tolist()
            record["coupling_amplitudes"] = profile.coupling_curve.amplitudes.tolist()
            record["coupling_phases"] = profile.coupling_curve.phases.tolist()
        record["phases"] = layer.phases.tolist()
        record["amplitudes"] = layer.amplitudes.tolist()
        records.append(record)
    document["layers"] = records
    return toml.dumps(document)


def sim_from_toml(text):
    """
    Rebuild a SimStack from sim_to_toml output.

    @param text: TOML document
    @return: SimStack
    """
    document = toml.loads(text)
    version = document.get("schema_version")
    if version != SIM_SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema version {version!r}", "schema_version")
    carrier = CarrierSpec(document["frequency_hz"])

    layers = []
    for record in document["layers"]:
        curve = None
        if "coupling_voltages" in record:
            curve = CouplingCurve(record["coupling_voltages"], record["coupling_amplitudes"],
                                  record["coupling_phases"])
        amplitude_range = None
        if "amplitude_min" in record:
            amplitude_range = (record["amplitude_min"], record["amplitude_max"])
        profile = HardwareProfile(record["profile_kind"], record.get("phase_bits"),
                                  amplitude_range, curve, record.get("saturation_level"))
        layers.append(MetasurfaceLayer(_grid_from_record(record), record["phases"],
                                       record["amplitudes"], profile))

    feed_grid = _grid_from_record(document["feed"]) if "feed" in document else None
    receiver_grid = _grid_from_record(document["receiver"]) if "receiver" in document else None
    return assemble_sim_stack(layers, carrier, feed_grid, receiver_grid,
                              float(document["layer_spacing_m"]))
