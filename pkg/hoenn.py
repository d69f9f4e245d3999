"""
Hybrid optical-electronic neural network (HOENN) for DOA classification.

This module provides:
- HoennModel: Receiver-side SIM (the ONN), energy detector and one dense layer (the ENN)
- hoenn_forward / angular_spectrum: Class posteriors for incident fields
- hoenn_loss_and_grad: Cross-entropy with gradients for ENN weights and ONN phases
- TrainConfig / train_hoenn: Seeded mini-batch training, optionally with perturbed ONNs
- evaluate_accuracy: Accuracy versus SNR with binomial standard errors
- OnnOnlyClassifier / fit_onn_only: Strongest-antenna baseline
- random_sim_enn_classifier: Frozen random SIM + trained ENN baseline
- fit_dft_spectrum: SIM fitted to a 2-D DFT, with its angular-spectrum generator
- save_checkpoint / load_checkpoint: Versioned model archives

Pipeline for a batch of aperture fields X (samples x N):
    r = T x                 (T = ONN transfer to the receiving array)
    d = |r|^2 or |r|        (detector)
    d_hat = R d / sum(d)    (automatic gain control, R receive antennas)
    p = softmax(W d_hat + b)
"""

import io
import json
import logging
import math
import os
from dataclasses import dataclass, replace, asdict

import numpy as np
from scipy import linalg
from scipy.special import softmax, log_softmax

from algorithms import OptimizerConfig, get_algorithm, ALGORITHMS
from beamforming import fit_phases
from config import (
    DETECTOR_POWER, DETECTORS, NOISE_AT_APERTURE, NOISE_POINTS,
    DEFAULT_LEARNING_RATE, DEFAULT_EPOCHS, DEFAULT_BATCH_SIZE, DEFAULT_TRAIN_SNR_DB,
    DEFAULT_LAYER_ROWS, DEFAULT_LAYER_COLS, DOA_SIM_LAYERS, DOA_RECEIVER_ROWS, DOA_RECEIVER_COLS,
    DOA_LAYER_SPACING_WAVELENGTHS, DEFAULT_DFT_DIMS, DEFAULT_DFT_LAYERS, DEFAULT_DFT_LAYER_SIDE,
    MIN_STABLE_TRIALS, AGC_EPSILON, CHECKPOINT_SCHEMA_VERSION, ARTIFACT_VERSION, TWO_PI,
)
from dataset import sample_doa_fields
from errors import (
    ValidationError, StructuralError, ConfigurationError, TrainingError,
)
from grid import steering_matrix
from metasurface import (
    ImperfectionModel, build_sim_stack, cascade_forward, cascade_phase_gradient, transfer_matrix,
    apply_imperfections, sim_to_toml, sim_from_toml,
)
from utils import (
    make_rng, derive_seed, complex_gaussian, db_to_linear, atomic_write_bytes,
    STREAM_TRAINING, STREAM_IMPERFECTION, STREAM_EVALUATION, STREAM_NOISE, STREAM_INIT,
)

logger = logging.getLogger(__name__)

LOSS_CHUNK = 1024


# =============================================================================
# MODEL
# =============================================================================

@dataclass(frozen=True, eq=False)
class HoennModel:
    """
    ONN + detector + single dense ENN layer.

    With agc enabled (the default) the logits are W d_hat + b with
    d_hat = R d / sum(d), the R detector outputs rescaled to unit mean per
    sample. With agc disabled they are exactly W d + b.

    Attributes:
        onn: Receiver-side SimStack (identity excitation, output operator to the array)
        enn_weights: Real matrix (classes x receive antennas)
        enn_bias: Real vector (classes,)
        detector: 'magnitude' or 'magnitude_squared'
        agc: Normalize detector outputs to unit mean per sample
    """

    onn: object
    enn_weights: np.ndarray
    enn_bias: np.ndarray
    detector: str = DETECTOR_POWER
    agc: bool = True

    def __post_init__(self):
        weights = np.array(self.enn_weights, dtype=float)
        bias = np.array(self.enn_bias, dtype=float).ravel()
        object.__setattr__(self, "enn_weights", weights)
        object.__setattr__(self, "enn_bias", bias)
        if self.detector not in DETECTORS:
            raise ValidationError(f"unknown detector {self.detector!r}", "detector")
        if weights.ndim != 2 or weights.shape[1] != self.onn.num_outputs:
            raise StructuralError(
                f"ENN weights must be classes x {self.onn.num_outputs}, got {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise StructuralError(f"ENN bias must have {weights.shape[0]} entries, got {bias.shape}")

    @property
    def num_classes(self):
        return self.enn_weights.shape[0]

    @property
    def aperture(self):
        """Grid of the ONN input layer."""
        return self.onn.layers[0].grid

    @property
    def carrier(self):
        return self.onn.carrier

    def with_parameters(self, weights, bias, phases=None):
        """Copy with new ENN parameters and, optionally, new ONN phases."""
        onn = self.onn if phases is None else self.onn.with_phases(phases)
        return replace(self, onn=onn, enn_weights=weights, enn_bias=bias)

    def predict(self, dataset):
        """
        Most likely region for every sample.

        @param dataset: DoaDataset (receiver noise applied if it carries receiver_snr_db)
        @return: Int array of region indices
        """
        received = _add_receiver_noise(dataset.fields @ transfer_matrix(self.onn).T, dataset)
        _, _, logits = _readout(self, received)
        return np.argmax(logits, axis=1)


def build_doa_onn(carrier, num_layers=DOA_SIM_LAYERS, rows=DEFAULT_LAYER_ROWS,
                  cols=DEFAULT_LAYER_COLS, receiver_shape=(DOA_RECEIVER_ROWS, DOA_RECEIVER_COLS),
                  layer_spacing_m=None, profile=None, seed=None):
    """
    Receiver-side SIM: identity excitation at layer 1, output operator to the array.

    Layers and the receiving array are spaced 2 lambda apart by default.

    @param carrier: CarrierSpec
    @param num_layers: Metasurface layers
    @param rows: Atom rows per layer
    @param cols: Atom columns per layer
    @param receiver_shape: (rows, cols) of the receiving array
    @param layer_spacing_m: Spacing (default 2 lambda)
    @param profile: HardwareProfile
    @param seed: Random initial phases if given, zeros otherwise
    @return: SimStack
    """
    spacing = layer_spacing_m or DOA_LAYER_SPACING_WAVELENGTHS * carrier.wavelength_m
    return build_sim_stack(num_layers, rows, cols, carrier, spacing, profile=profile, seed=seed,
                           receiver_shape=receiver_shape, receiver_distance_m=spacing)


def init_hoenn(onn, num_classes, detector=DETECTOR_POWER, agc=True, seed=0, scale=0.01):
    """
    Model with small Gaussian ENN weights and zero bias.

    @param onn: SimStack
    @param num_classes: Number of regions
    @param detector: Detector kind
    @param agc: Enable automatic gain control
    @param seed: Weight seed
    @param scale: Weight standard deviation
    @return: HoennModel
    """
    rng = make_rng(seed, STREAM_INIT)
    weights = rng.normal(0.0, scale, (int(num_classes), onn.num_outputs))
    return HoennModel(onn, weights, np.zeros(int(num_classes)), detector, agc)


# =============================================================================
# FORWARD AND GRADIENTS
# =============================================================================

def _detect(received, detector):
    if detector == DETECTOR_POWER:
        return np.abs(received) ** 2
    return np.abs(received)


def _readout(model, received):
    """received (samples x antennas) -> (d, d_hat, logits)."""
    detected = _detect(received, model.detector)
    if model.agc:
        total = detected.sum(axis=1, keepdims=True) + AGC_EPSILON
        normalized = detected.shape[1] * detected / total
    else:
        normalized = detected
    logits = normalized @ model.enn_weights.T + model.enn_bias
    return detected, normalized, logits


def _add_receiver_noise(received, dataset):
    if dataset.receiver_snr_db is None:
        return received
    rng = make_rng(dataset.seed, STREAM_NOISE)
    variance = float(np.mean(np.abs(received) ** 2)) / float(db_to_linear(dataset.receiver_snr_db))
    return received + complex_gaussian(rng, received.shape, variance)


def hoenn_forward(model, field):
    """
    Class posterior for one field (or a batch of fields, one per row).

    @param model: HoennModel
    @param field: Complex vector (aperture elements,) or matrix (samples x elements)
    @return: Probabilities (classes,) or (samples x classes)
    """
    field = np.asarray(field, dtype=complex)
    single = field.ndim == 1
    fields = field[None, :] if single else field
    _, output = cascade_forward(model.onn, fields.T)
    _, _, logits = _readout(model, output.T)
    probabilities = softmax(logits, axis=1)
    return probabilities[0] if single else probabilities


def angular_spectrum(model, field, grid):
    """
    Posterior of one field arranged as an (el_bins x az_bins) map.

    @param model: HoennModel
    @param field: Complex aperture field
    @param grid: AngularGrid with model.num_classes regions
    @return: Real matrix; entry (e, a) belongs to region e * az_bins + a
    """
    if grid.num_regions != model.num_classes:
        raise ConfigurationError(f"model has {model.num_classes} classes, grid {grid.num_regions} regions")
    return hoenn_forward(model, field).reshape(grid.el_bins, grid.az_bins)


def cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels under softmax(logits)."""
    log_probabilities = log_softmax(logits, axis=1)
    return float(-np.mean(log_probabilities[np.arange(labels.size), labels]))


def hoenn_loss_and_grad(model, fields, labels, train_onn=True):
    """
    Mean cross-entropy on a batch with its gradients.

    @param model: HoennModel
    @param fields: Complex matrix (samples x aperture elements)
    @param labels: Int array (samples,)
    @param train_onn: Also return per-layer ONN phase gradients
    @return: (loss, grad_weights, grad_bias, phase_grads or None)
    """
    labels = np.asarray(labels, dtype=int)
    layer_inputs, output = cascade_forward(model.onn, np.asarray(fields).T)
    received = output.T
    detected, normalized, logits = _readout(model, received)
    loss = cross_entropy(logits, labels)

    batch = labels.size
    grad_logits = softmax(logits, axis=1)
    grad_logits[np.arange(batch), labels] -= 1.0
    grad_logits /= batch
    grad_weights = grad_logits.T @ normalized
    grad_bias = grad_logits.sum(axis=0)
    if not train_onn:
        return loss, grad_weights, grad_bias, None

    grad_normalized = grad_logits @ model.enn_weights
    if model.agc:
        antennas = detected.shape[1]
        total = detected.sum(axis=1, keepdims=True) + AGC_EPSILON
        inner = np.sum(grad_normalized * normalized, axis=1, keepdims=True)
        grad_detected = (antennas / total) * (grad_normalized - inner / antennas)
    else:
        grad_detected = grad_normalized
    if model.detector == DETECTOR_POWER:
        grad_received = 2.0 * grad_detected * received
    else:
        magnitude = np.abs(received)
        safe = np.where(magnitude > 0, magnitude, 1.0)
        grad_received = np.where(magnitude > 0, grad_detected * received / safe, 0.0)

    phase_grads = cascade_phase_gradient(model.onn, layer_inputs, grad_received.T)
    return loss, grad_weights, grad_bias, phase_grads


def dataset_loss(model, dataset):
    """Mean cross-entropy over a whole dataset (fixed chunk order)."""
    total = 0.0
    for start in range(0, len(dataset), LOSS_CHUNK):
        fields = dataset.fields[start:start + LOSS_CHUNK]
        labels = dataset.labels[start:start + LOSS_CHUNK]
        _, output = cascade_forward(model.onn, fields.T)
        _, _, logits = _readout(model, output.T)
        total += cross_entropy(logits, labels) * labels.size
    return total / len(dataset)


# =============================================================================
# TRAINING
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    """
    Mini-batch training settings.

    Attributes:
        learning_rate: Step size (0 leaves the model unchanged)
        epochs: Passes over the dataset
        batch_size: Samples per mini-batch
        seed: Shuffling and augmentation seed
        train_snr_db: Aperture SNR of training data, a float or a (low, high) range
        imperfection_augmentation: ImperfectionModel applied per mini-batch, or None
        train_onn: Update ONN phases jointly with the ENN
        algorithm: Step rule key ('adam' or 'gd')
        cosine_decay: Cosine step decay over all updates
    """

    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0
    train_snr_db: object = DEFAULT_TRAIN_SNR_DB
    imperfection_augmentation: ImperfectionModel = None
    train_onn: bool = True
    algorithm: str = "adam"
    cosine_decay: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValidationError(f"must be >= 0, got {self.learning_rate}", "training.learning_rate")
        if int(self.epochs) < 1:
            raise ValidationError(f"must be >= 1, got {self.epochs}", "training.epochs")
        if int(self.batch_size) < 1:
            raise ValidationError(f"must be >= 1, got {self.batch_size}", "training.batch_size")
        if int(self.seed) < 0:
            raise ValidationError(f"must be >= 0, got {self.seed}", "training.seed")
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algorithm!r}", "training.algorithm")

    def to_dict(self):
        return asdict(self)


def train_hoenn(model, dataset, config):
    """
    Train ENN weights (and ONN phases when config.train_onn) on a dataset.

    Every epoch visits a fresh seeded permutation in mini-batches. With
    imperfection augmentation each mini-batch runs through its own perturbed
    ONN copy and the gradient updates the nominal phases.

    @param model: HoennModel
    @param dataset: DoaDataset
    @param config: TrainConfig
    @return: (trained HoennModel, loss trace of length epochs + 1; entry 0 is the
              initial full-dataset loss, entry e the loss after epoch e)
    """
    if len(dataset) == 0:
        raise ValidationError("dataset is empty", "dataset")
    if dataset.fields.shape[1] != model.onn.num_feeds:
        raise StructuralError(
            f"fields have {dataset.fields.shape[1]} entries, ONN aperture has {model.onn.num_feeds}")
    if np.any(dataset.labels >= model.num_classes):
        raise StructuralError("dataset labels exceed the model's class count")

    count = len(dataset)
    batch_size = min(int(config.batch_size), count)
    batches_per_epoch = -(-count // batch_size)
    rng = make_rng(config.seed, STREAM_TRAINING)
    augmentation = config.imperfection_augmentation

    def schedule():
        epoch = 0
        while True:
            order = rng.permutation(count)
            for batch in range(batches_per_epoch):
                yield epoch, batch, order[batch * batch_size:(batch + 1) * batch_size]
            epoch += 1

    batches = schedule()

    def unpack(params):
        phases = params[2:] if config.train_onn else None
        return model.with_parameters(params[0], params[1], phases)

    def objective(params):
        epoch, batch, indices = next(batches)
        current = unpack(params)
        if augmentation is not None:
            seed = derive_seed(config.seed, STREAM_IMPERFECTION, epoch, batch)
            perturbed, _ = apply_imperfections(current.onn, augmentation.reseeded(seed))
            current = replace(current, onn=perturbed)
        loss, grad_weights, grad_bias, phase_grads = hoenn_loss_and_grad(
            current, dataset.fields[indices], dataset.labels[indices], config.train_onn)
        if math.isnan(loss):
            raise TrainingError(f"NaN loss in epoch {epoch}, batch {batch}", epoch, batch)
        return loss, [grad_weights, grad_bias] + (phase_grads or [])

    params = [model.enn_weights, model.enn_bias]
    if config.train_onn:
        params += [np.array(p) for p in model.onn.phases()]
    optimizer = OptimizerConfig(algorithm=config.algorithm, step_size=config.learning_rate,
                                iterations=int(config.epochs) * batches_per_epoch, restarts=1,
                                cosine_decay=config.cosine_decay, tolerance=-math.inf)

    trace = []
    final = params
    for state in get_algorithm(config.algorithm)(objective, params, optimizer):
        final = state['params']
        if state['iteration'] % batches_per_epoch == 0:
            trace.append(dataset_loss(unpack(final), dataset))
            logger.debug("epoch %d: loss %.6f", state['iteration'] // batches_per_epoch, trace[-1])

    trained = unpack(final)
    logger.info("trained HOENN for %d epochs: loss %.4f -> %.4f", config.epochs, trace[0], trace[-1])
    return trained, np.asarray(trace)


# =============================================================================
# EVALUATION
# =============================================================================

def evaluate_accuracy(model, grid, snr_list_db, trials, seed, noise_point=NOISE_AT_APERTURE,
                      aperture=None, carrier=None):
    """
    Classification accuracy on fresh samples at every SNR.

    Each SNR point draws `trials` samples with labels cycling through the
    regions. Aperture noise is referenced to unit steering power per element;
    receiver noise to the mean received power per antenna.
    Fewer than MIN_STABLE_TRIALS (100) trials per point only logs a warning;
    it is not an error.

    @param model: Any classifier with predict(DoaDataset) (HoennModel, OnnOnlyClassifier, ...)
    @param grid: AngularGrid
    @param snr_list_db: SNR points in dB
    @param trials: Test samples per SNR point (>= 1)
    @param seed: Non-negative integer seed
    @param noise_point: 'aperture' or 'receiver'
    @param aperture: Input grid (default: model.aperture)
    @param carrier: CarrierSpec (default: model.carrier)
    @return: List of row dicts (snr_db, accuracy, stderr, n)
    """
    if int(trials) < 1:
        raise ValidationError(f"must be >= 1, got {trials}", "trials")
    if noise_point not in NOISE_POINTS:
        raise ValidationError(f"unknown noise point {noise_point!r}", "noise_point")
    if int(trials) < MIN_STABLE_TRIALS:
        logger.warning("only %d trials per SNR point; accuracy estimates will be noisy", trials)
    aperture = aperture or model.aperture
    carrier = carrier or model.carrier

    labels = np.arange(int(trials)) % grid.num_regions
    rows = []
    for index, snr_db in enumerate(snr_list_db):
        rng = make_rng(seed, STREAM_EVALUATION, index)
        if noise_point == NOISE_AT_APERTURE:
            dataset = sample_doa_fields(grid, aperture, carrier, labels, snr_db, rng)
        else:
            dataset = sample_doa_fields(grid, aperture, carrier, labels, None, rng)
            dataset = replace(dataset, seed=derive_seed(seed, STREAM_EVALUATION, index),
                              receiver_snr_db=float(snr_db))
        correct = np.asarray(model.predict(dataset)) == dataset.labels
        accuracy = float(correct.mean())
        rows.append({
            "snr_db": float(snr_db),
            "accuracy": accuracy,
            "stderr": math.sqrt(accuracy * (1.0 - accuracy) / labels.size),
            "n": int(labels.size),
        })
        logger.debug("SNR %.1f dB: accuracy %.4f", snr_db, accuracy)
    return rows


# =============================================================================
# BASELINES
# =============================================================================

class OnnOnlyClassifier:
    """
    Predicts the region whose antenna receives the most power.

    Antenna i is assigned to region i; ties go to the lowest index.

    Attributes:
        transfer: Complex matrix (regions x aperture elements)
        grid: AngularGrid
        aperture: Input PlanarGrid (optional)
        carrier: CarrierSpec (optional)
    """

    __slots__ = ['transfer', 'grid', 'aperture', 'carrier']

    def __init__(self, transfer, grid, aperture=None, carrier=None):
        transfer = np.asarray(transfer, dtype=complex)
        if transfer.ndim != 2 or transfer.shape[0] != grid.num_regions:
            raise ConfigurationError(
                f"receiving array has {transfer.shape[0]} antennas but the grid has "
                f"{grid.num_regions} regions")
        self.transfer = transfer
        self.grid = grid
        self.aperture = aperture
        self.carrier = carrier

    def predict(self, dataset):
        received = _add_receiver_noise(dataset.fields @ self.transfer.T, dataset)
        return np.argmax(np.abs(received) ** 2, axis=1)


def onn_only_classifier(sim, grid):
    """
    Wrap a SIM whose receiving array has one antenna per region.

    @param sim: SimStack with grid.num_regions outputs
    @param grid: AngularGrid
    @return: OnnOnlyClassifier
    """
    if sim.num_outputs != grid.num_regions:
        raise ConfigurationError(
            f"receiving array has {sim.num_outputs} antennas but the grid has "
            f"{grid.num_regions} regions")
    return OnnOnlyClassifier(transfer_matrix(sim), grid, sim.layers[0].grid, sim.carrier)


def fit_onn_only(onn, grid, config=None, seed=0):
    """
    Fit SIM phases so a plane wave from region i's center lands on antenna i.

    The target is T S = I with S the steering vectors of the region centers.

    @param onn: SimStack with grid.num_regions outputs
    @param grid: AngularGrid
    @param config: OptimizerConfig
    @param seed: Restart seed
    @return: (OnnOnlyClassifier, FitReport)
    """
    if onn.num_outputs != grid.num_regions:
        raise ConfigurationError(
            f"receiving array has {onn.num_outputs} antennas but the grid has "
            f"{grid.num_regions} regions")
    azimuths, elevations = grid.region_centers()
    inputs = steering_matrix(onn.layers[0].grid, azimuths, elevations, onn.carrier).T
    report = fit_phases(onn, np.eye(grid.num_regions), config, inputs=inputs, seed=seed,
                        label="onn-only")
    return onn_only_classifier(report.sim, grid), report


def random_sim_enn_classifier(seed, grid, config, dataset, onn, detector=DETECTOR_POWER, agc=True):
    """
    Frozen SIM with i.i.d. uniform phases; only the dense ENN is trained.

    @param seed: Seed for the SIM phases and ENN initialization
    @param grid: AngularGrid
    @param config: TrainConfig (train_onn is forced off)
    @param dataset: Training DoaDataset
    @param onn: SimStack providing the geometry
    @param detector: Detector kind
    @param agc: Automatic gain control
    @return: (trained HoennModel, loss trace)
    """
    rng = make_rng(seed, STREAM_INIT)
    phases = [rng.uniform(0.0, TWO_PI, layer.size) for layer in onn.layers]
    model = init_hoenn(onn.with_phases(phases), grid.num_regions, detector, agc, seed)
    return train_hoenn(model, dataset, replace(config, train_onn=False))


# =============================================================================
# WAVE-DOMAIN DFT
# =============================================================================

def dft_matrix_2d(rows, cols):
    """Unitary 2-D DFT on row-major (rows x cols) arrays: kron(F_rows, F_cols)."""
    return np.kron(linalg.dft(int(rows), scale="sqrtn"), linalg.dft(int(cols), scale="sqrtn"))


class SpectrumGenerator:
    """
    Maps a field at the SIM input to its DFT-domain power, i.e. an angular spectrum.

    Attributes:
        transfer: Complex matrix (rows*cols x inputs)
        dims: (rows, cols) of the spectrum
    """

    __slots__ = ['transfer', 'dims']

    def __init__(self, transfer, dims):
        transfer = np.asarray(transfer, dtype=complex)
        if transfer.shape[0] != dims[0] * dims[1]:
            raise StructuralError(f"transfer has {transfer.shape[0]} outputs, dims {dims}")
        self.transfer = transfer
        self.dims = (int(dims[0]), int(dims[1]))

    def __call__(self, field):
        """
        @param field: Complex vector (inputs,)
        @return: Real matrix of shape dims
        """
        return (np.abs(self.transfer @ np.asarray(field, dtype=complex)) ** 2).reshape(self.dims)


def build_dft_sim(carrier, dims=DEFAULT_DFT_DIMS, num_layers=DEFAULT_DFT_LAYERS,
                  side=DEFAULT_DFT_LAYER_SIDE, layer_spacing_m=None, seed=None):
    """
    SIM with a dims-shaped feed array, square layers and a dims-shaped readout array.

    @param carrier: CarrierSpec
    @param dims: (rows, cols) of the DFT
    @param num_layers: Metasurface layers
    @param side: Atoms per layer side
    @param layer_spacing_m: Spacing (default 2 lambda), also used for the readout distance
    @param seed: Random initial phases if given
    @return: SimStack
    """
    spacing = layer_spacing_m or DOA_LAYER_SPACING_WAVELENGTHS * carrier.wavelength_m
    return build_sim_stack(num_layers, side, side, carrier, spacing, seed=seed,
                           feed_shape=tuple(dims), feed_distance_m=spacing,
                           receiver_shape=tuple(dims), receiver_distance_m=spacing)


def fit_dft_spectrum(sim, array_dims, config=None, seed=0):
    """
    Fit the SIM transfer to the unitary 2-D DFT of array_dims.

    @param sim: SimStack with rows*cols feeds and rows*cols outputs
    @param array_dims: (rows, cols)
    @param config: OptimizerConfig
    @param seed: Restart seed
    @return: (FitReport with correlation set, SpectrumGenerator)
    """
    rows, cols = (int(v) for v in array_dims)
    size = rows * cols
    if sim.num_feeds != size or sim.num_outputs != size:
        raise StructuralError(
            f"SIM must map {size} inputs to {size} outputs, got {sim.num_outputs}x{sim.num_feeds}")
    report = fit_phases(sim, dft_matrix_2d(rows, cols), config, seed=seed, label="dft")
    logger.info("DFT %dx%d fit: loss %.4g, correlation %.4f", rows, cols, report.final_loss,
                report.correlation)
    return report, SpectrumGenerator(transfer_matrix(report.sim), (rows, cols))


# =============================================================================
# CHECKPOINTS
# =============================================================================

def save_checkpoint(path, model, config_hash=""):
    """
    Write a model to an .npz archive.

    Arrays: enn_weights, enn_bias, header. The header is a JSON string with
    schema_version, artifact_version, detector, agc, config_hash and the ONN
    as a SIM TOML document.

    @param path: Destination file
    @param model: HoennModel
    @param config_hash: Hash of the configuration that produced the model
    """
    header = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "artifact_version": ARTIFACT_VERSION,
        "detector": model.detector,
        "agc": bool(model.agc),
        "config_hash": config_hash,
        "onn": sim_to_toml(model.onn),
    }
    buffer = io.BytesIO()
    np.savez(buffer, header=np.array(json.dumps(header, sort_keys=True)),
             enn_weights=model.enn_weights, enn_bias=model.enn_bias)
    atomic_write_bytes(path, buffer.getvalue())
    logger.info("wrote checkpoint %s", path)


def load_checkpoint(path):
    """
    Read a model written by save_checkpoint.

    @param path: Checkpoint file
    @return: (HoennModel, header dict)
    """
    if not os.path.exists(path):
        raise ConfigurationError(f"checkpoint {path} does not exist")
    with np.load(path) as data:
        header = json.loads(str(data["header"]))
        weights = np.array(data["enn_weights"])
        bias = np.array(data["enn_bias"])
    if header.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported checkpoint schema {header.get('schema_version')!r}")
    model = HoennModel(sim_from_toml(header["onn"]), weights, bias, header["detector"], header["agc"])
    return model, header
