"""
Wave-domain beamforming with a SIM.

This module provides:
- BeamScenario: SIM, users, power budget and channel mode
- FitReport: Result of fitting SIM phases to a target end-to-end channel
- zf_precoder: Digital zero-forcing baseline
- user_channel / end_to_end_channel: SIM output -> user channels
- fitting_loss_and_grad: Normalized Frobenius fitting error and its phase gradient
- fit_sim_phases: Restarted gradient descent on SIM phases
- beam_power_map / sampling_plane: Received-power maps over a plane
- per_user_sinr_db / leakage: Interference diagnostics
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from algorithms import OptimizerConfig, run_optimizer
from config import (
    CHANNEL_MODES, CHANNEL_NEAR_FIELD_LOS, TWO_PI,
    DEFAULT_TOTAL_POWER, COINCIDENT_TOL_M,
)
from errors import ValidationError, StructuralError, PrecoderError, GeometryError
from grid import near_field_matrix
from metasurface import cascade_forward, cascade_phase_gradient, project_to_profile, transfer_matrix, \
    propagate_field
from propagation import ChannelRealization, sample_correlated_rayleigh
from utils import make_rng, derive_seed, linear_to_db, normalized_correlation, \
    STREAM_RESTART, STREAM_CHANNEL

logger = logging.getLogger(__name__)

MAP_CHUNK = 4096


# =============================================================================
# SCENARIO AND REPORT
# =============================================================================

@dataclass(frozen=True, eq=False)
class BeamScenario:
    """
    Multi-user downlink served through a SIM, one feed antenna per user.

    Attributes:
        sim: SimStack with a feed operator
        user_positions: Array (users x 3) in meters
        total_power: Total transmit power budget
        channel_mode: near_field_LoS or correlated_rayleigh
        pathloss: Power gain of the correlated Rayleigh channel
        seed: Seed for channel draws and restarts
    """

    sim: object
    user_positions: np.ndarray
    total_power: float = DEFAULT_TOTAL_POWER
    channel_mode: str = CHANNEL_NEAR_FIELD_LOS
    pathloss: float = 1.0
    seed: int = 0

    def __post_init__(self):
        users = np.asarray(self.user_positions, dtype=float).reshape(-1, 3)
        users.setflags(write=False)
        object.__setattr__(self, "user_positions", users)
        if users.shape[0] == 0:
            raise ValidationError("at least one user is required", "users")
        if users.shape[0] > self.sim.num_feeds:
            raise ValidationError(
                f"{users.shape[0]} users exceed {self.sim.num_feeds} feed antennas", "users")
        gaps = np.linalg.norm(users[:, None, :] - users[None, :, :], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        if np.any(gaps < COINCIDENT_TOL_M):
            raise ValidationError("user positions must be distinct", "users")
        if not self.total_power > 0:
            raise ValidationError(f"must be positive, got {self.total_power}", "total_power")
        if self.channel_mode not in CHANNEL_MODES:
            raise ValidationError(f"unknown mode {self.channel_mode!r}", "channel_mode")

    @property
    def num_users(self):
        return self.user_positions.shape[0]


@dataclass
class FitReport:
    """
    Outcome of a phase fit.

    Attributes:
        iterations: Updates performed by the selected restart
        loss_trace: Fitting error per iteration of the selected restart
        final_phases: Per-layer phases after profile projection
        per_user_sinr_db: SINR per user for the final configuration (empty if not applicable)
        final_loss: Fitting error of the final (projected) configuration
        continuous_loss: Best fitting error before projection
        restart_losses: Best loss of every restart
        best_restart: Index of the selected restart
        leakage: Off-target power fraction of the final end-to-end matrix
        condition_number: Condition number of the final end-to-end matrix
        correlation: Normalized correlation between achieved and target matrix
        sim: Final SimStack
    """

    iterations: int
    loss_trace: np.ndarray
    final_phases: list
    per_user_sinr_db: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_loss: float = math.nan
    continuous_loss: float = math.nan
    restart_losses: list = field(default_factory=list)
    best_restart: int = 0
    leakage: float = math.nan
    condition_number: float = math.nan
    correlation: float = math.nan
    sim: object = None

    @property
    def best_so_far(self):
        """Running minimum of loss_trace."""
        return np.minimum.accumulate(self.loss_trace)


# =============================================================================
# CHANNELS AND DIAGNOSTICS
# =============================================================================

def zf_precoder(H, total_power):
    """
    Zero-forcing precoder with equal received power per user.

    P = H^H (H H^H)^-1 scaled by one global factor so ||P||_F^2 = total_power;
    H P is then a scaled identity.

    @param H: Complex matrix (users x antennas)
    @param total_power: Positive power budget
    @return: Complex matrix (antennas x users)
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] > H.shape[1]:
        raise StructuralError(f"H must be users x antennas with users <= antennas, got {H.shape}")
    if not total_power > 0:
        raise ValidationError(f"must be positive, got {total_power}", "total_power")
    if np.linalg.matrix_rank(H) < H.shape[0]:
        raise PrecoderError("channel matrix is rank deficient")
    gram = H @ H.conj().T
    precoder = H.conj().T @ np.linalg.inv(gram)
    return precoder * math.sqrt(total_power / np.linalg.norm(precoder) ** 2)


def user_channel(scenario):
    """
    Channel from the SIM output elements to every user.

    @param scenario: BeamScenario
    @return: Complex matrix (users x SIM outputs)
    """
    grid = scenario.sim.output_grid
    if scenario.channel_mode == CHANNEL_NEAR_FIELD_LOS:
        return near_field_matrix(grid, scenario.user_positions, scenario.sim.carrier)
    realization = sample_correlated_rayleigh(grid, scenario.num_users, scenario.pathloss,
                                             derive_seed(scenario.seed, STREAM_CHANNEL),
                                             scenario.sim.carrier)
    return realization.matrix


def end_to_end_channel(sim, users):
    """
    E = H_user . transfer_matrix(sim).

    @param sim: SimStack
    @param users: ChannelRealization or complex matrix (users x SIM outputs)
    @return: Complex matrix (users x feeds)
    """
    H_user = users.matrix if isinstance(users, ChannelRealization) else np.asarray(users)
    if H_user.ndim != 2 or H_user.shape[1] != sim.num_outputs:
        raise StructuralError(f"user channel must have {sim.num_outputs} columns, got {H_user.shape}")
    return H_user @ transfer_matrix(sim)


def per_user_sinr_db(E, total_power):
    """
    SINR of every user with equal-power feeds and unit-variance noise.

    User k is served by feed k; SINR_k = p |E_kk|^2 / (p sum_{j!=k} |E_kj|^2 + 1)
    with p = total_power / users.

    @param E: End-to-end matrix (users x feeds)
    @param total_power: Total transmit power
    @return: Real vector in dB
    """
    E = np.asarray(E)
    users = E.shape[0]
    gains = np.abs(E[:, :users]) ** 2
    power = total_power / users
    signal = power * np.diag(gains)
    interference = power * (gains.sum(axis=1) - np.diag(gains))
    return linear_to_db(signal / (interference + 1.0))


def leakage(E):
    """
    Fraction of end-to-end power off the user/feed diagonal.

    @param E: End-to-end matrix (users x feeds)
    @return: Value in [0, 1]
    """
    E = np.asarray(E)
    total = float(np.sum(np.abs(E) ** 2))
    if total == 0:
        return 0.0
    users = min(E.shape)
    on_target = float(np.sum(np.abs(np.diagonal(E)[:users]) ** 2))
    return 1.0 - on_target / total


def zf_baseline_sinr_db(scenario):
    """
    SINR of digital ZF from an antenna array occupying the SIM output layer.

    @param scenario: BeamScenario
    @return: Real vector in dB
    """
    H = user_channel(scenario)
    precoder = zf_precoder(H, scenario.total_power)
    effective = H @ precoder
    gains = np.abs(effective) ** 2
    signal = np.diag(gains)
    return linear_to_db(signal / (gains.sum(axis=1) - signal + 1.0))


# =============================================================================
# FITTING
# =============================================================================

def normalized_fit_loss(E, target):
    """
    Fitting error || E/||E|| - T/||T|| ||_F^2 and its upstream gradient.

    The gradient G satisfies dL = Re tr(G^H dE).

    @param E: Achieved matrix
    @param target: Target matrix of the same shape
    @return: (loss, G)
    """
    norm_e = np.linalg.norm(E)
    norm_t = np.linalg.norm(target)
    if norm_t == 0:
        raise ValidationError("target must be nonzero", "target")
    unit_t = target / norm_t
    if norm_e == 0:
        return 2.0, np.zeros_like(E)
    residual = E / norm_e - unit_t
    loss = float(np.real(np.vdot(residual, residual)))
    overlap = float(np.real(np.vdot(unit_t, E)))
    grad = -2.0 * (unit_t / norm_e - overlap * E / norm_e ** 3)
    return loss, grad


def fitting_loss_and_grad(sim, target, readout=None, inputs=None):
    """
    Fitting error of readout . cascade(inputs) against a target, with phase gradients.

    @param sim: SimStack
    @param target: Target matrix
    @param readout: Optional matrix applied after the SIM (e.g. the user channel)
    @param inputs: Optional feed-side inputs (None = identity, i.e. the transfer matrix)
    @return: (loss, per-layer phase gradients)
    """
    layer_inputs, output = cascade_forward(sim, inputs)
    achieved = output if readout is None else readout @ output
    target = np.asarray(target, dtype=complex)
    if achieved.shape != target.shape:
        raise StructuralError(f"target shape {target.shape} does not match {achieved.shape}")
    loss, upstream = normalized_fit_loss(achieved, target)
    if readout is not None:
        upstream = readout.conj().T @ upstream
    return loss, cascade_phase_gradient(sim, layer_inputs, upstream)


def project_stack(sim):
    """Project every layer of a stack onto its hardware profile."""
    return sim.with_layers([project_to_profile(layer) for layer in sim.layers])


def fit_phases(sim, target, config=None, readout=None, inputs=None, seed=0, label="fit"):
    """
    Restarted gradient descent of the normalized fitting error over SIM phases.

    Restart 0 starts from the phases in `sim`; restart r > 0 from i.i.d.
    uniform phases drawn from (seed, r). If restart 0 already meets the
    tolerance no further restarts run. The lowest-loss restart wins, ties
    going to the lower index. The result is projected onto the hardware
    profile and the post-projection loss is reported.

    @param sim: SimStack (amplitudes held fixed)
    @param target: Target matrix
    @param config: OptimizerConfig
    @param readout: Optional post-SIM matrix
    @param inputs: Optional feed-side inputs
    @param seed: Restart seed
    @param label: Name used in log messages
    @return: FitReport without SINR fields
    """
    config = config or OptimizerConfig()
    project = config.project_every_iteration

    def configure(phases):
        configured = sim.with_phases(phases)
        return project_stack(configured) if project else configured

    def objective(phases):
        return fitting_loss_and_grad(configure(phases), target, readout, inputs)

    def projector(phases):
        return list(configure(phases).phases())

    def start(restart):
        if restart == 0:
            return [np.array(p) for p in sim.phases()]
        rng = make_rng(seed, STREAM_RESTART, restart)
        return [rng.uniform(0.0, TWO_PI, layer.size) for layer in sim.layers]

    def run(restart):
        result = run_optimizer(objective, start(restart), config,
                               projector if project else None, f"{label} restart {restart}")
        logger.info("%s restart %d: best loss %.6g after %d iterations",
                    label, restart, result.best_loss, result.iterations)
        return result

    results = [run(0)]
    if not results[0].converged and config.restarts > 1:
        remaining = range(1, int(config.restarts))
        if config.jobs > 1:
            with ThreadPoolExecutor(max_workers=int(config.jobs)) as pool:
                results.extend(pool.map(run, remaining))
        else:
            results.extend(run(r) for r in remaining)

    best_index = min(range(len(results)), key=lambda i: (results[i].best_loss, i))
    best = results[best_index]
    fitted = project_stack(sim.with_phases(best.params))
    _, output = cascade_forward(fitted, inputs)
    achieved = output if readout is None else readout @ output
    final_loss, _ = normalized_fit_loss(achieved, np.asarray(target, dtype=complex))
    if final_loss != best.best_loss:
        logger.info("%s: projection onto the hardware profile moved the loss %.6g -> %.6g",
                    label, best.best_loss, final_loss)

    return FitReport(
        iterations=best.iterations,
        loss_trace=np.asarray(best.loss_trace),
        final_phases=[np.array(p) for p in fitted.phases()],
        final_loss=float(final_loss),
        continuous_loss=float(best.best_loss),
        restart_losses=[r.best_loss for r in results],
        best_restart=best_index,
        correlation=normalized_correlation(achieved, target),
        sim=fitted,
    )


def fit_sim_phases(scenario, target=None, config=None):
    """
    Fit SIM phases so the end-to-end channel approaches an interference-free target.

    @param scenario: BeamScenario
    @param target: Complex matrix (users x feeds) or diagonal vector; identity by default
    @param config: OptimizerConfig
    @return: FitReport with SINR, leakage and condition number filled in
    """
    users = scenario.num_users
    if target is None:
        target = np.eye(users, scenario.sim.num_feeds, dtype=complex)
    target = np.asarray(target, dtype=complex)
    if target.ndim == 1:
        target = np.diag(target)
    if target.shape != (users, scenario.sim.num_feeds):
        raise StructuralError(
            f"target must be {users} x {scenario.sim.num_feeds}, got {target.shape}")

    readout = user_channel(scenario)
    report = fit_phases(scenario.sim, target, config, readout=readout, seed=scenario.seed,
                        label=f"L={scenario.sim.num_layers}")
    E = end_to_end_channel(report.sim, readout)
    report.per_user_sinr_db = per_user_sinr_db(E, scenario.total_power)
    report.leakage = leakage(E)
    report.condition_number = float(np.linalg.cond(E))
    return report


# =============================================================================
# BEAM MAPS
# =============================================================================

def sampling_plane(x_range, z_range, nx, nz, y=0.0):
    """
    Row-major sampling points over an x-z plane (rows follow z, columns follow x).

    @param x_range: (x_min, x_max)
    @param z_range: (z_min, z_max)
    @param nx: Points along x
    @param nz: Points along z
    @param y: Fixed y coordinate
    @return: (points array (nz*nx, 3), (nz, nx))
    """
    xs = np.linspace(x_range[0], x_range[1], int(nx))
    zs = np.linspace(z_range[0], z_range[1], int(nz))
    zz, xx = np.meshgrid(zs, xs, indexing="ij")
    points = np.stack([xx.ravel(), np.full(xx.size, float(y)), zz.ravel()], axis=-1)
    return points, (int(nz), int(nx))


def _check_outside(sim, points):
    positions = np.vstack([layer.grid.element_positions for layer in sim.layers])
    half_pitch = max(layer.grid.pitch_m for layer in sim.layers) / 2.0
    low = positions.min(axis=0) - half_pitch
    high = positions.max(axis=0) + half_pitch
    normal = np.abs(sim.layers[0].grid.normal) > 0.5
    low[normal] = positions[:, normal].min() - COINCIDENT_TOL_M
    high[normal] = positions[:, normal].max() + COINCIDENT_TOL_M
    inside = np.all((points >= low) & (points <= high), axis=1)
    if np.any(inside):
        raise GeometryError(f"{int(inside.sum())} sampling points lie inside the SIM volume", "plane")


def beam_power_map(sim, plane, feed_weights, jobs=1):
    """
    Received power |h(point)^T . transfer . feeds|^2 at every sampling point.

    @param sim: SimStack
    @param plane: Array of 3-D points (row-major over the sampling grid)
    @param feed_weights: Complex vector (feeds,)
    @param jobs: Worker threads over point chunks
    @return: Real vector, one value per point
    """
    points = np.asarray(plane, dtype=float).reshape(-1, 3)
    _check_outside(sim, points)
    output = propagate_field(sim, feed_weights)
    grid = sim.output_grid

    def chunk_power(start):
        rows = near_field_matrix(grid, points[start:start + MAP_CHUNK], sim.carrier)
        return np.abs(rows @ output) ** 2

    starts = range(0, points.shape[0], MAP_CHUNK)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
            parts = list(pool.map(chunk_power, starts))
    else:
        parts = [chunk_power(s) for s in starts]
    return np.concatenate(parts) if parts else np.zeros(0)
