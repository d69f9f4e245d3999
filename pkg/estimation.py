"""
Multi-slot uplink pilot channel estimation through a SIM.

This module provides:
- PilotBook: Per-slot SIM phase configurations and pilot symbols
- make_pilot_book: Random configurations + low-discrepancy pilot phases
- sensing_matrix: Stacked per-slot sensing matrix
- simulate_pilot_observations: Noisy uplink observations at a given SNR
- ls_channel_estimate: Least-squares channel recovery with optional NMSE
- nmse_snr_sweep: Monte-Carlo NMSE versus pilot SNR

Uplink model: in slot t every user sends the pilot s_t; the field it leaves
on the SIM output side travels back through the SIM (reciprocity) to the
feed antennas, so Y_t = s_t G_t^T H^T with G_t the slot-t transfer matrix and
H the (users x SIM outputs) channel. Users are separated by orthogonal
pilot sequences, so each column of Y is solved independently.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.stats import qmc

from config import TWO_PI, DEFAULT_NMSE_TRIALS
from errors import ValidationError, StructuralError, UnderdeterminedError
from metasurface import transfer_matrix
from propagation import sample_correlated_rayleigh
from utils import make_rng, complex_gaussian, derive_seed, db_to_linear, \
    STREAM_PILOTS, STREAM_CHANNEL, STREAM_NOISE

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PilotBook:
    """
    Pilot schedule of a multi-slot estimation round.

    Attributes:
        slot_phases: One entry per slot, each a list of per-layer phase vectors
        pilot_symbols: Unit-modulus complex pilot per slot
    """

    slot_phases: tuple
    pilot_symbols: np.ndarray

    def __post_init__(self):
        symbols = np.array(self.pilot_symbols, dtype=complex).ravel()
        symbols.setflags(write=False)
        object.__setattr__(self, "pilot_symbols", symbols)
        object.__setattr__(self, "slot_phases", tuple(tuple(np.asarray(p, dtype=float) for p in slot)
                                                      for slot in self.slot_phases))
        if not self.slot_phases:
            raise ValidationError("need at least one slot", "slots")
        if symbols.size != len(self.slot_phases):
            raise StructuralError(f"{len(self.slot_phases)} slots but {symbols.size} pilot symbols")
        if np.any(np.abs(np.abs(symbols) - 1.0) > 1e-12):
            raise ValidationError("pilot symbols must have unit modulus", "pilot_symbols")

    @property
    def slots(self):
        return len(self.slot_phases)


def halton_pilots(slots):
    """
    Unit-modulus pilots exp(j 2 pi h_t) with h_t the base-2 Halton sequence.

    @param slots: Number of slots
    @return: Complex vector of length slots
    """
    points = qmc.Halton(d=1, scramble=False).random(int(slots))[:, 0]
    return np.exp(1j * TWO_PI * points)


def sensing_matrix(book, sim):
    """
    Stack s_t G_t^T over slots.

    @param book: PilotBook
    @param sim: SimStack (its phases are replaced slot by slot)
    @return: Complex matrix (slots * feeds) x SIM outputs
    """
    blocks = []
    for phases, symbol in zip(book.slot_phases, book.pilot_symbols):
        if len(phases) != sim.num_layers:
            raise StructuralError(f"slot has {len(phases)} phase vectors, SIM has {sim.num_layers} layers")
        blocks.append(symbol * transfer_matrix(sim.with_phases(phases)).T)
    return np.vstack(blocks)


def make_pilot_book(sim, slots, seed):
    """
    Build a pilot book with i.i.d. uniform slot phases and Halton pilots.

    When slots * feeds >= unknowns the stacked sensing matrix is checked for
    full column rank.

    @param sim: SimStack
    @param slots: Number of time slots (>= 1)
    @param seed: Non-negative integer seed
    @return: PilotBook
    """
    if int(slots) < 1:
        raise ValidationError(f"must be >= 1, got {slots}", "slots")
    rng = make_rng(seed, STREAM_PILOTS)
    slot_phases = [[rng.uniform(0.0, TWO_PI, layer.size) for layer in sim.layers]
                   for _ in range(int(slots))]
    book = PilotBook(slot_phases, halton_pilots(slots))

    if book.slots * sim.num_feeds >= sim.num_outputs:
        rank = np.linalg.matrix_rank(sensing_matrix(book, sim))
        if rank < sim.num_outputs:
            raise UnderdeterminedError(
                f"sensing matrix rank {rank} is below the {sim.num_outputs} unknowns")
    return book


def simulate_pilot_observations(channel, book, sim, snr_db=None, rng=None):
    """
    Uplink observations for a known channel.

    The noise variance is the mean noiseless observation power divided by the
    linear SNR.

    @param channel: Complex matrix (users x SIM outputs)
    @param book: PilotBook
    @param sim: SimStack
    @param snr_db: Pilot SNR in dB; None for noiseless observations
    @param rng: numpy Generator for the noise (required when snr_db is given)
    @return: Complex matrix (slots * feeds) x users
    """
    channel = np.asarray(channel, dtype=complex)
    if channel.ndim != 2 or channel.shape[1] != sim.num_outputs:
        raise StructuralError(f"channel must be users x {sim.num_outputs}, got {channel.shape}")
    clean = sensing_matrix(book, sim) @ channel.T
    if snr_db is None:
        return clean
    if rng is None:
        raise ValidationError("a generator is required for noisy observations", "rng")
    noise_var = float(np.mean(np.abs(clean) ** 2)) / float(db_to_linear(snr_db))
    return clean + complex_gaussian(rng, clean.shape, noise_var)


def ls_channel_estimate(observations, pilots, sim, ground_truth=None):
    """
    Least-squares channel estimate from stacked pilot observations.

    @param observations: Complex (slots * feeds) x users, or slots x feeds x users
    @param pilots: PilotBook
    @param sim: SimStack used for the sensing matrix
    @param ground_truth: Optional true channel (users x SIM outputs)
    @return: (estimate, nmse) with nmse None when no ground truth is given
    """
    observations = np.asarray(observations, dtype=complex)
    if observations.ndim == 3:
        observations = observations.reshape(-1, observations.shape[-1])
    if observations.ndim == 1:
        observations = observations[:, None]

    sensing = sensing_matrix(pilots, sim)
    if observations.shape[0] != sensing.shape[0]:
        raise StructuralError(
            f"expected {sensing.shape[0]} observation rows, got {observations.shape[0]}")
    rank = np.linalg.matrix_rank(sensing)
    if rank < sensing.shape[1]:
        raise UnderdeterminedError(
            f"sensing matrix rank {rank} is below the {sensing.shape[1]} unknowns; "
            f"use at least {-(-sensing.shape[1] // sim.num_feeds)} slots")

    solution, _, _, _ = linalg.lstsq(sensing, observations)
    estimate = solution.T

    nmse = None
    if ground_truth is not None:
        truth = np.asarray(ground_truth, dtype=complex)
        nmse = float(np.linalg.norm(estimate - truth) ** 2 / np.linalg.norm(truth) ** 2)
    return estimate, nmse


def nmse_snr_sweep(sim, book, num_users, snr_db_list, trials=DEFAULT_NMSE_TRIALS, seed=0,
                   pathloss=1.0):
    """
    Monte-Carlo NMSE of the LS estimator over a grid of pilot SNRs.

    Every trial draws a fresh correlated Rayleigh channel and fresh noise.

    @param sim: SimStack
    @param book: PilotBook
    @param num_users: Number of users
    @param snr_db_list: Pilot SNRs in dB
    @param trials: Trials per SNR point (>= 1)
    @param seed: Non-negative integer seed
    @param pathloss: Channel power gain
    @return: List of row dicts (snr_db, nmse, nmse_db, stderr, trials)
    """
    if int(trials) < 1:
        raise ValidationError(f"must be >= 1, got {trials}", "trials")
    rows = []
    for snr_index, snr_db in enumerate(snr_db_list):
        values = np.empty(int(trials))
        for trial in range(int(trials)):
            channel = sample_correlated_rayleigh(
                sim.output_grid, num_users, pathloss,
                derive_seed(seed, STREAM_CHANNEL, snr_index, trial), sim.carrier)
            rng = make_rng(seed, STREAM_NOISE, snr_index, trial)
            observations = simulate_pilot_observations(channel.matrix, book, sim, snr_db, rng)
            _, values[trial] = ls_channel_estimate(observations, book, sim, channel.matrix)
        nmse = float(values.mean())
        stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
        rows.append({
            "snr_db": float(snr_db),
            "nmse": nmse,
            "nmse_db": float(10.0 * np.log10(nmse)),
            "stderr": stderr,
            "trials": int(trials),
        })
        logger.info("pilot SNR %.1f dB: NMSE %.3e over %d trials", snr_db, nmse, trials)
    return rows
