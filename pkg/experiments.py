"""
Experiment runners behind the command-line subcommands.

This module provides:
- build_optimizer_config: Optimizer section -> OptimizerConfig
- run_beamfocus: Multi-user beamfocusing for every configured layer count
- run_doa: HOENN, ONN-only and random-SIM+ENN training/evaluation over an SNR grid
- run_utility: Rayleigh distance, channel-estimation NMSE sweep, DFT spectrum fit
- run_scenario: Dispatch on scenario.kind

Every runner writes into one run directory and returns (RunManifest, summary),
where summary is a small dict of headline numbers.
"""

import logging
import math
import os

import numpy as np

from algorithms import OptimizerConfig
from beamforming import BeamScenario, fit_sim_phases, zf_baseline_sinr_db, beam_power_map, \
    sampling_plane
from config import (
    HT1_FIXED, HT2_PASSIVE, SINR_GOOD_DB, DOA_LAYER_SPACING_WAVELENGTHS, DFT_CORRELATION_TARGET,
)
from dataset import AngularGrid, generate_doa_dataset
from errors import ConfigurationError
from estimation import make_pilot_book, simulate_pilot_observations, ls_channel_estimate, \
    nmse_snr_sweep
from grid import CarrierSpec, default_pitch, rayleigh_distance, make_planar_grid
from hoenn import (
    TrainConfig, build_doa_onn, init_hoenn, train_hoenn, evaluate_accuracy, fit_onn_only,
    random_sim_enn_classifier, save_checkpoint, load_checkpoint, build_dft_sim, fit_dft_spectrum,
)
from metasurface import HardwareProfile, ImperfectionModel, build_sim_stack, sim_to_toml
from propagation import sample_correlated_rayleigh
from reporting import (
    RunRecorder, BEAM_SUMMARY_COLUMNS, BEAM_SINR_COLUMNS, BEAM_TRACE_COLUMNS, BEAM_MAP_COLUMNS,
    ACCURACY_COLUMNS, COMPARISON_COLUMNS, TRAINING_COLUMNS, VALIDATION_COLUMNS, NMSE_COLUMNS,
    ESTIMATION_SUMMARY_COLUMNS, SPECTRUM_COLUMNS, DFT_FIT_COLUMNS, RAYLEIGH_COLUMNS,
)
from scenario import scenario_hash, scenario_to_dict, default_amplitude_range
from utils import derive_seed, STREAM_INIT, STREAM_TRAINING, STREAM_EVALUATION, STREAM_CHANNEL, \
    STREAM_DATASET

logger = logging.getLogger(__name__)

MODEL_NAMES = ["hoenn", "onn_only", "random_sim_enn"]


def build_optimizer_config(section, jobs=1):
    """
    @param section: OptimizerSection
    @param jobs: Worker threads for restarts
    @return: OptimizerConfig
    """
    return OptimizerConfig(algorithm=section.algorithm, step_size=section.step_size,
                           iterations=section.iterations, restarts=section.restarts,
                           cosine_decay=section.cosine_decay,
                           project_every_iteration=section.project_every_iteration, jobs=int(jobs))


def _finish(recorder, scenario, seeds, summary):
    manifest = recorder.finalize(scenario_hash(scenario), seeds, scenario_to_dict(scenario))
    return manifest, summary


# =============================================================================
# BEAMFOCUSING
# =============================================================================

def _beam_profile(section):
    if section.profile == HT1_FIXED:
        return HardwareProfile.fixed()
    if section.profile == HT2_PASSIVE:
        return HardwareProfile.passive(section.phase_bits)
    return HardwareProfile.active(default_amplitude_range(section), coupled=section.coupled)


def run_beamfocus(scenario, out_dir, jobs=1):
    """
    Fit SIM phases for every layer count and emit maps, traces and a summary.

    Users sit on the boresight axis at the configured distances from the last
    layer; feed k serves user k.

    @param scenario: Scenario of kind beamfocus
    @param out_dir: Run directory
    @param jobs: Worker threads
    @return: (RunManifest, summary)
    """
    section = scenario.beamfocus
    carrier = CarrierSpec(scenario.carrier.frequency_hz)
    optimizer = build_optimizer_config(scenario.optimizer, jobs)
    profile = _beam_profile(section)
    recorder = RunRecorder(out_dir)
    distances = np.asarray(section.user_distances_m, dtype=float)
    users = len(distances)

    summary_rows, sinr_rows, trace_rows = [], [], []
    for layers in sorted(int(n) for n in section.layer_counts):
        sim = build_sim_stack(layers, section.layer_rows, section.layer_cols, carrier,
                              section.layer_spacing_m, pitch_m=section.pitch_m, profile=profile,
                              feed_shape=(1, users), feed_distance_m=section.feed_distance_m)
        z_last = float(sim.layers[-1].grid.center[2])
        positions = np.column_stack([np.zeros(users), np.zeros(users), z_last + distances])
        beam = BeamScenario(sim, positions, section.total_power, section.channel_mode,
                            section.pathloss, scenario.seed)

        report = fit_sim_phases(beam, None, optimizer)
        zf_sinr = zf_baseline_sinr_db(beam)
        good = int(np.sum(report.per_user_sinr_db >= SINR_GOOD_DB))
        logger.info("L=%d: loss %.4g, leakage %.4f, %d/%d users at >= %.0f dB", layers,
                    report.final_loss, report.leakage, good, users, SINR_GOOD_DB)

        summary_rows.append({
            "layers": layers, "final_loss": report.final_loss,
            "continuous_loss": report.continuous_loss, "leakage": report.leakage,
            "condition_number": report.condition_number, "users_at_good_sinr": good,
            "iterations": report.iterations, "best_restart": report.best_restart,
        })
        for user in range(users):
            sinr_rows.append({"layers": layers, "user": user, "distance_m": distances[user],
                              "sinr_db": report.per_user_sinr_db[user], "zf_sinr_db": zf_sinr[user]})
        trace_rows.extend({"layers": layers, "iteration": i, "loss": loss}
                          for i, loss in enumerate(report.loss_trace))

        points, (nz, nx) = sampling_plane(section.map_x_range_m,
                                          (z_last + section.map_z_range_m[0],
                                           z_last + section.map_z_range_m[1]),
                                          section.map_points[0], section.map_points[1])
        weights = np.full(users, math.sqrt(section.total_power / users), dtype=complex)
        power = beam_power_map(report.sim, points, weights, jobs)
        rows_idx, cols_idx = np.divmod(np.arange(points.shape[0]), nx)
        recorder.write_table(f"beam_map_L{layers}.csv", {
            "row": rows_idx, "col": cols_idx, "x_m": points[:, 0], "y_m": points[:, 1],
            "z_m": points[:, 2], "power": power,
        }, BEAM_MAP_COLUMNS)
        recorder.write_text(f"sim_L{layers}.toml", sim_to_toml(report.sim))

    recorder.write_table("beam_summary.csv", summary_rows, BEAM_SUMMARY_COLUMNS)
    recorder.write_table("beam_sinr.csv", sinr_rows, BEAM_SINR_COLUMNS)
    recorder.write_table("beam_loss_trace.csv", trace_rows, BEAM_TRACE_COLUMNS)

    summary = {f"loss_L{row['layers']}": row["final_loss"] for row in summary_rows}
    return _finish(recorder, scenario, {"seed": scenario.seed}, summary)


# =============================================================================
# DOA
# =============================================================================

def _train_config(scenario, seed):
    training = scenario.training
    snr = training.train_snr_db if training.train_snr_max_db is None else \
        (training.train_snr_db, training.train_snr_max_db)
    augmentation = None
    if training.phase_jitter_std or training.amplitude_error_std or training.position_error_std_m:
        augmentation = ImperfectionModel(training.phase_jitter_std, training.amplitude_error_std,
                                         training.position_error_std_m, seed)
    return TrainConfig(learning_rate=training.learning_rate, epochs=training.epochs,
                       batch_size=training.batch_size, seed=seed, train_snr_db=snr,
                       imperfection_augmentation=augmentation,
                       algorithm=scenario.optimizer.algorithm)


def _average_rows(per_repeat):
    """Mean accuracy over repeats; standard errors combined as independent."""
    rows = []
    for points in zip(*per_repeat):
        count = len(points)
        rows.append({
            "snr_db": points[0]["snr_db"],
            "accuracy": float(np.mean([p["accuracy"] for p in points])),
            "stderr": math.sqrt(sum(p["stderr"] ** 2 for p in points)) / count,
            "n": int(sum(p["n"] for p in points)),
        })
    return rows


def run_doa(scenario, out_dir, jobs=1):
    """
    Train (doa_train) or load (doa_eval) the HOENN, build both baselines and
    sweep the SNR grid.

    Repeat r uses seed derive_seed(seed, training stream, r); checkpoints are
    hoenn_r<r>.npz in the run directory (doa_eval reads them from
    doa.checkpoint, or from the run directory when unset).

    @param scenario: Scenario of kind doa_train or doa_eval
    @param out_dir: Run directory
    @param jobs: Worker threads for ONN-only restarts
    @return: (RunManifest, summary)
    """
    doa = scenario.doa
    evaluation = scenario.evaluation
    carrier = CarrierSpec(scenario.carrier.frequency_hz)
    grid = AngularGrid(doa.az_bins, doa.el_bins)
    optimizer = build_optimizer_config(scenario.optimizer, jobs)
    recorder = RunRecorder(out_dir)
    spacing = doa.layer_spacing_m or DOA_LAYER_SPACING_WAVELENGTHS * carrier.wavelength_m
    checkpoint_dir = doa.checkpoint or out_dir

    curves = {name: [] for name in MODEL_NAMES}
    training_rows, validation_rows, seeds = [], [], {"seed": scenario.seed}
    for repeat in range(doa.repeats):
        seed = derive_seed(scenario.seed, STREAM_TRAINING, repeat)
        seeds[f"repeat_{repeat}"] = seed
        config = _train_config(scenario, seed)
        onn = build_doa_onn(carrier, doa.layers, doa.layer_rows, doa.layer_cols,
                            (doa.receiver_rows, doa.receiver_cols), spacing,
                            seed=derive_seed(seed, STREAM_INIT))
        train_set = generate_doa_dataset(grid, onn.layers[0].grid, carrier, doa.train_per_region,
                                         config.train_snr_db, seed)
        checkpoint = f"hoenn_r{repeat}.npz"

        if scenario.kind == "doa_train":
            model = init_hoenn(onn, grid.num_regions, doa.detector, doa.agc, seed)
            hoenn, trace = train_hoenn(model, train_set, config)
            training_rows.extend({"model": "hoenn", "repeat": repeat, "epoch": e, "loss": loss}
                                 for e, loss in enumerate(trace))
            save_checkpoint(recorder.path(checkpoint), hoenn, scenario_hash(scenario))
            recorder.record(checkpoint)
        else:
            path = os.path.join(checkpoint_dir, checkpoint)
            hoenn, _ = load_checkpoint(path)
            if hoenn.num_classes != grid.num_regions:
                raise ConfigurationError(f"checkpoint {path} has {hoenn.num_classes} classes, "
                                         f"scenario has {grid.num_regions} regions")

        onn_only, _ = fit_onn_only(onn, grid, optimizer, seed)
        random_model, random_trace = random_sim_enn_classifier(seed, grid, config, train_set, onn,
                                                               doa.detector, doa.agc)
        training_rows.extend({"model": "random_sim_enn", "repeat": repeat, "epoch": e, "loss": loss}
                             for e, loss in enumerate(random_trace))

        models = {"hoenn": hoenn, "onn_only": onn_only, "random_sim_enn": random_model}
        eval_seed = derive_seed(seed, STREAM_EVALUATION)
        if doa.validation_per_region > 0:
            validation = generate_doa_dataset(grid, onn.layers[0].grid, carrier,
                                              doa.validation_per_region, config.train_snr_db,
                                              derive_seed(seed, STREAM_DATASET))
            for name, model in models.items():
                accuracy = float(np.mean(model.predict(validation) == validation.labels))
                validation_rows.append({"model": name, "repeat": repeat, "accuracy": accuracy,
                                        "n": len(validation)})
        for name, model in models.items():
            curves[name].append(evaluate_accuracy(model, grid, evaluation.snr_grid_db,
                                                  evaluation.trials, eval_seed,
                                                  evaluation.noise_point, onn.layers[0].grid,
                                                  carrier))

    merged = {}
    for name in MODEL_NAMES:
        rows = _average_rows(curves[name])
        recorder.write_table(f"accuracy_{name}.csv", rows, ACCURACY_COLUMNS)
        merged[name] = [row["accuracy"] for row in rows]
    recorder.write_table("accuracy_comparison.csv", {
        "snr_db": list(evaluation.snr_grid_db), **merged}, COMPARISON_COLUMNS)
    if training_rows:
        recorder.write_table("training_loss.csv", training_rows, TRAINING_COLUMNS)
    if validation_rows:
        recorder.write_table("validation_accuracy.csv", validation_rows, VALIDATION_COLUMNS)

    summary = {f"{name}_accuracy_at_{snr:g}dB": merged[name][i]
               for name in MODEL_NAMES for i, snr in enumerate(evaluation.snr_grid_db)}
    return _finish(recorder, scenario, seeds, summary)


# =============================================================================
# UTILITIES
# =============================================================================

def _run_rayleigh(scenario, recorder):
    carrier = CarrierSpec(scenario.carrier.frequency_hz)
    aperture = scenario.rayleigh.aperture_m
    if aperture is None:
        beam = scenario.beamfocus
        pitch = beam.pitch_m or default_pitch(carrier)
        aperture = make_planar_grid(beam.layer_rows, beam.layer_cols, pitch).aperture_m
    distance = rayleigh_distance(aperture, carrier)
    logger.info("Rayleigh distance of a %.4g m aperture at %.4g GHz: %.2f m", aperture,
                carrier.frequency_hz / 1e9, distance)
    recorder.write_table("rayleigh.csv", [{
        "aperture_m": aperture, "frequency_hz": carrier.frequency_hz,
        "wavelength_m": carrier.wavelength_m, "rayleigh_distance_m": distance,
    }], RAYLEIGH_COLUMNS)
    return {"aperture_m": aperture, "frequency_hz": carrier.frequency_hz,
            "rayleigh_distance_m": distance}


def _run_channel_est(scenario, recorder):
    section = scenario.channel_est
    carrier = CarrierSpec(scenario.carrier.frequency_hz)
    sim = build_sim_stack(section.layers, section.layer_rows, section.layer_cols, carrier,
                          section.layer_spacing_m, seed=derive_seed(scenario.seed, STREAM_INIT),
                          feed_shape=(section.feed_rows, section.feed_cols))
    slots = section.slots or -(-sim.num_outputs // sim.num_feeds)
    book = make_pilot_book(sim, slots, scenario.seed)

    channel = sample_correlated_rayleigh(sim.output_grid, section.users, section.pathloss,
                                         derive_seed(scenario.seed, STREAM_CHANNEL), carrier)
    observations = simulate_pilot_observations(channel.matrix, book, sim)
    _, noiseless_nmse = ls_channel_estimate(observations, book, sim, channel.matrix)

    rows = nmse_snr_sweep(sim, book, section.users, section.snr_grid_db, section.trials,
                          scenario.seed, section.pathloss)
    recorder.write_table("nmse.csv", rows, NMSE_COLUMNS)
    if len(rows) > 1:
        snr = np.array([row["snr_db"] for row in rows])
        slope = float(np.polyfit(snr / 10.0, np.log10([row["nmse"] for row in rows]), 1)[0])
    else:
        slope = math.nan
    summary = {"unknowns": sim.num_outputs, "observations_per_slot": sim.num_feeds, "slots": slots,
               "noiseless_nmse": noiseless_nmse, "nmse_decades_per_10db": slope}
    recorder.write_table("channel_est_summary.csv", [summary], ESTIMATION_SUMMARY_COLUMNS)
    return summary


def _run_spectrum(scenario, recorder, jobs):
    section = scenario.spectrum
    carrier = CarrierSpec(scenario.carrier.frequency_hz)
    dims = (section.rows, section.cols)
    sim = build_dft_sim(carrier, dims, section.layers, section.layer_side, section.layer_spacing_m,
                        seed=derive_seed(scenario.seed, STREAM_INIT))
    report, spectrum = fit_dft_spectrum(sim, dims, build_optimizer_config(scenario.optimizer, jobs),
                                        scenario.seed)
    if report.correlation < DFT_CORRELATION_TARGET:
        logger.warning("DFT fit reached correlation %.4f, below %.2f; try more layers or iterations",
                       report.correlation, DFT_CORRELATION_TARGET)
    power = spectrum(np.ones(sim.num_feeds))
    peak_row, peak_col = (int(v) for v in np.unravel_index(np.argmax(power), power.shape))
    rows_idx, cols_idx = np.divmod(np.arange(power.size), dims[1])
    recorder.write_table("spectrum_boresight.csv", {
        "row": rows_idx, "col": cols_idx, "power": power.ravel()}, SPECTRUM_COLUMNS)
    recorder.write_table("dft_fit.csv", [{
        "rows": dims[0], "cols": dims[1], "layers": section.layers,
        "correlation": report.correlation, "final_loss": report.final_loss,
        "iterations": report.iterations, "peak_row": peak_row, "peak_col": peak_col,
    }], DFT_FIT_COLUMNS)
    recorder.write_text("sim_dft.toml", sim_to_toml(report.sim))
    return {"correlation": report.correlation, "final_loss": report.final_loss,
            "peak_bin": [peak_row, peak_col]}


def run_utility(scenario, out_dir, jobs=1):
    """
    Rayleigh distance, channel-estimation sweep or DFT spectrum fit.

    @param scenario: Scenario of kind rayleigh, channel_est or spectrum
    @param out_dir: Run directory
    @param jobs: Worker threads
    @return: (RunManifest, summary)
    """
    recorder = RunRecorder(out_dir)
    if scenario.kind == "rayleigh":
        summary = _run_rayleigh(scenario, recorder)
    elif scenario.kind == "channel_est":
        summary = _run_channel_est(scenario, recorder)
    elif scenario.kind == "spectrum":
        summary = _run_spectrum(scenario, recorder, jobs)
    else:
        raise ConfigurationError(f"{scenario.kind!r} is not a utility scenario")
    return _finish(recorder, scenario, {"seed": scenario.seed}, summary)


RUNNERS = {
    "beamfocus": run_beamfocus,
    "doa_train": run_doa,
    "doa_eval": run_doa,
    "spectrum": run_utility,
    "channel_est": run_utility,
    "rayleigh": run_utility,
}


def run_scenario(scenario, out_dir, jobs=1):
    """
    Run a scenario with the runner matching its kind.

    @return: (RunManifest, summary)
    """
    logger.info("running %s scenario %r (seed %d) into %s", scenario.kind, scenario.name,
                scenario.seed, out_dir)
    return RUNNERS[scenario.kind](scenario, out_dir, jobs)
