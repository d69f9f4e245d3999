"""
Utility functions shared across the simulator.

This module provides helper functions including:
- Seeded random generators and sub-seed derivation
- Phase wrapping
- dB conversions and complex Gaussian sampling
- Normalized correlation
- Checksums, atomic file writes and formatting
"""

import hashlib
import math
import os
import tempfile

import numpy as np

from config import TWO_PI
from errors import ValidationError


# =============================================================================
# RANDOMNESS
# =============================================================================

# Stream ids used with make_rng / derive_seed. A stream id is appended to the
# scenario seed so every consumer gets an independent, reproducible stream.
STREAM_CHANNEL = 1
STREAM_PILOTS = 2
STREAM_RESTART = 3
STREAM_IMPERFECTION = 4
STREAM_DATASET = 5
STREAM_TRAINING = 6
STREAM_EVALUATION = 7
STREAM_INIT = 8
STREAM_NOISE = 9


def make_rng(seed, *stream):
    """
    Build a counter-based random generator for (seed, *stream).

    The generator is numpy's Philox-4x64 keyed by SeedSequence([seed, *stream]),
    so the draw sequence is fully determined by the integers passed in.

    @param seed: Non-negative integer seed
    @param stream: Optional non-negative integers selecting a sub-stream
    @return: numpy.random.Generator
    """
    entropy = [int(seed), *[int(s) for s in stream]]
    if any(value < 0 for value in entropy):
        raise ValidationError("seeds and stream ids must be non-negative", "seed")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed, *stream):
    """
    Derive a child integer seed from (seed, *stream).

    @param seed: Parent seed
    @param stream: Sub-stream ids
    @return: Child seed as a Python int in [0, 2**32)
    """
    entropy = [int(seed), *[int(s) for s in stream]]
    if any(value < 0 for value in entropy):
        raise ValidationError("seeds and stream ids must be non-negative", "seed")
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def complex_gaussian(rng, shape, variance=1.0):
    """
    Draw circularly-symmetric complex Gaussian samples.

    @param rng: numpy Generator
    @param shape: Output shape
    @param variance: E|x|^2 of each entry
    @return: Complex array of the given shape
    """
    scale = math.sqrt(variance / 2.0)
    real = rng.standard_normal(shape)
    imag = rng.standard_normal(shape)
    return scale * (real + 1j * imag)


# =============================================================================
# PHASES
# =============================================================================

def wrap_phase(phases):
    """
    Wrap phases into [0, 2*pi).

    @param phases: Array of phases in radians
    @return: Array with every entry in [0, 2*pi)
    """
    wrapped = np.mod(np.asarray(phases, dtype=float), TWO_PI)
    # np.mod can round tiny negatives up to exactly 2*pi
    return np.where(wrapped >= TWO_PI, 0.0, wrapped)


# =============================================================================
# CONVERSIONS AND METRICS
# =============================================================================

def db_to_linear(value_db):
    """Convert a power ratio from dB to linear scale."""
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    """Convert a power ratio from linear scale to dB."""
    return 10.0 * np.log10(value)


def normalized_correlation(a, b):
    """
    Normalized correlation |<a, b>| / (||a|| ||b||) of two arrays.

    @param a: Complex array
    @param b: Complex array of the same shape
    @return: Value in [0, 1]; 0 when either array is all-zero
    """
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(abs(np.vdot(a, b)) / denom)


# =============================================================================
# FILES
# =============================================================================

def sha256_file(path):
    """
    SHA-256 hex digest of a file's contents.

    @param path: File path
    @return: Hex digest string
    """
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text):
    """SHA-256 hex digest of a UTF-8 string."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def atomic_write_text(path, text):
    """
    Write text to path atomically (temp file in the same directory + rename).

    @param path: Destination path
    @param text: Text content
    """
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, payload):
    """
    Write bytes to path atomically (temp file in the same directory + rename).

    @param path: Destination path
    @param payload: Bytes content
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


# =============================================================================
# FORMATTING
# =============================================================================

def format_time(seconds):
    """
    Format time in seconds to a readable string.

    @param seconds: Time in seconds
    @return: Formatted string (e.g., "1.23s" or "45ms")
    """
    if seconds >= 1:
        return f"{seconds:.2f}s"
    else:
        return f"{seconds * 1000:.0f}ms"
