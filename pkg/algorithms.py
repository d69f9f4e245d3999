"""
Gradient-based optimizers for SIM phases and HOENN parameters.

This module implements 2 step rules as generators, so every caller can
watch, log or stop the descent between iterations:

- GD: Plain gradient descent with cosine step decay
- Adam: Adaptive per-parameter step scaling with cosine step decay

An optimizer works on a list of real numpy arrays (one per parameter
group). The caller supplies `objective(params) -> (loss, grads)` with grads
shaped like params. Each generator yields state dictionaries:
{
    'iteration': Step number (0 = initial evaluation),
    'loss': Loss at the parameters of this iteration,
    'best_loss': Lowest loss seen so far,
    'params': Parameters the loss was evaluated at,
    'step_size': Step size used for the update that follows,
    'converged': True once the loss fell below the convergence threshold
}
"""

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from config import (
    DEFAULT_STEP_SIZE, DEFAULT_ITERATIONS, DEFAULT_RESTARTS, DEFAULT_ALGORITHM,
    ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, CONVERGED_LOSS,
)
from errors import ValidationError, OptimizationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Settings shared by every step rule.

    Attributes:
        algorithm: Registry key ('adam' or 'gd')
        step_size: Initial step size
        iterations: Maximum number of updates
        restarts: Number of independent starts (restart 0 keeps the given start)
        cosine_decay: Scale steps by 0.5 (1 + cos(pi t / T))
        tolerance: Stop once the loss falls below this value
        project_every_iteration: Project onto the hardware profile after every step
        jobs: Worker threads used for restarts
    """

    algorithm: str = DEFAULT_ALGORITHM
    step_size: float = DEFAULT_STEP_SIZE
    iterations: int = DEFAULT_ITERATIONS
    restarts: int = DEFAULT_RESTARTS
    cosine_decay: bool = True
    tolerance: float = CONVERGED_LOSS
    project_every_iteration: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algorithm!r}", "optimizer.algorithm")
        if not self.step_size >= 0:
            raise ValidationError(f"must be >= 0, got {self.step_size}", "optimizer.step_size")
        if int(self.iterations) < 0:
            raise ValidationError(f"must be >= 0, got {self.iterations}", "optimizer.iterations")
        if int(self.restarts) < 1:
            raise ValidationError(f"must be >= 1, got {self.restarts}", "optimizer.restarts")
        if int(self.jobs) < 1:
            raise ValidationError(f"must be >= 1, got {self.jobs}", "optimizer.jobs")


class OptimizationResult:
    """
    Container for one optimizer run.

    Attributes:
        algorithm_name: Registry key of the step rule
        params: Best parameters found
        loss_trace: Loss per evaluated iteration (entry 0 = starting point)
        best_loss: Lowest loss in loss_trace
        iterations: Number of updates performed
        converged: Whether the tolerance was reached
        time_taken: Wall-clock seconds
    """

    def __init__(self, algorithm_name):
        """Initialize result container."""
        self.algorithm_name = algorithm_name
        self.params = None
        self.loss_trace = []
        self.best_loss = math.inf
        self.iterations = 0
        self.converged = False
        self.time_taken = 0.0


def cosine_step(step_size, iteration, total, enabled=True):
    """
    Step size for an iteration under cosine decay.

    @param step_size: Initial step size
    @param iteration: Zero-based update index
    @param total: Total number of updates
    @param enabled: If False, returns step_size unchanged
    @return: step_size * 0.5 * (1 + cos(pi * iteration / total))
    """
    if not enabled or total <= 0:
        return step_size
    return step_size * 0.5 * (1.0 + math.cos(math.pi * iteration / total))


def _evaluate(objective, params, iteration):
    loss, grads = objective(params)
    loss = float(loss)
    if not math.isfinite(loss):
        raise OptimizationError(f"non-finite loss {loss} at iteration {iteration}", iteration)
    return loss, grads


# =============================================================================
# STEP RULES
# =============================================================================

def gd_generator(objective, params, config, projector=None):
    """
    Plain gradient descent generator.

    @param objective: Callable params -> (loss, grads)
    @param params: List of real arrays (copied, not modified)
    @param config: OptimizerConfig
    @param projector: Optional callable params -> params applied after each step
    @yields: State dictionary
    """
    params = [np.array(p, dtype=float) for p in params]
    best = math.inf
    total = int(config.iterations)

    for iteration in range(total + 1):
        loss, grads = _evaluate(objective, params, iteration)
        best = min(best, loss)
        converged = loss < config.tolerance
        step = cosine_step(config.step_size, iteration, total, config.cosine_decay)
        yield {
            'iteration': iteration,
            'loss': loss,
            'best_loss': best,
            'params': params,
            'step_size': step,
            'converged': converged,
        }
        if converged or iteration == total:
            return
        params = [p - step * g for p, g in zip(params, grads)]
        if projector is not None:
            params = projector(params)


def adam_generator(objective, params, config, projector=None):
    """
    Adam generator (bias-corrected first and second moments).

    Update: p -= step * m_hat / (sqrt(v_hat) + eps), with the step following
    the cosine schedule.

    @param objective: Callable params -> (loss, grads)
    @param params: List of real arrays (copied, not modified)
    @param config: OptimizerConfig
    @param projector: Optional callable params -> params applied after each step
    @yields: State dictionary
    """
    params = [np.array(p, dtype=float) for p in params]
    first = [np.zeros_like(p) for p in params]
    second = [np.zeros_like(p) for p in params]
    best = math.inf
    total = int(config.iterations)

    for iteration in range(total + 1):
        loss, grads = _evaluate(objective, params, iteration)
        best = min(best, loss)
        converged = loss < config.tolerance
        step = cosine_step(config.step_size, iteration, total, config.cosine_decay)
        yield {
            'iteration': iteration,
            'loss': loss,
            'best_loss': best,
            'params': params,
            'step_size': step,
            'converged': converged,
        }
        if converged or iteration == total:
            return

        t = iteration + 1
        updated = []
        for index, (p, g) in enumerate(zip(params, grads)):
            first[index] = ADAM_BETA1 * first[index] + (1.0 - ADAM_BETA1) * g
            second[index] = ADAM_BETA2 * second[index] + (1.0 - ADAM_BETA2) * g * g
            m_hat = first[index] / (1.0 - ADAM_BETA1 ** t)
            v_hat = second[index] / (1.0 - ADAM_BETA2 ** t)
            updated.append(p - step * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON))
        params = updated
        if projector is not None:
            params = projector(params)


# =============================================================================
# ALGORITHM REGISTRY
# =============================================================================

ALGORITHMS = {
    'gd': gd_generator,
    'adam': adam_generator,
}

ALGORITHM_INFO = {
    'gd': {
        'name': 'Gradient Descent',
        'adaptive': False,
        'description': 'Fixed step along the negative gradient, cosine-decayed',
    },
    'adam': {
        'name': 'Adam',
        'adaptive': True,
        'description': 'Per-parameter step scaling from running gradient moments',
    },
}


def get_algorithm(name):
    """
    Get algorithm generator function by name.

    @param name: Algorithm key ('gd' or 'adam')
    @return: Generator function
    """
    if name not in ALGORITHMS:
        raise ValidationError(f"unknown algorithm {name!r}", "optimizer.algorithm")
    return ALGORITHMS[name]


def run_optimizer(objective, params, config, projector=None, label="optimizer"):
    """
    Run a step rule to completion and keep the best iterate.

    @param objective: Callable params -> (loss, grads)
    @param params: Starting parameters
    @param config: OptimizerConfig
    @param projector: Optional per-step projection
    @param label: Name used in log messages
    @return: OptimizationResult
    """
    result = OptimizationResult(config.algorithm)
    generator = get_algorithm(config.algorithm)
    start_time = time.perf_counter()

    for state in generator(objective, params, config, projector):
        result.loss_trace.append(state['loss'])
        if state['loss'] < result.best_loss:
            result.best_loss = state['loss']
            result.params = [np.array(p) for p in state['params']]
        result.iterations = state['iteration']
        result.converged = state['converged']
        if state['iteration'] % 100 == 0:
            logger.debug("%s iteration %d loss %.6g", label, state['iteration'], state['loss'])

    result.time_taken = time.perf_counter() - start_time
    logger.debug("%s finished after %d iterations, best loss %.6g",
                 label, result.iterations, result.best_loss)
    return result
