"""Gradient inversion: recover a training example from the update it produced."""

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from src.config import AttackConfig
from src.data.models import ReconResult
from src.privacy.metrics import get_distance, psnr, total_variation, total_variation_grad
from src.privacy.updates import UpdateSimulator
from src.utils.errors import ConfigurationError, NumericError
from src.utils.logging import attack_logger, log_attack_restart
from src.utils.seeding import ATTACK, derive_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
# Fractions of the run after which the step size is multiplied by 0.1
DECAY_POINTS = (3 / 8, 5 / 8, 7 / 8)


def infer_image_shape(dim: int, image_shape: list[int] | None = None) -> tuple[int, int]:
    """(H, W) for a flat input; square when possible, a single row otherwise."""
    if image_shape is not None:
        if image_shape[0] * image_shape[1] != dim:
            raise ConfigurationError(f"image_shape {image_shape} does not match input dim {dim}")
        return image_shape[0], image_shape[1]
    side = math.isqrt(dim)
    return (side, side) if side * side == dim else (1, dim)


def step_size_at(iteration: int, cfg: AttackConfig) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.step_size
    passed = sum(iteration >= int(point * cfg.iterations) for point in DECAY_POINTS)
    return cfg.step_size * 0.1**passed


def attack_objective(simulator: UpdateSimulator, true_update: np.ndarray, x: np.ndarray, label: int, cfg: AttackConfig, image_shape: tuple[int, int]) -> float:
    """Distance between the observed and the candidate update, plus w * TV(candidate)."""
    distance, _ = get_distance(cfg.distance)
    value = distance(true_update, simulator.update(x, label))
    if cfg.tv_weight:
        value += cfg.tv_weight * total_variation(x.reshape(image_shape))
    return value


def objective_and_grad(simulator: UpdateSimulator, true_update: np.ndarray, x: np.ndarray, label: int, cfg: AttackConfig, image_shape: tuple[int, int]) -> tuple[float, np.ndarray]:
    distance, distance_grad = get_distance(cfg.distance)
    candidate = simulator.update(x, label)
    value = distance(true_update, candidate)
    grad = simulator.vjp_inputs(x, label, distance_grad(true_update, candidate))
    if cfg.tv_weight:
        image = x.reshape(image_shape)
        value += cfg.tv_weight * total_variation(image)
        grad = grad + cfg.tv_weight * total_variation_grad(image).reshape(-1)
    return value, grad


class _Descent:
    """Adam on one candidate input, tracking the best point seen."""

    def __init__(self, x0: np.ndarray):
        self.x = x0.copy()
        self.m = np.zeros_like(x0)
        self.v = np.zeros_like(x0)
        self.t = 0
        self.best_x = x0.copy()
        self.best_objective = math.inf
        self.trace: list[float] = []

    def _observe(self, value: float):
        if value < self.best_objective:
            self.best_objective = value
            self.best_x = self.x.copy()
        self.trace.append(self.best_objective)

    def run(self, evaluate, n_iters: int, first_iteration: int, cfg: AttackConfig):
        for k in range(n_iters):
            value, grad = evaluate(self.x)
            if not (math.isfinite(value) and np.all(np.isfinite(grad))):
                raise NumericError("non-finite attack objective")
            self._observe(value)
            self.t += 1
            self.m = ADAM_BETA1 * self.m + (1 - ADAM_BETA1) * grad
            self.v = ADAM_BETA2 * self.v + (1 - ADAM_BETA2) * grad**2
            m_hat = self.m / (1 - ADAM_BETA1**self.t)
            v_hat = self.v / (1 - ADAM_BETA2**self.t)
            self.x = self.x - step_size_at(first_iteration + k, cfg) * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            if cfg.box_constraint:
                self.x = np.clip(self.x, 0.0, 1.0)

    def finish(self, evaluate):
        value, _ = evaluate(self.x)
        if not math.isfinite(value):
            raise NumericError("non-finite attack objective")
        self._observe(value)


def _invert_once(simulator: UpdateSimulator, true_update: np.ndarray, cfg: AttackConfig, n_classes: int, image_shape: tuple[int, int], rng: np.random.Generator) -> tuple[int, _Descent]:
    x0 = rng.uniform(0.0, 1.0, size=image_shape[0] * image_shape[1])
    trial_iters = max(1, int(cfg.label_search_fraction * cfg.iterations))
    trial_iters = min(trial_iters, cfg.iterations)

    best_label, best_run = None, None
    for label in range(n_classes):
        run = _Descent(x0)
        run.run(lambda x, label=label: objective_and_grad(simulator, true_update, x, label, cfg, image_shape), trial_iters, 0, cfg)
        if best_run is None or run.best_objective < best_run.best_objective:
            best_label, best_run = label, run

    def evaluate(x):
        return objective_and_grad(simulator, true_update, x, best_label, cfg, image_shape)

    best_run.run(evaluate, cfg.iterations - trial_iters, trial_iters, cfg)
    best_run.finish(evaluate)
    return best_label, best_run


def invert_gradient(
    simulator: UpdateSimulator,
    true_update: np.ndarray,
    cfg: AttackConfig,
    n_classes: int,
    image_shape: tuple[int, int],
    target_index: int = 0,
    ground_truth: np.ndarray | None = None,
) -> ReconResult:
    """Minimize the attack objective over candidate inputs and labels.

    Every class is tried for label_search_fraction of the iterations from the same
    uniform-noise start; the best class then runs to the full budget. A non-finite
    objective restarts from a fresh seed, at most cfg.max_restarts times.
    """
    for attempt in range(cfg.max_restarts + 1):
        rng = derive_rng(cfg.seed, ATTACK, target_index, attempt)
        try:
            label, run = _invert_once(simulator, true_update, cfg, n_classes, image_shape, rng)
        except NumericError:
            if attempt == cfg.max_restarts:
                raise
            log_attack_restart(target_index, attempt + 1, cfg.seed)
            continue
        quality = psnr(run.best_x, ground_truth) if ground_truth is not None else float("nan")
        attack_logger.debug(f"Target {target_index}: label {label}, objective {run.best_objective:.3e}, PSNR {quality:.2f} dB")
        return ReconResult(reconstruction=run.best_x, label=label, objective=run.best_objective, psnr_db=quality, restarts=attempt, best_trace=run.trace)
    raise NumericError("attack did not run")


def attack_targets(
    simulator: UpdateSimulator,
    inputs: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
    n_classes: int,
    image_shape: tuple[int, int],
    workers: int = 1,
    defense: UpdateSimulator | None = None,
) -> list[ReconResult]:
    """Attack every target in parallel; results come back in target order.

    The observed update comes from ``defense`` (the attacker's ``simulator`` when
    omitted); candidates are always scored through ``simulator``.
    """
    observer = defense or simulator

    def attack_one(index: int) -> ReconResult:
        noise_rng = derive_rng(cfg.seed, ATTACK, index, 1_000_003)
        true_update = observer.observed_update(inputs[index], int(labels[index]), noise_rng)
        return invert_gradient(simulator, true_update, cfg, n_classes, image_shape, target_index=index, ground_truth=inputs[index])

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(attack_one, range(len(inputs))))
