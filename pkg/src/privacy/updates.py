"""One-step parameter updates as the server observes them, per defense.

Each simulator also provides the vector-Jacobian product of its update w.r.t. the
input, which gradient inversion uses to follow the attack objective.
"""

from abc import ABC, abstractmethod

import numpy as np

from src.algorithms.fedreg import GRAD_NORM_GUARD, build_uniform_label_set, gen_pseudo, modified_gradient
from src.config import AttackConfig, DpConfig, FedRegConfig
from src.data.models import Batch, ModelSpec, one_hot
from src.nn.dense import grad_inputs_jvp, grad_params
from src.nn.vector import vec_dot, vec_norm
from src.privacy.dp import clip_and_noise, clip_gradient, clip_vjp
from src.utils.errors import ConfigurationError, NumericError

# Relative orthogonality tolerance checked on every MG update
MG_ORTHOGONALITY_TOL = 1e-12


class UpdateSimulator(ABC):
    """Delta theta produced by one local step on a single example."""

    name = "base"

    def __init__(self, spec: ModelSpec, params: np.ndarray, learning_rate: float):
        self.spec = spec
        self.params = params
        self.learning_rate = learning_rate

    def example(self, x: np.ndarray, label: int) -> Batch:
        return Batch.model_construct(inputs=x.reshape(1, -1), targets=one_hot(label, self.spec.n_classes).reshape(1, -1))

    @abstractmethod
    def update(self, x: np.ndarray, label: int) -> np.ndarray:
        """Deterministic update an attacker can simulate for a candidate input."""

    def observed_update(self, x: np.ndarray, label: int, rng: np.random.Generator) -> np.ndarray:
        """Update the server actually receives for the true example."""
        return self.update(x, label)

    @abstractmethod
    def vjp_inputs(self, x: np.ndarray, label: int, u: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. x of u . update(x, label)."""


class PlainUpdate(UpdateSimulator):
    """FedAvg, FedProx, FedCurv and SGD coincide on one step from the global params."""

    name = "plain"

    def update(self, x: np.ndarray, label: int) -> np.ndarray:
        return -self.learning_rate * grad_params(self.spec, self.params, self.example(x, label))

    def vjp_inputs(self, x: np.ndarray, label: int, u: np.ndarray) -> np.ndarray:
        return -self.learning_rate * grad_inputs_jvp(self.spec, self.params, u, self.example(x, label))[0]


class DpsgdUpdate(UpdateSimulator):
    """Clipped and noised step. Candidates are scored against the noise-free clipped step."""

    name = "dpsgd"

    def __init__(self, spec: ModelSpec, params: np.ndarray, learning_rate: float, dp: DpConfig):
        super().__init__(spec, params, learning_rate)
        self.dp = dp

    def update(self, x: np.ndarray, label: int) -> np.ndarray:
        g = grad_params(self.spec, self.params, self.example(x, label))
        return -self.learning_rate * clip_gradient(g, self.dp.clip_bound)

    def observed_update(self, x: np.ndarray, label: int, rng: np.random.Generator) -> np.ndarray:
        g = grad_params(self.spec, self.params, self.example(x, label))
        return -self.learning_rate * clip_and_noise(g, self.dp, rng)

    def vjp_inputs(self, x: np.ndarray, label: int, u: np.ndarray) -> np.ndarray:
        batch = self.example(x, label)
        g = grad_params(self.spec, self.params, batch)
        return -self.learning_rate * grad_inputs_jvp(self.spec, self.params, clip_vjp(g, self.dp.clip_bound, u), batch)[0]


class ModifiedGradientUpdate(UpdateSimulator):
    """FedReg step with the local gradient orthogonalized against the uniform-label pseudo gradient.

    On the first local step theta_gamma equals the global params, so both gradients
    are taken there. The FGSM map is piecewise constant in x, so the pseudo input
    moves one-for-one with x.
    """

    name = "fedreg-mg"

    def __init__(self, spec: ModelSpec, params: np.ndarray, learning_rate: float, fedreg: FedRegConfig):
        super().__init__(spec, params, learning_rate)
        self.fedreg = fedreg

    def _gradients(self, x: np.ndarray, label: int) -> tuple[Batch, Batch, np.ndarray, np.ndarray]:
        batch = self.example(x, label)
        pseudo = gen_pseudo(self.spec, self.params, batch, self.fedreg.eta_s, self.fedreg.fgsm_steps, self.fedreg.clip_inputs)
        uniform = build_uniform_label_set(pseudo, self.spec.n_classes)
        return batch, uniform, grad_params(self.spec, self.params, batch), grad_params(self.spec, self.params, uniform)

    def update(self, x: np.ndarray, label: int) -> np.ndarray:
        _, _, g, g_prime = self._gradients(x, label)
        g_tilde = modified_gradient(g, g_prime)
        gp_norm = vec_norm(g_prime)
        if gp_norm > GRAD_NORM_GUARD and abs(vec_dot(g_tilde, g_prime)) > MG_ORTHOGONALITY_TOL * vec_norm(g_tilde) * gp_norm:
            raise NumericError("modified gradient is not orthogonal to the pseudo-data gradient")
        return -self.learning_rate * g_tilde

    def vjp_inputs(self, x: np.ndarray, label: int, u: np.ndarray) -> np.ndarray:
        batch, uniform, g, g_prime = self._gradients(x, label)
        denom = vec_dot(g_prime, g_prime)
        if np.sqrt(denom) <= GRAD_NORM_GUARD:
            return -self.learning_rate * grad_inputs_jvp(self.spec, self.params, u, batch)[0]
        u_gp = vec_dot(u, g_prime)
        g_gp = vec_dot(g, g_prime)
        # Cotangents of g_tilde = g - (g . g') / (g' . g') g' w.r.t. g and g'
        u_g = u - (u_gp / denom) * g_prime
        u_gprime = -(u_gp * g + g_gp * u) / denom + (2.0 * g_gp * u_gp / denom**2) * g_prime
        through_x = grad_inputs_jvp(self.spec, self.params, u_g, batch)[0]
        through_pseudo = grad_inputs_jvp(self.spec, self.params, u_gprime, uniform)[0]
        return -self.learning_rate * (through_x + through_pseudo)


DEFENSES = {
    "plain": PlainUpdate,
    "dpsgd": DpsgdUpdate,
    "fedreg-mg": ModifiedGradientUpdate,
}


def build_defense(name: str, spec: ModelSpec, params: np.ndarray, learning_rate: float, dp: DpConfig | None = None, fedreg: FedRegConfig | None = None) -> UpdateSimulator:
    """Instantiate the update simulator of a defense."""
    if name not in DEFENSES:
        raise ConfigurationError(f"unknown defense {name!r}, choose from {sorted(DEFENSES)}")
    if name == "dpsgd":
        return DpsgdUpdate(spec, params, learning_rate, dp or DpConfig())
    if name == "fedreg-mg":
        return ModifiedGradientUpdate(spec, params, learning_rate, fedreg or FedRegConfig())
    return PlainUpdate(spec, params, learning_rate)


def simulated_update(simulator: UpdateSimulator, x: np.ndarray, label: int) -> np.ndarray:
    """Delta theta of one local step on (x, label) under the simulator's defense."""
    return simulator.update(x, label)


def build_attack_simulators(cfg: AttackConfig, spec: ModelSpec, params: np.ndarray, learning_rate: float, fedreg: FedRegConfig | None = None) -> tuple[UpdateSimulator, UpdateSimulator]:
    """(defense the server observes, simulator the attacker matches candidates with).

    The fedreg-mg defense runs with cfg.mg_eta_s when set. A "plain" attacker
    ignores the defense and matches candidates with plain one-step updates.
    """
    fedreg = fedreg or FedRegConfig()
    if cfg.mg_eta_s is not None:
        fedreg = fedreg.model_copy(update={"eta_s": cfg.mg_eta_s, "eta_p": min(fedreg.eta_p, cfg.mg_eta_s)})
    defense = build_defense(cfg.defense, spec, params, learning_rate, dp=cfg.dp, fedreg=fedreg)
    if cfg.attacker_model == "plain":
        return defense, PlainUpdate(spec, params, learning_rate)
    return defense, defense
