"""FedReg local training.

Local steps descend along the local-data gradient taken at slowly-updated params
theta_gamma, then pull theta back so the loss on pseudo data (global-model knowledge)
and on perturbed local data does not rise, using midpoint gradients at theta_beta.
"""

import numpy as np

from src.algorithms.base import flagged_update, run_local_sgd
from src.config import FedRegConfig, LocalTrainConfig
from src.data.models import Batch, ClientUpdate, Dataset, ModelSpec
from src.nn.dense import forward, grad_inputs, grad_params
from src.nn.vector import mix_params, vec_dot
from src.utils.errors import ConfigurationError, NumericError

# Denominators below this make a projection weight or MG coefficient degenerate
GRAD_NORM_GUARD = 1e-12


def _fgsm(spec: ModelSpec, params: np.ndarray, batch: Batch, step: float, n_steps: int, clip: bool) -> np.ndarray:
    """n_steps signed-gradient ascent steps on the inputs; sign(0) = 0."""
    x = batch.inputs.copy()
    for _ in range(n_steps):
        g = grad_inputs(spec, params, Batch.model_construct(inputs=x, targets=batch.targets))
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite input gradient during FGSM")
        x = x + step * np.sign(g)
        if clip:
            x = np.clip(x, 0.0, 1.0)
    return x


def gen_pseudo(spec: ModelSpec, params: np.ndarray, shard: Batch, eta_s: float, n_steps: int, clip: bool = False) -> Batch:
    """Pseudo data: FGSM-pushed inputs labelled with the global model's soft predictions."""
    x_s = _fgsm(spec, params, shard, eta_s, n_steps, clip)
    return Batch(inputs=x_s, targets=forward(spec, params, x_s))


def gen_perturbed(spec: ModelSpec, params: np.ndarray, shard: Batch, eta_p: float, n_steps: int, clip: bool = False) -> Batch:
    """Perturbed data: small FGSM steps that keep the original labels."""
    return Batch.model_construct(inputs=_fgsm(spec, params, shard, eta_p, n_steps, clip), targets=shard.targets.copy())


def grad_at_mix(spec: ModelSpec, current: np.ndarray, anchor: np.ndarray, alpha: float, batch: Batch) -> np.ndarray:
    """Gradient at alpha * current + (1 - alpha) * anchor."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"mixing weight must lie in [0, 1], got {alpha}")
    return grad_params(spec, mix_params(current, anchor, alpha), batch)


def project_weights(theta: np.ndarray, anchor: np.ndarray, g_s: np.ndarray, g_p: np.ndarray) -> tuple[float, float]:
    """Closed-form step weights (w_s, w_p) that restore the pseudo and perturbed constraints.

    w_s is the smallest non-negative step along -g_s after which (anchor - theta') . g_s >= 0;
    w_p does the same for g_p starting from theta - w_s * g_s. Order s then p matters.
    """
    if not (theta.shape == anchor.shape == g_s.shape == g_p.shape):
        raise ConfigurationError("project_weights needs vectors of equal length")
    displacement = theta - anchor

    w_s = 0.0
    gs_sq = vec_dot(g_s, g_s)
    if np.sqrt(gs_sq) >= GRAD_NORM_GUARD:
        w_s = max(vec_dot(displacement, g_s) / gs_sq, 0.0)

    w_p = 0.0
    gp_sq = vec_dot(g_p, g_p)
    if np.sqrt(gp_sq) >= GRAD_NORM_GUARD:
        w_p = max(vec_dot(displacement - w_s * g_s, g_p) / gp_sq, 0.0)
    return w_s, w_p


def build_uniform_label_set(pseudo: Batch, n: int) -> Batch:
    """Pseudo inputs paired with the uniform label distribution."""
    if n < 2:
        raise ConfigurationError(f"need at least 2 classes, got {n}")
    return Batch.model_construct(inputs=pseudo.inputs, targets=np.full((len(pseudo), n), 1.0 / n))


def modified_gradient(g: np.ndarray, g_prime: np.ndarray) -> np.ndarray:
    """Component of g orthogonal to g_prime; g itself when g_prime is (near) zero."""
    if g.shape != g_prime.shape:
        raise ConfigurationError(f"gradients differ in length: {g.shape} vs {g_prime.shape}")
    denom = vec_dot(g_prime, g_prime)
    if np.sqrt(denom) <= GRAD_NORM_GUARD:
        return g.copy()
    out = g - (vec_dot(g, g_prime) / denom) * g_prime
    # One more pass removes the rounding residue of the first projection
    return out - (vec_dot(out, g_prime) / denom) * g_prime


def fedreg_round_data(spec: ModelSpec, global_params: np.ndarray, shard: Dataset, fedreg: FedRegConfig) -> tuple[Batch, Batch]:
    """Pseudo and perturbed sets generated once per round from theta^(t-1)."""
    local = shard.batch()
    pseudo = gen_pseudo(spec, global_params, local, fedreg.eta_s, fedreg.fgsm_steps, fedreg.clip_inputs)
    perturbed = gen_perturbed(spec, global_params, local, fedreg.eta_p, fedreg.fgsm_steps, fedreg.clip_inputs)
    return pseudo, perturbed


def local_train_fedreg(
    spec: ModelSpec,
    global_params: np.ndarray,
    shard: Dataset,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
    client_id: int = 0,
    dp_rng: np.random.Generator | None = None,
) -> ClientUpdate:
    """FedReg local training on one client.

    Per batch: (a) theta -= lr * g_gamma (orthogonalized against the uniform-label
    pseudo gradient when use_mg); (b) midpoint gradients on the index-aligned pseudo
    and perturbed minibatches; (c) theta -= w_s * g_s + w_p * g_p.
    """
    fedreg = cfg.fedreg
    try:
        pseudo, perturbed = fedreg_round_data(spec, global_params, shard, fedreg)
    except NumericError as e:
        return flagged_update(client_id, global_params, shard, str(e))
    uniform = build_uniform_label_set(pseudo, spec.n_classes) if fedreg.use_mg else None

    def direction(theta: np.ndarray, indices: np.ndarray, batch: Batch) -> np.ndarray:
        g = grad_at_mix(spec, theta, global_params, fedreg.gamma, batch)
        if uniform is None:
            return g
        g_prime = grad_at_mix(spec, theta, global_params, fedreg.gamma, uniform.take(indices))
        return modified_gradient(g, g_prime)

    def regularize(theta: np.ndarray, indices: np.ndarray, batch: Batch) -> np.ndarray:
        theta_beta = mix_params(theta, global_params, 0.5)
        g_s = grad_params(spec, theta_beta, pseudo.take(indices))
        g_p = grad_params(spec, theta_beta, perturbed.take(indices))
        w_s, w_p = project_weights(theta, global_params, g_s, g_p)
        if w_s > 0:
            theta = theta - w_s * g_s
        if w_p > 0:
            theta = theta - w_p * g_p
        return theta

    try:
        theta, steps = run_local_sgd(spec, global_params, shard, cfg, rng, direction, dp_rng=dp_rng, after_step=regularize)
    except NumericError as e:
        return flagged_update(client_id, global_params, shard, str(e))
    return ClientUpdate(client_id=client_id, trained_params=theta, n_examples=len(shard), n_steps=steps)
