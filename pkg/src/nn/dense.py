"""Dense ReLU network with softmax cross-entropy on soft targets.

Parameters live in one flat float64 vector. Layer l contributes its weight matrix
W_l (fan_in x fan_out, row-major) followed by its bias b_l. Every function here is
pure: no hidden state, no randomness except init_params' explicit generator.
"""

from typing import NamedTuple

import numpy as np
from scipy.special import softmax

from src.data.models import Batch, Dataset, ModelSpec
from src.utils.errors import ConfigurationError, NumericError

# Guard inside log() so one-hot targets against saturated probabilities stay finite
EPS_LOG = 1e-12


class LayerSlice(NamedTuple):
    name: str
    index: slice
    shape: tuple[int, ...]


def param_layout(spec: ModelSpec) -> list[LayerSlice]:
    """Where every weight matrix and bias vector sits inside the flat vector."""
    layout = []
    offset = 0
    for layer, (fan_in, fan_out) in enumerate(spec.layer_shapes(), start=1):
        size = fan_in * fan_out
        layout.append(LayerSlice(f"W{layer}", slice(offset, offset + size), (fan_in, fan_out)))
        offset += size
        layout.append(LayerSlice(f"b{layer}", slice(offset, offset + fan_out), (fan_out,)))
        offset += fan_out
    return layout


def unflatten(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """(W, b) views per layer."""
    layout = param_layout(spec)
    return [(params[w.index].reshape(w.shape), params[b.index]) for w, b in zip(layout[0::2], layout[1::2])]


def flatten(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([W.reshape(-1), b]) for W, b in layers])


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """He-uniform weights, zero biases."""
    layers = []
    for fan_in, fan_out in spec.layer_shapes():
        bound = np.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return flatten(layers)


def _check_params(spec: ModelSpec, params: np.ndarray) -> None:
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise ConfigurationError(f"parameter vector has shape {params.shape}, model needs ({spec.n_params},)")
    if not np.all(np.isfinite(params)):
        raise NumericError("parameter vector contains non-finite values")


def _check_inputs(spec: ModelSpec, inputs: np.ndarray) -> None:
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise ConfigurationError(f"inputs have shape {inputs.shape}, model expects (B, {spec.input_dim})")
    if not np.all(np.isfinite(inputs)):
        raise NumericError("inputs contain non-finite values")


def _check_batch(spec: ModelSpec, batch: Batch) -> None:
    _check_inputs(spec, batch.inputs)
    if batch.targets.shape[1] != spec.n_classes:
        raise ConfigurationError(f"targets have {batch.targets.shape[1]} columns, model has {spec.n_classes} classes")


class _Trace(NamedTuple):
    layers: list[tuple[np.ndarray, np.ndarray]]
    activations: list[np.ndarray]  # a_0 = inputs, ..., a_{L-1}
    masks: list[np.ndarray]  # ReLU masks of hidden layers 1..L-1
    probs: np.ndarray


def _run_forward(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> _Trace:
    layers = unflatten(spec, params)
    activations = [inputs]
    masks = []
    a = inputs
    for W, b in layers[:-1]:
        z = a @ W + b
        mask = z > 0
        a = np.where(mask, z, 0.0)
        masks.append(mask)
        activations.append(a)
    W, b = layers[-1]
    probs = softmax(a @ W + b, axis=1)
    return _Trace(layers, activations, masks, probs)


def forward(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Softmax probabilities, one row per input."""
    inputs = np.asarray(inputs, dtype=np.float64)
    _check_params(spec, params)
    _check_inputs(spec, inputs)
    return _run_forward(spec, params, inputs).probs


def per_example_loss(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if probs.shape != targets.shape:
        raise ConfigurationError(f"probs {probs.shape} and targets {targets.shape} differ in shape")
    return -np.sum(targets * np.log(probs + EPS_LOG), axis=1)


def loss_ce(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean soft-target cross-entropy."""
    return float(np.mean(per_example_loss(probs, targets)))


def batch_loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    return loss_ce(forward(spec, params, batch.inputs), batch.targets)


def _backward(trace: _Trace, delta: np.ndarray) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Back-propagate output error delta; returns per-layer (gW, gb) and d/d inputs."""
    grads = []
    for layer in range(len(trace.layers) - 1, -1, -1):
        W, _ = trace.layers[layer]
        grads.append((trace.activations[layer].T @ delta, delta.sum(axis=0)))
        upstream = delta @ W.T
        if layer > 0:
            delta = upstream * trace.masks[layer - 1]
    grads.reverse()
    return grads, upstream


def grad_params(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Batch-mean gradient of loss_ce(forward(.)) w.r.t. the parameters."""
    _check_params(spec, params)
    _check_batch(spec, batch)
    trace = _run_forward(spec, params, batch.inputs)
    grads, _ = _backward(trace, (trace.probs - batch.targets) / len(batch))
    return flatten(grads)


def grad_inputs(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Gradient of the batch-mean loss w.r.t. every input row (targets fixed)."""
    _check_params(spec, params)
    _check_batch(spec, batch)
    trace = _run_forward(spec, params, batch.inputs)
    _, upstream = _backward(trace, (trace.probs - batch.targets) / len(batch))
    return upstream


def grad_inputs_jvp(spec: ModelSpec, params: np.ndarray, direction: np.ndarray, batch: Batch) -> np.ndarray:
    """Directional derivative of grad_inputs along a parameter direction.

    Forward-over-reverse: tangents of the forward pass w.r.t. params are pushed
    through the backward pass. The result equals the input gradient of
    direction . grad_params(batch), which is what gradient inversion needs.
    ReLU masks are piecewise constant, so they carry no tangent.
    """
    _check_params(spec, params)
    _check_batch(spec, batch)
    if direction.shape != params.shape:
        raise ConfigurationError(f"direction has shape {direction.shape}, expected {params.shape}")
    trace = _run_forward(spec, params, batch.inputs)
    tangents = unflatten(spec, direction)
    n_layers = len(trace.layers)

    # Forward tangents of pre-activations; inputs are held fixed
    a_dot = np.zeros_like(batch.inputs)
    for layer in range(n_layers):
        W, _ = trace.layers[layer]
        V, c = tangents[layer]
        z_dot = a_dot @ W + trace.activations[layer] @ V + c
        if layer < n_layers - 1:
            a_dot = z_dot * trace.masks[layer]
    probs = trace.probs
    p_dot = probs * (z_dot - np.sum(probs * z_dot, axis=1, keepdims=True))

    B = len(batch)
    delta = (probs - batch.targets) / B
    delta_dot = p_dot / B
    for layer in range(n_layers - 1, -1, -1):
        W, _ = trace.layers[layer]
        V, _ = tangents[layer]
        upstream_dot = delta_dot @ W.T + delta @ V.T
        if layer > 0:
            mask = trace.masks[layer - 1]
            delta = (delta @ W.T) * mask
            delta_dot = upstream_dot * mask
    return upstream_dot


def per_example_sq_grad_mean(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Mean over examples of the squared gradient of y . log p.

    Per-example gradients are outer products a_i delta_i, so their squares
    collapse to (a^2)^T (delta^2) / B without materializing B full gradients.
    """
    _check_params(spec, params)
    _check_batch(spec, batch)
    trace = _run_forward(spec, params, batch.inputs)
    B = len(batch)
    # Gradient of y . log p w.r.t. the logits (rows of y sum to 1)
    delta = batch.targets - trace.probs
    squares = []
    for layer in range(len(trace.layers) - 1, -1, -1):
        W, _ = trace.layers[layer]
        a = trace.activations[layer]
        squares.append(((a**2).T @ (delta**2) / B, np.mean(delta**2, axis=0)))
        if layer > 0:
            delta = (delta @ W.T) * trace.masks[layer - 1]
    squares.reverse()
    return flatten(squares)


def predict(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    return np.argmax(forward(spec, params, inputs), axis=1)


def accuracy(spec: ModelSpec, params: np.ndarray, dataset: Dataset) -> float:
    """Fraction of examples whose argmax prediction matches the label."""
    return float(np.mean(predict(spec, params, dataset.features) == dataset.labels))
