import math
import unittest

import numpy as np

from src.data.models import Batch, Dataset, ModelSpec, one_hot_matrix
from src.nn.dense import (
    accuracy,
    batch_loss,
    flatten,
    forward,
    grad_inputs,
    grad_inputs_jvp,
    grad_params,
    init_params,
    param_layout,
    per_example_sq_grad_mean,
    unflatten,
)
from src.nn.vector import mix_params, vec_axpy, vec_dot, vec_norm
from src.utils.errors import ConfigurationError, NumericError

FD_STEP = 1e-5


def random_batch(rng: np.random.Generator, spec: ModelSpec, n: int) -> Batch:
    labels = rng.integers(0, spec.n_classes, size=n)
    return Batch(inputs=rng.uniform(0.0, 1.0, size=(n, spec.input_dim)), targets=one_hot_matrix(labels, spec.n_classes))


def central_difference(f, x: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = FD_STEP
        grad.flat[i] = (f(x + step) - f(x - step)) / (2 * FD_STEP)
    return grad


class TestParamLayout(unittest.TestCase):
    """Flat parameter vector layout."""

    def test_layout_covers_vector(self):
        spec = ModelSpec(layer_dims=[3, 5, 2])
        layout = param_layout(spec)
        self.assertEqual([item.name for item in layout], ["W1", "b1", "W2", "b2"])
        self.assertEqual(layout[-1].index.stop, spec.n_params)
        self.assertEqual(spec.n_params, 3 * 5 + 5 + 5 * 2 + 2)

    def test_unflatten_roundtrip(self):
        spec = ModelSpec(layer_dims=[4, 3, 3])
        params = init_params(spec, np.random.default_rng(0))
        np.testing.assert_array_equal(flatten(unflatten(spec, params)), params)

    def test_init_biases_zero(self):
        spec = ModelSpec(layer_dims=[4, 3, 2])
        params = init_params(spec, np.random.default_rng(1))
        for item in param_layout(spec):
            if item.name.startswith("b"):
                np.testing.assert_array_equal(params[item.index], 0.0)


class TestForward(unittest.TestCase):
    def test_zero_params_uniform_loss(self):
        """All-zero params predict uniformly, so the loss is ln(n)."""
        spec = ModelSpec(layer_dims=[6, 4, 10])
        batch = random_batch(np.random.default_rng(2), spec, 5)
        probs = forward(spec, np.zeros(spec.n_params), batch.inputs)
        np.testing.assert_allclose(probs, 0.1, atol=1e-15)
        self.assertAlmostEqual(batch_loss(spec, np.zeros(spec.n_params), batch), math.log(10), delta=1e-9)

    def test_rows_sum_to_one(self):
        spec = ModelSpec(layer_dims=[3, 8, 4])
        rng = np.random.default_rng(3)
        probs = forward(spec, init_params(spec, rng), rng.uniform(size=(7, 3)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_wrong_input_dim(self):
        spec = ModelSpec(layer_dims=[3, 2])
        with self.assertRaises(ConfigurationError):
            forward(spec, np.zeros(spec.n_params), np.zeros((2, 4)))

    def test_wrong_param_length(self):
        spec = ModelSpec(layer_dims=[3, 2])
        with self.assertRaises(ConfigurationError):
            forward(spec, np.zeros(spec.n_params + 1), np.zeros((2, 3)))

    def test_non_finite_params(self):
        spec = ModelSpec(layer_dims=[3, 2])
        params = np.zeros(spec.n_params)
        params[0] = np.nan
        with self.assertRaises(NumericError):
            forward(spec, params, np.zeros((1, 3)))

    def test_accuracy(self):
        spec = ModelSpec(layer_dims=[2, 2])
        # Logits equal the inputs, so the larger feature wins
        params = flatten([(np.eye(2), np.zeros(2))])
        data = Dataset(features=[[0.9, 0.1], [0.2, 0.7], [0.6, 0.3]], labels=[0, 1, 1], n_classes=2)
        self.assertAlmostEqual(accuracy(spec, params, data), 2 / 3)


class TestGradients(unittest.TestCase):
    """Analytic gradients against central differences on random small nets."""

    def setUp(self):
        self.rng = np.random.default_rng(20)
        self.specs = [ModelSpec(layer_dims=dims) for dims in ([3, 2], [3, 4, 3], [2, 5, 4, 2], [4, 6, 3])]

    def test_grad_params_finite_difference(self):
        for _ in range(5):
            for spec in self.specs:
                params = init_params(spec, self.rng)
                batch = random_batch(self.rng, spec, 4)
                numeric = central_difference(lambda p: batch_loss(spec, p, batch), params)
                np.testing.assert_allclose(grad_params(spec, params, batch), numeric, rtol=1e-5, atol=1e-7)

    def test_grad_inputs_finite_difference(self):
        for _ in range(5):
            for spec in self.specs:
                params = init_params(spec, self.rng)
                batch = random_batch(self.rng, spec, 3)

                def loss_at(x):
                    return batch_loss(spec, params, Batch.model_construct(inputs=x, targets=batch.targets))

                numeric = central_difference(loss_at, batch.inputs)
                np.testing.assert_allclose(grad_inputs(spec, params, batch), numeric, rtol=1e-5, atol=1e-7)

    def test_grad_inputs_jvp_matches_directional_derivative(self):
        """grad_inputs_jvp equals the input gradient of direction . grad_params."""
        for spec in self.specs:
            params = init_params(spec, self.rng)
            direction = self.rng.normal(size=spec.n_params)
            batch = random_batch(self.rng, spec, 2)

            def projected(x):
                return float(np.dot(direction, grad_params(spec, params, Batch.model_construct(inputs=x, targets=batch.targets))))

            numeric = central_difference(projected, batch.inputs)
            np.testing.assert_allclose(grad_inputs_jvp(spec, params, direction, batch), numeric, rtol=1e-4, atol=1e-7)

    def test_per_example_sq_grad_mean_matches_loop(self):
        """Closed form against a per-example loop (gradient of y . log p is minus the loss gradient)."""
        spec = ModelSpec(layer_dims=[3, 4, 3])
        params = init_params(spec, self.rng)
        batch = random_batch(self.rng, spec, 5)
        expected = np.mean([grad_params(spec, params, batch.take(np.array([i]))) ** 2 for i in range(len(batch))], axis=0)
        np.testing.assert_allclose(per_example_sq_grad_mean(spec, params, batch), expected, rtol=1e-10, atol=1e-14)


class TestVector(unittest.TestCase):
    def test_dot(self):
        self.assertEqual(vec_dot(np.array([1.0, 2.0]), np.array([3.0, 4.0])), 11.0)

    def test_axpy_zero_alpha_copies(self):
        y = np.array([1.0, 2.0])
        out = vec_axpy(y, 0.0, np.array([np.inf, 1.0]))
        np.testing.assert_array_equal(out, y)
        self.assertIsNot(out, y)

    def test_norm(self):
        self.assertEqual(vec_norm(np.array([3.0, 4.0])), 5.0)

    def test_length_mismatch(self):
        with self.assertRaises(ConfigurationError):
            vec_dot(np.zeros(2), np.zeros(3))

    def test_mix_endpoints_exact(self):
        current, anchor = np.array([0.1, 0.7]), np.array([0.3, -0.2])
        np.testing.assert_array_equal(mix_params(current, anchor, 1.0), current)
        np.testing.assert_array_equal(mix_params(current, anchor, 0.0), anchor)
        np.testing.assert_allclose(mix_params(current, anchor, 0.5), [0.2, 0.25])


if __name__ == "__main__":
    unittest.main()
