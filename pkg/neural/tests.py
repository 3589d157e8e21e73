import math

import numpy as np
from django.test import SimpleTestCase

from .exceptions import MissingCacheError
from .gradient_check import grad_check, relative_error
from .gru import (
    backward,
    embed_batch,
    embed_forward,
    encoder_forward,
    gru_cell_backward,
    gru_cell_forward,
    gru_sequence_forward,
    sigmoid,
)
from .optim import AdamState, adam_step
from .params import (
    EMBEDDING_INIT_RANGE,
    EMBEDDING_NAME,
    Embedding,
    GRULayer,
    GRUParams,
    ModelDims,
    ParamStore,
    gru_bound,
    init_params,
)

HEAD = 'global'


def random_layer(rng, input_size, hidden_size, scale=0.5):
    return GRULayer(
        W_z=rng.uniform(-scale, scale, (hidden_size, input_size)),
        W_r=rng.uniform(-scale, scale, (hidden_size, input_size)),
        W=rng.uniform(-scale, scale, (hidden_size, input_size)),
        U_z=rng.uniform(-scale, scale, (hidden_size, hidden_size)),
        U_r=rng.uniform(-scale, scale, (hidden_size, hidden_size)),
        U=rng.uniform(-scale, scale, (hidden_size, hidden_size)),
    )


def zero_layer(input_size, hidden_size):
    return GRULayer(*(np.zeros((hidden_size, input_size)) for _ in range(3)),
                    *(np.zeros((hidden_size, hidden_size)) for _ in range(3)))


def straight_line_cell(layer, x, h_prev):
    def sig(v):
        return np.array([1.0 / (1.0 + math.exp(-a)) if a >= 0 else math.exp(a) / (1.0 + math.exp(a)) for a in v])

    z = sig(layer.W_z.dot(x) + layer.U_z.dot(h_prev))
    r = sig(layer.W_r.dot(x) + layer.U_r.dot(h_prev))
    candidate = np.tanh(layer.W.dot(x) + layer.U.dot(r * h_prev))
    return z * h_prev + (1.0 - z) * candidate


def small_model(seed=0, vocab_size=10, embed_dim=4, hidden_size=6, num_layers=2):
    store = init_params(ModelDims(vocab_size, embed_dim, hidden_size, num_layers, heads=(HEAD,)), seed)
    return store, num_layers


def half_squared_norm_loss(store, num_layers, ids, mask=None, scale=1.0):
    final_h, _, cache = encoder_forward(Embedding(store[EMBEDDING_NAME]),
                                        GRUParams.from_store(store, HEAD, num_layers), ids, mask)
    return scale * 0.5 * float(np.sum(final_h ** 2)), final_h, cache


def analytic_gradients(store, num_layers, ids, mask=None, scale=1.0):
    store.zero_grad()
    _, final_h, cache = half_squared_norm_loss(store, num_layers, ids, mask, scale)
    backward(scale * final_h, cache, GRUParams.from_store(store, HEAD, num_layers),
             GRUParams.grads_from_store(store, HEAD, num_layers), store.grads[EMBEDDING_NAME])
    grads = {name: grad.copy() for name, grad in store.grads.items()}
    store.zero_grad()
    return grads


class SigmoidTests(SimpleTestCase):

    def test_stable_for_large_inputs(self):
        values = sigmoid(np.array([-1e3, -50.0, 0.0, 50.0, 1e3]))
        self.assertTrue(np.all(np.isfinite(values)))
        self.assertEqual(values[2], 0.5)
        self.assertEqual(values[0], 0.0)
        self.assertEqual(values[-1], 1.0)
        self.assertTrue(np.all(np.isfinite(np.tanh(np.array([-1e3, 1e3])))))


class EmbeddingTests(SimpleTestCase):

    def test_identity_embedding(self):
        np.testing.assert_array_equal(embed_forward(Embedding(np.eye(3)), 1), [0.0, 1.0, 0.0])

    def test_returns_column(self):
        matrix = np.random.default_rng(1).normal(size=(4, 7))
        for event_id in range(7):
            np.testing.assert_array_equal(embed_forward(Embedding(matrix), event_id), matrix[:, event_id])

    def test_out_of_range_id(self):
        with self.assertRaises(ValueError):
            embed_forward(Embedding(np.eye(3)), 3)
        with self.assertRaises(ValueError):
            embed_batch(Embedding(np.eye(3)), np.array([[0, 5]]))


class CellTests(SimpleTestCase):

    def test_zero_weights_halve_previous_state(self):
        p = np.array([0.3, -0.8, 0.5])
        h, _ = gru_cell_forward(zero_layer(2, 3), np.array([1.0, -2.0]), p)
        np.testing.assert_allclose(h, 0.5 * p, rtol=0, atol=1e-15)

    def test_zero_state_simplification(self):
        rng = np.random.default_rng(2)
        layer = random_layer(rng, 3, 4)
        x = rng.normal(size=3)
        h, _ = gru_cell_forward(layer, x, np.zeros(4))
        z = 1.0 / (1.0 + np.exp(-layer.W_z.dot(x)))
        np.testing.assert_allclose(h, (1.0 - z) * np.tanh(layer.W.dot(x)), rtol=0, atol=1e-15)

    def test_matches_straight_line_equations(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            layer = random_layer(rng, 5, 4, scale=0.3)
            x, h_prev = rng.normal(size=5), rng.uniform(-0.9, 0.9, size=4)
            h, _ = gru_cell_forward(layer, x, h_prev)
            np.testing.assert_allclose(h, straight_line_cell(layer, x, h_prev), rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        layer = zero_layer(2, 3)
        with self.assertRaises(ValueError):
            gru_cell_forward(layer, np.zeros(4), np.zeros(3))
        with self.assertRaises(ValueError):
            gru_cell_forward(layer, np.zeros(2), np.zeros(5))

    def test_backward_without_cache(self):
        layer = zero_layer(2, 3)
        with self.assertRaises(MissingCacheError):
            gru_cell_backward(np.ones(3), None, layer, zero_layer(2, 3))

    def test_masked_step_carries_state(self):
        rng = np.random.default_rng(4)
        layer = random_layer(rng, 2, 3)
        h_prev = rng.uniform(-0.5, 0.5, size=(2, 3))
        h, _ = gru_cell_forward(layer, rng.normal(size=(2, 2)), h_prev, mask=np.array([1.0, 0.0]))
        np.testing.assert_array_equal(h[1], h_prev[1])
        self.assertFalse(np.allclose(h[0], h_prev[0]))


class SequenceTests(SimpleTestCase):

    def test_single_step_equals_cell(self):
        rng = np.random.default_rng(5)
        layer = random_layer(rng, 3, 4)
        x = rng.normal(size=3)
        final_h, all_h, _ = gru_sequence_forward(GRUParams([layer]), x[np.newaxis, :])
        expected, _ = gru_cell_forward(layer, x, np.zeros(4))
        np.testing.assert_array_equal(final_h, expected)
        self.assertEqual(all_h.shape, (1, 4))

    def test_two_layers_compose(self):
        rng = np.random.default_rng(6)
        first, second = random_layer(rng, 3, 4), random_layer(rng, 4, 4)
        xs = rng.normal(size=(7, 3))
        final_h, _, _ = gru_sequence_forward(GRUParams([first, second]), xs)
        _, hidden, _ = gru_sequence_forward(GRUParams([first]), xs)
        expected, _, _ = gru_sequence_forward(GRUParams([second]), hidden)
        np.testing.assert_array_equal(final_h, expected)

    def test_empty_input(self):
        with self.assertRaises(ValueError):
            gru_sequence_forward(GRUParams([zero_layer(2, 2)]), np.zeros((0, 2)))

    def test_hidden_states_bounded(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            params = GRUParams([random_layer(rng, 3, 5, scale=4.0), random_layer(rng, 5, 5, scale=4.0)])
            _, all_h, _ = gru_sequence_forward(params, rng.normal(scale=10.0, size=(30, 3)))
            self.assertTrue(np.all(np.abs(all_h) < 1.0))

    def test_padded_batch_matches_individual_sequences(self):
        store, layers = small_model(seed=8)
        embedding = Embedding(store[EMBEDDING_NAME])
        params = GRUParams.from_store(store, HEAD, layers)
        sequences = [np.array([1, 2, 3, 4, 5]), np.array([6, 7]), np.array([9, 1, 3])]
        ids = np.zeros((5, 3), dtype=np.int64)
        mask = np.zeros((5, 3))
        for column, seq in enumerate(sequences):
            ids[:len(seq), column] = seq
            mask[:len(seq), column] = 1.0
        batch_h, _, _ = encoder_forward(embedding, params, ids, mask)
        for column, seq in enumerate(sequences):
            single_h, _, _ = encoder_forward(embedding, params, seq)
            np.testing.assert_allclose(batch_h[column], single_h, rtol=0, atol=1e-14)


class BackwardTests(SimpleTestCase):

    def test_gradients_match_finite_differences(self):
        store, layers = small_model(seed=9)
        ids = np.array([[1, 4], [2, 4], [3, 9], [5, 9], [2, 1], [7, 3]])
        analytic = analytic_gradients(store, layers, ids)
        error = grad_check(store, lambda: half_squared_norm_loss(store, layers, ids)[0], analytic)
        self.assertLess(error, 1e-4)

    def test_masked_gradients_match_finite_differences(self):
        store, layers = small_model(seed=10)
        ids = np.array([[1, 4, 2], [2, 4, 0], [3, 0, 0], [5, 0, 0]])
        mask = (ids > 0).astype(np.float64)
        analytic = analytic_gradients(store, layers, ids, mask)
        self.assertTrue(np.all(analytic[EMBEDDING_NAME][:, 0] == 0.0))
        error = grad_check(store, lambda: half_squared_norm_loss(store, layers, ids, mask)[0], analytic)
        self.assertLess(error, 1e-4)

    def test_zero_weights_one_step(self):
        store = ParamStore()
        store.add(EMBEDDING_NAME, np.random.default_rng(11).normal(size=(3, 4)))
        for gate in ('W_z', 'W_r', 'W'):
            store.add(f"{HEAD}.0.{gate}", np.zeros((2, 3)))
        for gate in ('U_z', 'U_r', 'U'):
            store.add(f"{HEAD}.0.{gate}", np.zeros((2, 2)))
        ids = np.array([2])
        analytic = analytic_gradients(store, 1, ids)
        error = grad_check(store, lambda: half_squared_norm_loss(store, 1, ids)[0], analytic)
        self.assertLess(error, 1e-4)
        for grad in analytic.values():
            np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_scaling_loss_scales_gradients(self):
        store, layers = small_model(seed=12)
        ids = np.array([1, 3, 5, 7])
        once = analytic_gradients(store, layers, ids)
        twice = analytic_gradients(store, layers, ids, scale=2.0)
        for name in once:
            np.testing.assert_allclose(twice[name], 2.0 * once[name], rtol=1e-12, atol=0)

    def test_backward_without_cache(self):
        store, layers = small_model()
        params = GRUParams.from_store(store, HEAD, layers)
        with self.assertRaises(MissingCacheError):
            backward(np.ones(6), None, params, GRUParams.grads_from_store(store, HEAD, layers))


class GradientCheckTests(SimpleTestCase):

    def test_detects_corrupted_gradient(self):
        store, layers = small_model(seed=13)
        ids = np.array([[1, 2], [3, 4], [5, 6], [7, 8]])
        analytic = analytic_gradients(store, layers, ids)
        analytic[f"{HEAD}.0.U_r"] = analytic[f"{HEAD}.0.U_r"] * 1.5 + 0.01
        error = grad_check(store, lambda: half_squared_norm_loss(store, layers, ids)[0], analytic)
        self.assertGreater(error, 1e-2)

    def test_zero_delta_rejected(self):
        store, layers = small_model()
        with self.assertRaises(ValueError):
            grad_check(store, lambda: 0.0, {}, delta=0.0)

    def test_relative_error_floor(self):
        self.assertEqual(float(relative_error(np.array(0.0), np.array(0.0))), 0.0)
        self.assertAlmostEqual(float(relative_error(np.array(1.0), np.array(3.0))), 0.5)


class AdamTests(SimpleTestCase):

    def make_store(self, value=0.5):
        store = ParamStore()
        store.add('w', np.full((2, 3), value))
        return store

    def test_first_step_with_unit_gradient(self):
        store = self.make_store()
        state = AdamState.for_store(store)
        store.grads['w'][...] = 1.0
        adam_step(store, state, lr=0.01)
        np.testing.assert_allclose(store['w'], 0.5 - 0.01 / (1.0 + 1e-8), rtol=0, atol=1e-15)
        self.assertEqual(state.t, 1)
        self.assertTrue(np.all(store.grads['w'] == 0.0))

    def test_zero_gradient_leaves_parameters(self):
        store = self.make_store()
        adam_step(store, AdamState.for_store(store), lr=0.01)
        np.testing.assert_array_equal(store['w'], np.full((2, 3), 0.5))

    def test_deterministic(self):
        results = []
        for _ in range(2):
            store = self.make_store()
            state = AdamState.for_store(store)
            for step in range(3):
                store.grads['w'][...] = np.arange(6).reshape(2, 3) * (step + 1)
                adam_step(store, state, lr=0.05)
            results.append(store['w'].copy())
        np.testing.assert_array_equal(results[0], results[1])


class InitTests(SimpleTestCase):

    def test_same_seed_bit_identical(self):
        dims = ModelDims(vocab_size=12, embed_dim=5, hidden_size=7, num_layers=2)
        first, second = init_params(dims, 3), init_params(dims, 3)
        self.assertEqual(list(first), list(second))
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_bounds_and_shapes(self):
        dims = ModelDims(vocab_size=12, embed_dim=12, hidden_size=48, num_layers=2)
        store = init_params(dims, 0)
        self.assertEqual(gru_bound(12), 0.5)
        self.assertEqual(gru_bound(48), 0.25)
        low, high = EMBEDDING_INIT_RANGE
        self.assertEqual(store[EMBEDDING_NAME].shape, (12, 12))
        self.assertTrue(np.all((store[EMBEDDING_NAME] >= low) & (store[EMBEDDING_NAME] <= high)))
        self.assertEqual(store['global.0.W_z'].shape, (48, 12))
        self.assertEqual(store['local.1.W'].shape, (48, 48))
        for name in store.names('global.0.W') + store.names('local.0.W'):
            self.assertTrue(np.all(np.abs(store[name]) <= 0.5))
        for name in store.names('global.0.U') + store.names('global.1.') + store.names('local.1.'):
            self.assertTrue(np.all(np.abs(store[name]) <= 0.25))

    def test_untrained_states_keep_spread_and_offset(self):
        # Второй слой не должен затухать, а среднее состояние - стягиваться к 0
        dims = ModelDims(vocab_size=20, embed_dim=16, hidden_size=32, num_layers=2, heads=(HEAD,))
        store = init_params(dims, 42)
        ids = np.random.default_rng(1).integers(1, 20, size=(30, 200))
        final_h, _, _ = encoder_forward(Embedding(store[EMBEDDING_NAME]),
                                        GRUParams.from_store(store, HEAD, 2), ids)
        mean = final_h.mean(axis=0)
        spread = np.sqrt(np.mean(np.sum((final_h - mean) ** 2, axis=1)))
        self.assertGreater(np.mean(np.abs(final_h)), 0.1)
        self.assertGreater(np.linalg.norm(mean), 0.5 * spread)
        self.assertLess(np.mean(np.abs(mean) < 1e-3), 0.1)
