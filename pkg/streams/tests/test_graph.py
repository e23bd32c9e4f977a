from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase

from streams import zoo
from streams.exceptions import ArchError, GraphStateError, LabelError, NonFiniteError, ShapeError
from streams.graph import adam_step, compile_graph, cross_entropy, grad_check, relative_error, sgd_step
from streams.layers import Param, build_layer
from streams.zoo import LayerSpec

from .helpers import batch, conv_toy, dense_toy, residual_toy, tiny_minivgg, toy_desc


class LayerTests(SimpleTestCase):
    def test_conv_matches_direct_sum(self):
        spec = LayerSpec('conv', 'conv2d', ('input',), filters=2, kernel=3, padding='valid')
        layer = build_layer(spec, [(5, 5, 3)], 'float64')
        layer.init(np.random.default_rng(0))
        layer.bias.value[...] = [0.5, -0.5]
        x = np.random.default_rng(1).normal(size=(2, 5, 5, 3))
        out = layer.forward([x], training=False)
        w = layer.weight.value
        expected = np.zeros((2, 3, 3, 2))
        for n in range(2):
            for i in range(3):
                for j in range(3):
                    for f in range(2):
                        expected[n, i, j, f] = (x[n, i:i + 3, j:j + 3, :] * w[:, :, :, f]).sum() + layer.bias.value[f]
        np.testing.assert_allclose(out, expected, rtol=1e-10, atol=1e-12)

    def test_same_padding_keeps_extent_at_stride_one(self):
        spec = LayerSpec('conv', 'conv2d', ('input',), filters=3, kernel=3)
        layer = build_layer(spec, [(6, 6, 2)], 'float32')
        self.assertEqual(layer.forward([np.ones((1, 6, 6, 2), np.float32)], False).shape, (1, 6, 6, 3))

    def test_max_pool_padding_never_wins(self):
        spec = LayerSpec('pool', 'max-pool', ('input',), kernel=3, stride=2)
        layer = build_layer(spec, [(5, 5, 1)], 'float64')
        out = layer.forward([-np.ones((1, 5, 5, 1))], False)
        self.assertEqual(out.shape, (1, 3, 3, 1))
        self.assertTrue(np.all(out == -1))

    def test_avg_pool_counts_only_real_pixels(self):
        spec = LayerSpec('pool', 'avg-pool', ('input',), kernel=3, stride=2)
        layer = build_layer(spec, [(5, 5, 2)], 'float64')
        np.testing.assert_allclose(layer.forward([np.ones((1, 5, 5, 2))], False), np.ones((1, 3, 3, 2)))

    def test_capped_relu(self):
        layer = build_layer(LayerSpec('r', 'relu', ('input',), cap=6.0), [(3,)], 'float64')
        out = layer.forward([np.array([[-1.0, 3.0, 9.0]])], False)
        np.testing.assert_array_equal(out, [[0.0, 3.0, 6.0]])
        np.testing.assert_array_equal(layer.backward(np.ones((1, 3)))[0], [[0.0, 1.0, 0.0]])

    def test_batch_norm_running_statistics(self):
        layer = build_layer(LayerSpec('bn', 'batch-norm', ('input',)), [(2,)], 'float64')
        x = np.array([[1.0, 10.0], [3.0, 30.0]])
        layer.forward([x], training=True)
        np.testing.assert_allclose(layer.moving_mean.value, 0.01 * x.mean(axis=0))
        np.testing.assert_allclose(layer.moving_variance.value, 0.99 + 0.01 * x.var(axis=0))
        out = layer.forward([x], training=False)
        expected = (x - layer.moving_mean.value) / np.sqrt(layer.moving_variance.value + 1e-3)
        np.testing.assert_allclose(out, expected)

    def test_one_by_one_identity_conv(self):
        spec = LayerSpec('conv', 'conv2d', ('input',), filters=3, kernel=1)
        layer = build_layer(spec, [(4, 5, 3)], 'float64')
        layer.weight.value[0, 0] = np.eye(3)
        x = np.random.default_rng(2).normal(size=(2, 4, 5, 3))
        np.testing.assert_allclose(layer.forward([x], False), x)

    def test_softmax_of_zero_logits_is_uniform(self):
        layer = build_layer(LayerSpec('softmax', 'softmax', ('input',)), [(10,)], 'float64')
        np.testing.assert_allclose(layer.forward([np.zeros((2, 10))], False), np.full((2, 10), 0.1))

    def test_unknown_kind(self):
        with self.assertRaises(ArchError):
            build_layer(LayerSpec('x', 'lstm', ('input',)), [(3,)], 'float32')


class GraphTests(SimpleTestCase):
    def test_probabilities_sum_to_one(self):
        graph = compile_graph(conv_toy())
        inputs, _ = batch(graph.desc)
        probs = graph.forward(inputs)
        self.assertEqual(probs.shape, (4, 3))
        self.assertEqual(probs.dtype, np.float32)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_same_seed_same_weights(self):
        first = compile_graph(residual_toy(), seed=7)
        second = compile_graph(residual_toy(), seed=7)
        other = compile_graph(residual_toy(), seed=8)
        for a, b in zip(first.parameters(), second.parameters()):
            np.testing.assert_array_equal(a.value, b.value)
        self.assertFalse(np.array_equal(first.parameters()[0].value, other.parameters()[0].value))

    def test_topology_is_validated(self):
        no_softmax = toy_desc([LayerSpec('flatten', 'flatten', ('input',))])
        with self.assertRaises(ArchError):
            compile_graph(no_softmax)
        dangling = toy_desc([
            LayerSpec('flatten', 'flatten', ('input',)),
            LayerSpec('side', 'dense', ('flatten',), filters=2),
            LayerSpec('logits', 'dense', ('flatten',), filters=3),
            LayerSpec('softmax', 'softmax', ('logits',)),
        ])
        with self.assertRaisesMessage(ArchError, 'more than one output'):
            compile_graph(dangling)

    def test_input_errors_name_the_entry(self):
        graph = compile_graph(conv_toy())
        with self.assertRaisesMessage(ShapeError, "node 'input'"):
            graph.forward([np.zeros((2, 8, 8, 3))])
        bad = np.zeros((2, 7, 7, 3))
        bad[0, 0, 0, 0] = np.nan
        with self.assertRaisesMessage(NonFiniteError, "node 'input'"):
            graph.forward([bad])

    def test_stream_count_is_checked(self):
        graph = zoo.build_stnet(tiny_minivgg(input_shape=(8, 8, 3)), 3, 1)
        inputs, _ = batch(graph.desc)
        with self.assertRaises(ShapeError):
            graph.forward(inputs[:2])

    def test_backward_needs_training_forward(self):
        graph = compile_graph(dense_toy())
        inputs, labels = batch(graph.desc)
        with self.assertRaises(GraphStateError):
            graph.backward(labels)
        graph.forward(inputs, training=False)
        with self.assertRaises(GraphStateError):
            graph.backward(labels)
        graph.forward(inputs, training=True)
        graph.backward(labels)
        with self.assertRaises(GraphStateError):
            graph.backward(labels)

    def test_bad_labels(self):
        graph = compile_graph(dense_toy())
        inputs, _ = batch(graph.desc)
        graph.forward(inputs, training=True)
        with self.assertRaises(LabelError):
            graph.backward(np.array([0, 1, 2, 3]))

    def test_cross_entropy(self):
        self.assertLessEqual(cross_entropy(np.eye(3), np.arange(3)), 1e-9)
        self.assertAlmostEqual(cross_entropy(np.array([[1.0, 0.0]]), np.array([1])), -np.log(1e-12))

    def test_cross_entropy_values(self):
        self.assertAlmostEqual(cross_entropy(np.full((3, 10), 0.1), np.array([0, 4, 9])), np.log(10))
        self.assertAlmostEqual(cross_entropy(np.array([[0.7, 0.2, 0.1]]), np.array([1])), 1.609438, places=6)

    def test_sgd_momentum_recurrence(self):
        param = Param('kernel', 'dense', np.zeros(1))
        graph = SimpleNamespace(trainable_parameters=lambda: [param])
        for _ in range(2):
            param.grad[...] = 1.0
            sgd_step(graph, lr=0.1, momentum=0.9)
        np.testing.assert_allclose(param.value, [-0.29])

    def test_perturbing_one_stream_leaves_the_others(self):
        graph = zoo.build_stnet(tiny_minivgg(input_shape=(8, 8, 3)), 3, 1, seed=5)
        inputs, _ = batch(graph.desc, seed=6)
        graph.forward(inputs)
        before = [graph.activation(f's{k}/flatten').copy() for k in range(3)]
        for param in graph.stream_parameters(0):
            param.value += 0.5
        graph.forward(inputs)
        self.assertFalse(np.array_equal(graph.activation('s0/flatten'), before[0]))
        for k in (1, 2):
            np.testing.assert_array_equal(graph.activation(f's{k}/flatten'), before[k])

    def test_streams_are_decoupled(self):
        graph = zoo.build_stnet(tiny_minivgg(input_shape=(8, 8, 3)), 3, 1)
        ids = [{id(p) for p in graph.stream_parameters(k)} for k in range(3)]
        self.assertTrue(ids[0])
        self.assertFalse(ids[0] & ids[1] or ids[1] & ids[2] or ids[0] & ids[2])
        self.assertTrue(graph.assert_decoupled())

    def test_shared_streams_reuse_one_weight_set(self):
        base = tiny_minivgg(input_shape=(8, 8, 3))
        shared = zoo.build_stnet(base, 3, 1, share_weights=True)
        separate = zoo.build_stnet(base, 3, 1)
        first = shared.stream_parameters(0)
        for k in (1, 2):
            self.assertEqual([id(p) for p in shared.stream_parameters(k)], [id(p) for p in first])
        self.assertFalse(shared.assert_decoupled())
        per_stream = sum(p.value.size for p in first)
        self.assertEqual(separate.param_count() - shared.param_count(), 2 * per_stream)

    def test_running_statistics_are_not_trained(self):
        graph = compile_graph(conv_toy())
        names = {p.name for p in graph.trainable_parameters()}
        self.assertNotIn('moving_mean', names)
        self.assertNotIn('moving_variance', names)
        self.assertIn('gamma', names)

    def test_sgd_with_zero_rate_changes_nothing(self):
        graph = compile_graph(dense_toy())
        before = [p.value.copy() for p in graph.parameters()]
        inputs, labels = batch(graph.desc)
        graph.forward(inputs, training=True)
        graph.backward(labels)
        sgd_step(graph, lr=0.0, momentum=0.9)
        for value, param in zip(before, graph.parameters()):
            np.testing.assert_array_equal(value, param.value)

    def test_optimizers_reduce_loss_on_one_batch(self):
        for step, kwargs in ((sgd_step, {'lr': 0.05, 'momentum': 0.9}), (adam_step, {'lr': 0.01})):
            graph = compile_graph(dense_toy(), precision='float64', seed=3)
            inputs, labels = batch(graph.desc, n=8, seed=3)
            first = cross_entropy(graph.forward(inputs), labels)
            for _ in range(30):
                graph.forward(inputs, training=True)
                graph.backward(labels)
                step(graph, **kwargs)
            self.assertLess(cross_entropy(graph.forward(inputs), labels), first)

    def test_non_finite_gradient_aborts_step(self):
        graph = compile_graph(dense_toy())
        inputs, labels = batch(graph.desc)
        graph.forward(inputs, training=True)
        graph.backward(labels)
        graph.trainable_parameters()[0].grad[0, 0] = np.inf
        with self.assertRaises(NonFiniteError):
            sgd_step(graph, lr=0.1)


class GradientCheckTests(SimpleTestCase):
    def check(self, desc, limit, n=4, samples=100):
        graph = compile_graph(desc, precision='float64', seed=1)
        inputs, labels = batch(desc, n=n, seed=2)
        self.assertLess(grad_check(graph, inputs, labels, samples=samples), limit)

    def test_needs_float64(self):
        graph = compile_graph(dense_toy())
        inputs, labels = batch(graph.desc)
        with self.assertRaises(GraphStateError):
            grad_check(graph, inputs, labels)

    def test_dense_only(self):
        self.check(dense_toy(), 1e-7)

    def test_conv_batch_norm_max_pool(self):
        self.check(conv_toy(), 1e-5)

    def test_depthwise_residual_avg_pool(self):
        self.check(residual_toy(), 1e-5)

    def test_minivgg(self):
        self.check(zoo.minivgg_desc(), 1e-5, n=2)

    def test_three_stream_stnet(self):
        self.check(zoo.stnet_desc(tiny_minivgg(input_shape=(8, 8, 3), classes=3), 3, 1), 1e-5)

    def test_running_statistics_restored(self):
        graph = compile_graph(conv_toy(), precision='float64')
        inputs, labels = batch(graph.desc)
        before = [p.value.copy() for p in graph.parameters() if not p.trainable]
        grad_check(graph, inputs, labels, samples=5)
        after = [p.value for p in graph.parameters() if not p.trainable]
        for a, b in zip(before, after):
            np.testing.assert_array_equal(a, b)

    def test_nothing_compared_is_an_error(self):
        graph = compile_graph(dense_toy(), precision='float64')
        inputs, labels = batch(graph.desc)
        with self.assertRaisesMessage(GraphStateError, 'compared no entries'):
            grad_check(graph, inputs, labels, samples=0)

    def test_relative_error_has_no_absolute_cutoff(self):
        self.assertEqual(relative_error(2.0, 1.0), 0.5)
        self.assertAlmostEqual(relative_error(1e-12, 0.0), 1e-4)
        self.assertEqual(relative_error(0.0, 0.0), 0.0)
