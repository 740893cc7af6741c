import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as nps

from Master.validators import ContractViolation, NonFiniteValue
from Numeric import ops
from Numeric.gradcheck import finite_difference_check
from Numeric.sparsemax import sparsemax
from Numeric.tensor import ComputationGraph, Tensor, gradients_wrt, reverse_grad


def simplex_projection_oracle(z, iterations=200):
    """Bisection on the threshold tau with sum(max(z - tau, 0)) = 1."""
    lo, hi = z.min() - 1.0, z.max()
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if np.maximum(z - mid, 0.0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.maximum(z - 0.5 * (lo + hi), 0.0)


def away_from_support_boundary(z, margin=1e-3):
    p = sparsemax(z)
    support = p > 0
    # on the support z_i - p_i equals the threshold
    tau = np.max(np.where(support, z - p, -np.inf), axis=-1, keepdims=True)
    return np.all(np.abs(z - tau) > margin)


vectors = st.integers(min_value=2, max_value=64).flatmap(
    lambda n: nps.arrays(np.float64, n, elements=st.floats(-10, 10, allow_nan=False))
)


class SparsemaxTests(SimpleTestCase):
    def test_uniform_input_gives_uniform_output(self):
        np.testing.assert_allclose(sparsemax([1.0, 1.0, 1.0]), [1 / 3] * 3, atol=1e-15)

    def test_point_on_simplex_is_fixed(self):
        np.testing.assert_allclose(sparsemax([0.6, 0.4]), [0.6, 0.4], atol=1e-15)

    def test_dominant_entry_takes_all_mass(self):
        np.testing.assert_allclose(sparsemax([3.0, 0.0, 0.0]), [1.0, 0.0, 0.0], atol=1e-15)

    def test_empty_input_is_rejected(self):
        with self.assertRaises(ContractViolation):
            sparsemax(np.zeros(0))

    def test_matches_projection_oracle_on_random_vectors(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            z = rng.normal(scale=rng.uniform(0.1, 5.0), size=rng.integers(2, 65))
            np.testing.assert_allclose(sparsemax(z), simplex_projection_oracle(z), atol=1e-10)

    def test_rows_are_projected_independently(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(4, 5, 6))
        p = sparsemax(z)
        for index in np.ndindex(4, 5):
            np.testing.assert_allclose(p[index], sparsemax(z[index]), atol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(vectors, st.floats(-100, 100, allow_nan=False))
    def test_simplex_shift_and_order_properties(self, z, shift):
        p = sparsemax(z)
        self.assertTrue(np.all(p >= 0))
        self.assertAlmostEqual(p.sum(), 1.0, delta=1e-12)
        np.testing.assert_allclose(sparsemax(z + shift), p, atol=1e-9)
        order = np.argsort(z, kind='stable')
        self.assertTrue(np.all(np.diff(p[order]) >= -1e-12))

    @settings(max_examples=200, deadline=None)
    @given(vectors)
    def test_argmax_agrees_when_maximum_is_unique(self, z):
        if np.count_nonzero(z == z.max()) == 1:
            self.assertEqual(int(np.argmax(sparsemax(z))), int(np.argmax(z)))


class TensorTests(SimpleTestCase):
    def test_non_finite_values_are_rejected(self):
        with self.assertRaises(NonFiniteValue):
            Tensor([1.0, np.nan])
        with self.assertRaises(NonFiniteValue):
            Tensor([np.inf])

    def test_zero_extent_is_rejected(self):
        with self.assertRaises(ContractViolation):
            Tensor(np.zeros((0, 3)))

    def test_graph_is_topologically_ordered(self):
        graph = ComputationGraph()
        x = graph.leaf(2.0, 'x')
        y = ops.multiply(x, x)
        z = ops.add(y, x)
        seen = {id(x)}
        for record in graph.records:
            self.assertTrue(all(id(t) in seen for t in record.inputs))
            seen.add(id(record.output))
        self.assertIs(graph.records[-1].output, z)

    def test_duplicate_leaf_names_are_rejected(self):
        graph = ComputationGraph()
        graph.leaf(1.0, 'w')
        with self.assertRaises(ContractViolation):
            graph.leaf(2.0, 'w')


class ReverseGradTests(SimpleTestCase):
    def test_square(self):
        graph = ComputationGraph()
        x = graph.leaf(3.0, 'x')
        grads = reverse_grad(graph, ops.multiply(x, x))
        self.assertAlmostEqual(float(grads['x']), 6.0)

    def test_product(self):
        graph = ComputationGraph()
        x = graph.leaf(2.0, 'x')
        y = graph.leaf(5.0, 'y')
        grads = reverse_grad(graph, x * y)
        self.assertAlmostEqual(float(grads['x']), 5.0)
        self.assertAlmostEqual(float(grads['y']), 2.0)

    def test_unused_leaf_gets_zero_gradient(self):
        graph = ComputationGraph()
        x = graph.leaf(np.ones(3), 'x')
        graph.leaf(np.ones((2, 2)), 'unused')
        grads = reverse_grad(graph, ops.sum_(x))
        np.testing.assert_array_equal(grads['unused'], np.zeros((2, 2)))

    def test_non_scalar_output_is_rejected(self):
        graph = ComputationGraph()
        x = graph.leaf(np.ones(3), 'x')
        with self.assertRaises(ContractViolation):
            reverse_grad(graph, ops.scale(x, 2.0))

    def test_intermediate_gradients(self):
        graph = ComputationGraph()
        x = graph.leaf(np.array([1.0, -2.0]), 'x')
        h = ops.scale(x, 3.0)
        loss = ops.sum_(ops.multiply(h, h))
        (gh,) = gradients_wrt(graph, loss, [h])
        np.testing.assert_allclose(gh, 2 * h.data)

    def test_bit_identical_reruns(self):
        rng = np.random.default_rng(0)
        theta = {'a': rng.normal(size=(3, 4)), 'b': rng.normal(size=(4, 2))}

        def run():
            graph = ComputationGraph()
            a, b = graph.leaf(theta['a'], 'a'), graph.leaf(theta['b'], 'b')
            out = ops.sum_(ops.sparsemax(ops.matmul(a, b)) * np.arange(6.0).reshape(3, 2))
            return out.data.copy(), reverse_grad(graph, out)

        out1, g1 = run()
        out2, g2 = run()
        np.testing.assert_array_equal(out1, out2)
        for name in theta:
            np.testing.assert_array_equal(g1[name], g2[name])


def weighted_sum(tensor, seed=99):
    """Project an output onto fixed random weights so every gradient entry is informative."""
    weights = np.random.default_rng(seed).normal(size=tensor.shape)
    return ops.sum_(ops.multiply(tensor, weights))


class PrimitiveGradientTests(SimpleTestCase):
    tolerance = 1e-4

    def check(self, f, theta):
        report = finite_difference_check(f, theta, eps=1e-5)
        self.assertLess(report.max_error, self.tolerance, report.errors)

    def setUp(self):
        self.rng = np.random.default_rng(42)

    def test_matmul_batched(self):
        self.check(lambda g, p: weighted_sum(ops.matmul(p['a'], p['b'])),
                   {'a': self.rng.normal(size=(2, 3, 4)), 'b': self.rng.normal(size=(4, 5))})

    def test_add_and_multiply_with_broadcast(self):
        self.check(lambda g, p: weighted_sum(ops.multiply(ops.add(p['a'], p['b']), p['c'])),
                   {'a': self.rng.normal(size=(3, 4)), 'b': self.rng.normal(size=(4,)),
                    'c': self.rng.normal(size=(3, 1))})

    def test_relu_away_from_kink(self):
        x = self.rng.normal(size=(4, 5))
        x = np.where(np.abs(x) < 0.1, 0.5, x)
        self.check(lambda g, p: weighted_sum(ops.relu(p['x'])), {'x': x})

    def test_gelu(self):
        self.check(lambda g, p: weighted_sum(ops.gelu(p['x'])), {'x': self.rng.normal(size=(3, 6))})

    def test_sigmoid(self):
        self.check(lambda g, p: weighted_sum(ops.sigmoid(p['x'])), {'x': self.rng.normal(size=(6,))})

    def test_layer_norm(self):
        self.check(lambda g, p: weighted_sum(ops.layer_norm(p['x'], p['gamma'], p['beta'])),
                   {'x': self.rng.normal(size=(2, 3, 5)), 'gamma': self.rng.normal(size=5),
                    'beta': self.rng.normal(size=5)})

    def test_conv2d(self):
        self.check(lambda g, p: weighted_sum(ops.conv2d(p['x'], p['k'], p['b'])),
                   {'x': self.rng.normal(size=(2, 5, 5, 2)), 'k': self.rng.normal(size=(3, 3, 2, 3)),
                    'b': self.rng.normal(size=3)})

    def test_mean_pooling(self):
        self.check(lambda g, p: weighted_sum(ops.mean(p['x'], axis=(1, 2))),
                   {'x': self.rng.normal(size=(2, 3, 4, 5))})

    def test_softmax(self):
        self.check(lambda g, p: weighted_sum(ops.softmax(p['x'])), {'x': self.rng.normal(size=(3, 6))})

    def test_sparsemax_away_from_boundaries(self):
        for seed in range(100):
            x = np.random.default_rng(seed).normal(size=(3, 6))
            if away_from_support_boundary(x):
                break
        self.check(lambda g, p: weighted_sum(ops.sparsemax(p['x'])), {'x': x})

    def test_concatenate(self):
        self.check(lambda g, p: weighted_sum(ops.concatenate([p['a'], p['b']], axis=1)),
                   {'a': self.rng.normal(size=(2, 3)), 'b': self.rng.normal(size=(2, 4))})

    def test_reshape_and_transpose(self):
        self.check(lambda g, p: weighted_sum(ops.transpose(ops.reshape(p['x'], (3, 2, 4)), (2, 0, 1))),
                   {'x': self.rng.normal(size=(6, 4))})

    def test_bce_and_cross_entropy(self):
        self.check(lambda g, p: ops.bce_with_logits(p['z'], [1, 0, 1], pos_weight=2.0),
                   {'z': self.rng.normal(size=3)})
        self.check(lambda g, p: ops.cross_entropy(p['z'], [0, 2]), {'z': self.rng.normal(size=(2, 3))})


class FiniteDifferenceCheckTests(SimpleTestCase):
    def test_quadratic_is_exact(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 4))
        a = a @ a.T

        def f(graph, p):
            return ops.sum_(ops.multiply(ops.matmul(p['x'], a), p['x']))

        report = finite_difference_check(f, {'x': rng.normal(size=(1, 4))}, eps=1e-5)
        self.assertLess(report.max_error, 1e-7)

    def test_scaled_gradient_is_reported(self):
        x = np.array([1.0, -2.0, 0.5])

        def f(graph, p):
            return ops.sum_(ops.multiply(p['x'], p['x']))

        report = finite_difference_check(f, {'x': x}, analytic={'x': 2 * (2 * x)})
        # |2g - g| / max(|2g|, |g|) = 0.5 with the max-magnitude denominator.
        self.assertAlmostEqual(report.max_error, 0.5, places=6)

    def test_non_finite_function_value_names_the_coordinate(self):
        class Unbounded:
            data = np.array(np.inf)

        def f(graph, p):
            if abs(float(p['x'].data[1]) - 1.0) > 1e-9:
                return Unbounded()
            return ops.sum_(p['x'])

        with self.assertRaises(NonFiniteValue) as ctx:
            finite_difference_check(f, {'x': np.array([0.0, 1.0])}, analytic={'x': np.ones(2)})
        self.assertIn('x(1,)', str(ctx.exception))

    def test_step_must_be_positive(self):
        with self.assertRaises(ContractViolation):
            finite_difference_check(lambda g, p: ops.sum_(p['x']), {'x': np.ones(2)}, eps=0.0)
