import numpy as np
from django.test import SimpleTestCase

from Classifier.config import ModelConfig
from Classifier.layers import (
    bind, conv_stem, embed_tokens, fuse_streams, spatial_attention, temporal_attention,
)
from Classifier.network import model_forward, predict_labels, predict_scores
from Classifier.params import init_params, parameter_shapes
from Master.validators import ContractViolation
from Numeric import ops
from Numeric.gradcheck import finite_difference_check
from Numeric.sparsemax import sparsemax
from Numeric.tensor import Tensor


def toy_config(**overrides):
    options = dict(n_networks=6, n_windows=4, conv_channels=(2, 2), embed_dim=4,
                   n_blocks=1, n_heads=1, dropout=0.0, seed=1)
    options.update(overrides)
    return ModelConfig(**options)


def random_dfnc(rng, *lead, n):
    a = rng.normal(size=lead + (n, n))
    m = np.tanh(0.5 * (a + np.swapaxes(a, -1, -2)))
    idx = np.arange(n)
    m[..., idx, idx] = 1.0
    return m


def jittered(params, seed=0, scale=0.3):
    """Non-trivial biases, norms and position embeddings for gradient checks."""
    rng = np.random.default_rng(seed)
    updates = {}
    for name, value in params.items():
        if name.startswith('pos.') or '.b' in name or name.endswith('bias') or name.endswith('beta'):
            updates[name] = rng.normal(scale=scale, size=value.shape)
        elif name.endswith('gamma'):
            updates[name] = 1.0 + rng.normal(scale=0.1, size=value.shape)
    return params.replace(updates)


def randomised_block(config, seed=0):
    rng = np.random.default_rng(seed)
    params = init_params(config)
    updates = {name: rng.normal(scale=0.5, size=value.shape)
               for name, value in params.items() if name.startswith('block0.')}
    return params.replace(updates)


def attention_oracle(tokens, params, prefix, over_windows):
    """Index-by-index single-head attention on (W, N, d) tokens."""
    wq, bq = params[f'{prefix}.wq'], params[f'{prefix}.bq']
    wk, bk = params[f'{prefix}.wk'], params[f'{prefix}.bk']
    wv, bv = params[f'{prefix}.wv'], params[f'{prefix}.bv']
    wo, bo = params[f'{prefix}.wo'], params[f'{prefix}.bo']
    n_windows, n_networks, d = tokens.shape
    out = np.zeros_like(tokens)
    outer, inner = (n_networks, n_windows) if over_windows else (n_windows, n_networks)

    def token(o, i):
        return tokens[i, o] if over_windows else tokens[o, i]

    for o in range(outer):
        for i in range(inner):
            q = token(o, i) @ wq + bq
            logits = np.array([q @ (token(o, j) @ wk + bk) / np.sqrt(d) for j in range(inner)])
            p = sparsemax(logits)
            context = sum(p[j] * (token(o, j) @ wv + bv) for j in range(inner))
            if over_windows:
                out[i, o] = context @ wo + bo
            else:
                out[o, i] = context @ wo + bo
    return out


def weighted_sum(x, seed=0):
    weights = np.random.default_rng(seed).normal(size=x.shape)
    return ops.sum_(ops.multiply(x, weights))


class ModelConfigTests(SimpleTestCase):
    def test_heads_must_divide_embedding(self):
        with self.assertRaises(ContractViolation):
            toy_config(embed_dim=6, n_heads=4)

    def test_unknown_keys_are_rejected(self):
        with self.assertRaises(ContractViolation):
            ModelConfig.from_dict({'n_networks': 4, 'n_windows': 3, 'depth': 9})

    def test_dict_round_trip(self):
        config = toy_config(n_heads=2)
        self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)

    def test_binary_uses_one_logit(self):
        self.assertEqual(parameter_shapes(toy_config())['head.weight'], (4, 1))
        self.assertEqual(parameter_shapes(toy_config(n_classes=3))['head.weight'], (4, 3))


class InitParamsTests(SimpleTestCase):
    def test_biases_and_position_embeddings_start_at_zero(self):
        params = init_params(toy_config())
        np.testing.assert_array_equal(params['pos.spatial'], 0.0)
        np.testing.assert_array_equal(params['block0.spatial.bq'], 0.0)
        np.testing.assert_array_equal(params['block0.norm1.gamma'], 1.0)

    def test_weights_respect_the_scaled_uniform_bound(self):
        params = init_params(toy_config())
        limit = np.sqrt(6.0 / (4 + 8))
        self.assertLessEqual(np.abs(params['block0.ffn.w1']).max(), limit)
        self.assertGreater(np.abs(params['block0.ffn.w1']).max(), 0.0)

    def test_same_seed_same_params(self):
        a, b = init_params(toy_config(), seed=5), init_params(toy_config(), seed=5)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_params_are_read_only(self):
        params = init_params(toy_config())
        with self.assertRaises(ValueError):
            params['head.bias'][0] = 1.0


class ConvStemTests(SimpleTestCase):
    def test_identity_centre_kernel_reproduces_input(self):
        config = toy_config(conv_channels=(3,))
        kernel = np.zeros((3, 3, 1, 3))
        kernel[1, 1, 0, :] = 1.0
        params = init_params(config).replace({'conv0.kernel': kernel})
        window = random_dfnc(np.random.default_rng(0), n=6)
        out = conv_stem(window, bind(params), config).data
        self.assertEqual(out.shape, (6, 6, 3))
        for c in range(3):
            np.testing.assert_array_equal(out[..., c], window)

    def test_output_keeps_spatial_extent(self):
        config = toy_config(conv_channels=(3, 5))
        windows = random_dfnc(np.random.default_rng(1), 4, n=6)
        self.assertEqual(conv_stem(windows, bind(init_params(config)), config).shape, (4, 6, 6, 5))

    def test_shape_mismatch_is_rejected(self):
        config = toy_config()
        with self.assertRaises(ContractViolation):
            conv_stem(np.eye(5), bind(init_params(config)), config)

    def test_kernel_gradients_pass_finite_differences(self):
        config = toy_config(conv_channels=(2, 3))
        params = jittered(init_params(config))
        window = random_dfnc(np.random.default_rng(2), n=6)
        conv_names = [name for name in params if name.startswith('conv')]

        def f(graph, leaves):
            return ops.mean(conv_stem(window, leaves, config))

        report = finite_difference_check(f, {name: params[name] for name in conv_names})
        self.assertLess(report.max_error, 1e-4, report.errors)


class EmbedTokensTests(SimpleTestCase):
    def setUp(self):
        self.config = toy_config()
        self.rng = np.random.default_rng(3)
        self.features = self.rng.normal(size=(1, 4, 6, 6, 2))

    def test_zero_embeddings_give_pure_projection(self):
        params = init_params(self.config)
        tokens = embed_tokens(Tensor(self.features), bind(params), self.config).data
        expected = self.features.reshape(1, 4, 6, 12) @ params['embed.weight'] + params['embed.bias']
        np.testing.assert_allclose(tokens, expected, atol=1e-14)
        self.assertEqual(tokens.shape, (1, 4, 6, 4))

    def test_permuting_networks_with_spatial_rows_permutes_tokens(self):
        params = jittered(init_params(self.config))
        perm = self.rng.permutation(6)
        permuted = params.replace({'pos.spatial': params['pos.spatial'][perm]})
        base = embed_tokens(Tensor(self.features), bind(params), self.config).data
        moved = embed_tokens(Tensor(self.features[:, :, perm]), bind(permuted), self.config).data
        np.testing.assert_allclose(moved, base[:, :, perm], atol=1e-13)


class AttentionTests(SimpleTestCase):
    def test_single_network_attends_to_itself(self):
        config = toy_config(n_networks=1, n_windows=3)
        params = randomised_block(config)
        tokens = np.random.default_rng(4).normal(size=(1, 3, 1, 4))
        out, weights = spatial_attention(Tensor(tokens), bind(params), 0, config)
        np.testing.assert_array_equal(weights, np.ones((1, 3, 1, 1)))
        value = tokens @ params['block0.spatial.wv'] + params['block0.spatial.bv']
        np.testing.assert_allclose(out.data, value @ params['block0.spatial.wo'] + params['block0.spatial.bo'],
                                   atol=1e-13)

    def test_single_window_attends_to_itself(self):
        config = toy_config(n_networks=3, n_windows=1)
        params = randomised_block(config)
        tokens = np.random.default_rng(5).normal(size=(1, 1, 3, 4))
        out, weights = temporal_attention(Tensor(tokens), bind(params), 0, config)
        np.testing.assert_array_equal(weights, np.ones((1, 3, 1, 1)))
        value = tokens @ params['block0.temporal.wv'] + params['block0.temporal.bv']
        np.testing.assert_allclose(out.data, value @ params['block0.temporal.wo'] + params['block0.temporal.bo'],
                                   atol=1e-13)

    def test_zero_queries_and_keys_give_uniform_rows(self):
        config = toy_config(n_networks=3, n_windows=2)
        params = randomised_block(config)
        params = params.replace({name: np.zeros(params[name].shape) for name in
                                 ('block0.spatial.wq', 'block0.spatial.bq', 'block0.spatial.wk', 'block0.spatial.bk')})
        tokens = np.random.default_rng(6).normal(size=(1, 2, 3, 4))
        out, weights = spatial_attention(Tensor(tokens), bind(params), 0, config)
        np.testing.assert_allclose(weights, np.full((1, 2, 3, 3), 1 / 3), atol=1e-15)
        values = tokens @ params['block0.spatial.wv'] + params['block0.spatial.bv']
        pooled = values.mean(axis=2, keepdims=True) @ params['block0.spatial.wo'] + params['block0.spatial.bo']
        np.testing.assert_allclose(out.data, np.broadcast_to(pooled, out.shape), atol=1e-13)

    def test_identical_windows_give_uniform_temporal_rows(self):
        config = toy_config(n_networks=2, n_windows=3)
        params = randomised_block(config)
        token_row = np.random.default_rng(7).normal(size=(1, 1, 2, 4))
        tokens = np.repeat(token_row, 3, axis=1)
        _out, weights = temporal_attention(Tensor(tokens), bind(params), 0, config)
        np.testing.assert_allclose(weights, np.full((1, 2, 3, 3), 1 / 3), atol=1e-12)

    def test_spatial_attention_matches_scalar_oracle(self):
        config = toy_config(n_networks=3, n_windows=2)
        params = randomised_block(config, seed=8)
        tokens = np.random.default_rng(8).normal(size=(2, 3, 4))
        out, _weights = spatial_attention(Tensor(tokens[None]), bind(params), 0, config)
        expected = attention_oracle(tokens, params, 'block0.spatial', over_windows=False)
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12)

    def test_temporal_attention_matches_scalar_oracle(self):
        config = toy_config(n_networks=2, n_windows=3)
        params = randomised_block(config, seed=9)
        tokens = np.random.default_rng(9).normal(size=(3, 2, 4))
        out, _weights = temporal_attention(Tensor(tokens[None]), bind(params), 0, config)
        expected = attention_oracle(tokens, params, 'block0.temporal', over_windows=True)
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12)

    def test_spatial_weights_follow_window_permutation(self):
        config = toy_config(n_networks=4, n_windows=5)
        params = randomised_block(config, seed=10)
        tokens = np.random.default_rng(10).normal(size=(1, 5, 4, 4))
        perm = np.array([3, 0, 4, 1, 2])
        _o, base = spatial_attention(Tensor(tokens), bind(params), 0, config)
        _o, moved = spatial_attention(Tensor(tokens[:, perm]), bind(params), 0, config)
        np.testing.assert_allclose(moved, base[:, perm], atol=1e-13)

    def test_temporal_weights_follow_network_permutation(self):
        config = toy_config(n_networks=4, n_windows=5)
        params = randomised_block(config, seed=11)
        tokens = np.random.default_rng(11).normal(size=(1, 5, 4, 4))
        perm = np.array([2, 0, 3, 1])
        _o, base = temporal_attention(Tensor(tokens), bind(params), 0, config)
        _o, moved = temporal_attention(Tensor(tokens[:, :, perm]), bind(params), 0, config)
        np.testing.assert_allclose(moved, base[:, perm], atol=1e-13)

    def test_multi_head_rows_stay_on_the_simplex(self):
        config = toy_config(n_networks=5, n_windows=3, n_heads=2)
        params = randomised_block(config, seed=12)
        tokens = np.random.default_rng(12).normal(size=(2, 3, 5, 4))
        _o, weights = spatial_attention(Tensor(tokens), bind(params), 0, config)
        self.assertTrue(np.all(weights >= 0))
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-9)


class FuseStreamsTests(SimpleTestCase):
    def setUp(self):
        self.config = toy_config(n_networks=3, n_windows=2)
        rng = np.random.default_rng(13)
        self.a, self.b, self.x = (rng.normal(size=(1, 2, 3, 4)) for _ in range(3))

    def test_identity_projection_pre_norm_is_stream_plus_residual(self):
        params = init_params(self.config).replace({'block0.fuse.weight': np.eye(4)})
        trace = {}
        fuse_streams(Tensor(self.a), Tensor(np.zeros_like(self.a)), Tensor(self.x), bind(params), 0,
                     self.config, trace=trace)
        np.testing.assert_allclose(trace['pre_norm'].data, self.a + self.x, atol=1e-15)

    def test_streams_commute(self):
        weights = bind(randomised_block(self.config))
        ab = fuse_streams(Tensor(self.a), Tensor(self.b), Tensor(self.x), weights, 0, self.config).data
        ba = fuse_streams(Tensor(self.b), Tensor(self.a), Tensor(self.x), weights, 0, self.config).data
        np.testing.assert_array_equal(ab, ba)

    def test_mismatched_shapes_are_rejected(self):
        weights = bind(init_params(self.config))
        with self.assertRaises(ContractViolation):
            fuse_streams(Tensor(self.a), Tensor(self.b[:, :1]), Tensor(self.x), weights, 0, self.config)

    def test_full_block_gradients_pass_finite_differences(self):
        config = self.config
        params = jittered(randomised_block(config))
        names = [name for name in params if name.startswith('block0.')]
        theta = {name: params[name] for name in names}
        theta.update({'x': self.x})

        def f(graph, leaves):
            tokens = leaves['x']
            out_s, _ws = spatial_attention(tokens, leaves, 0, config)
            out_t, _wt = temporal_attention(tokens, leaves, 0, config)
            return weighted_sum(fuse_streams(out_s, out_t, tokens, leaves, 0, config))

        report = finite_difference_check(f, theta, floor=1e-6)
        self.assertLess(report.max_error, 1e-4, report.failing(1e-4))


class ModelForwardTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(14)

    def test_single_subject_shapes_and_simplex_rows(self):
        config = toy_config(n_blocks=2)
        dfnc = random_dfnc(self.rng, 4, n=6)
        result = model_forward(dfnc, init_params(config), config)
        self.assertEqual(result.logits.shape, ())
        self.assertTrue(np.isfinite(result.logits.data))
        self.assertEqual(result.attention.attn_s.shape, (6, 6))
        self.assertEqual(result.attention.attn_t.shape, (4, 4))
        for matrix in (result.attention.attn_s, result.attention.attn_t):
            self.assertTrue(np.all(matrix >= 0))
            np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-9)

    def test_batched_forward_matches_single_subject(self):
        config = toy_config()
        params = jittered(init_params(config))
        dfnc = random_dfnc(self.rng, 3, 4, n=6)
        batch = model_forward(dfnc, params, config).logits.data
        for i in range(3):
            single = model_forward(dfnc[i], params, config).logits.data
            self.assertAlmostEqual(float(single), float(batch[i]), delta=1e-12)

    def test_same_seed_and_input_are_bit_identical(self):
        config = toy_config(n_blocks=2)
        dfnc = random_dfnc(self.rng, 2, 4, n=6)
        first = model_forward(dfnc, init_params(config, seed=4), config)
        second = model_forward(dfnc, init_params(config, seed=4), config)
        np.testing.assert_array_equal(first.logits.data, second.logits.data)
        np.testing.assert_array_equal(first.attention.attn_s, second.attention.attn_s)

    def test_dropout_only_in_training(self):
        config = toy_config(dropout=0.5)
        params = jittered(init_params(config))
        dfnc = random_dfnc(self.rng, 2, 4, n=6)
        eval_a = model_forward(dfnc, params, config, rng=np.random.default_rng(0)).logits.data
        eval_b = model_forward(dfnc, params, config).logits.data
        np.testing.assert_array_equal(eval_a, eval_b)
        train = model_forward(dfnc, params, config, training=True, rng=np.random.default_rng(0)).logits.data
        self.assertFalse(np.array_equal(train, eval_a))

    def test_mismatched_input_is_rejected(self):
        config = toy_config()
        with self.assertRaises(ContractViolation):
            model_forward(random_dfnc(self.rng, 5, n=6), init_params(config), config)

    def test_verbose_keeps_per_block_maps(self):
        config = toy_config(n_blocks=3)
        result = model_forward(random_dfnc(self.rng, 4, n=6), init_params(config), config, verbose=True)
        self.assertEqual(len(result.attention.per_block), 3)
        self.assertEqual(len(result.traces), 3)
        mean_s = np.mean([s for s, _t in result.attention.per_block], axis=0)
        np.testing.assert_allclose(mean_s, result.attention.attn_s, atol=1e-15)

    def test_multi_class_head_gives_probabilities(self):
        config = toy_config(n_classes=3)
        dfnc = random_dfnc(self.rng, 5, 4, n=6)
        scores = predict_scores(dfnc, jittered(init_params(config)), config, batch_size=2)
        self.assertEqual(scores.shape, (5, 3))
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-12)
        self.assertEqual(predict_labels(scores, config).shape, (5,))

    def test_binary_threshold(self):
        config = toy_config(threshold=0.5)
        np.testing.assert_array_equal(predict_labels([0.2, 0.5, 0.9], config), [0, 1, 1])

    def _check_full_gradient(self, config):
        params = jittered(init_params(config), seed=config.seed)
        dfnc = random_dfnc(np.random.default_rng(15), 2, config.n_windows, n=config.n_networks)
        labels = np.array([1.0, 0.0])

        def f(graph, leaves):
            result = model_forward(dfnc, None, config, graph=graph, weights=leaves)
            return ops.bce_with_logits(result.logits, labels)

        # key biases shift every logit of a row equally, so their gradient is zero up to roundoff
        report = finite_difference_check(f, dict(params.items()), floor=1e-6)
        self.assertLess(report.max_error, 1e-4, report.failing(1e-4))
        self.assertEqual(set(report.errors), set(params.names()))

    def test_loss_gradient_passes_finite_differences(self):
        self._check_full_gradient(toy_config(n_heads=2))

    def test_softmax_switch_keeps_gradients_correct(self):
        self._check_full_gradient(toy_config(attention='softmax', n_blocks=2))
