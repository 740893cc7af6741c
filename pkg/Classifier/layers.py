"""Building blocks of the classifier.

Every layer takes ``weights``, a mapping from parameter name to Tensor
(graph leaves while training, plain tensors at inference), so the same code
path serves forward-only evaluation and reverse-mode differentiation.
Token tensors are laid out as (batch, windows, networks, dim).
"""
import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, require_shape
from Numeric import ops
from Numeric.tensor import Tensor


def bind(params, graph=None):
    """Expose ``params`` as Tensors, registering them as leaves when a graph is given."""
    if graph is None:
        return {name: Tensor(value, name=name, copy=False) for name, value in params.items()}
    return {name: graph.leaf(value, name) for name, value in params.items()}


def dropout(x, rate, rng):
    """Inverted dropout with a constant mask; identity when ``rng`` is None."""
    if rng is None or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ops.multiply(x, keep)


def conv_stem(windows, weights, config, activations=None):
    """Stack of same-padded convolutions with GELU between layers.

    windows: (..., N, N) connectivity matrices; returns (..., N, N, c).
    When ``activations`` is a list, the output of every layer is appended to
    it (post-GELU for inner layers).
    """
    n = config.n_networks
    data = windows.data if isinstance(windows, Tensor) else np.asarray(windows, dtype=np.float64)
    if data.ndim < 2 or data.shape[-2:] != (n, n):
        raise ContractViolation(
            _("conv stem expects (..., %(n)s, %(n)s) matrices, got %(shape)s."),
            code='shape_mismatch', params={'n': n, 'shape': data.shape},
        )
    lead = data.shape[:-2]
    x = ops.reshape(windows if isinstance(windows, Tensor) else Tensor(data, copy=False),
                    (-1, n, n, 1))
    last = len(config.conv_channels) - 1
    for i in range(len(config.conv_channels)):
        x = ops.conv2d(x, weights[f'conv{i}.kernel'], weights[f'conv{i}.bias'])
        if i < last:
            x = ops.gelu(x)
        if activations is not None:
            activations.append(x)
    return ops.reshape(x, lead + (n, n, config.stem_channels))


def embed_tokens(features, weights, config):
    """Project each network's feature row to d and add position embeddings.

    features: (B, W, N, N, c) -> tokens (B, W, N, d).
    """
    n, c = config.n_networks, config.stem_channels
    if features.ndim != 5 or features.shape[2:] != (n, n, c) or features.shape[1] != config.n_windows:
        raise ContractViolation(
            _("Stem features of shape %(shape)s do not match the configuration."),
            code='shape_mismatch', params={'shape': features.shape},
        )
    batch, n_windows = features.shape[:2]
    rows = ops.reshape(features, (batch, n_windows, n, n * c))
    tokens = ops.add(ops.matmul(rows, weights['embed.weight']), weights['embed.bias'])
    tokens = ops.add(tokens, weights['pos.spatial'])
    temporal = ops.reshape(weights['pos.temporal'], (n_windows, 1, config.embed_dim))
    return ops.add(tokens, temporal)


def _split_heads(x, n_heads):
    b, s, length, d = x.shape
    x = ops.reshape(x, (b, s, length, n_heads, d // n_heads))
    return ops.transpose(x, (0, 1, 3, 2, 4))


def _merge_heads(x):
    b, s, h, length, dh = x.shape
    x = ops.transpose(x, (0, 1, 3, 2, 4))
    return ops.reshape(x, (b, s, length, h * dh))


def attend(tokens, weights, prefix, config):
    """Self-attention along axis 2 of (B, S, L, d) tokens, independently for every (b, s).

    Returns the projected output (B, S, L, d) and the head-averaged weights (B, S, L, L).
    """
    normalise = ops.NORMALIZERS[config.attention]
    h = config.n_heads

    def project(name):
        return ops.add(ops.matmul(tokens, weights[f'{prefix}.w{name}']), weights[f'{prefix}.b{name}'])

    q = _split_heads(project('q'), h)
    k = _split_heads(project('k'), h)
    v = _split_heads(project('v'), h)
    logits = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 2, 4, 3))), 1.0 / np.sqrt(config.head_dim))
    attention = normalise(logits)
    context = _merge_heads(ops.matmul(attention, v))
    out = ops.add(ops.matmul(context, weights[f'{prefix}.wo']), weights[f'{prefix}.bo'])
    return out, attention.data.mean(axis=2)


def _check_tokens(tokens, config):
    require_shape(tokens.data, (None, None, None, config.embed_dim), "tokens")


def spatial_attention(tokens, weights, block, config):
    """Attention over the N network tokens inside each window.

    Returns outputs (B, W, N, d) and per-window weights (B, W, N, N).
    """
    _check_tokens(tokens, config)
    return attend(tokens, weights, f'block{block}.spatial', config)


def temporal_attention(tokens, weights, block, config):
    """Attention over the W window tokens of each network.

    Returns outputs (B, W, N, d) and per-network weights (B, N, W, W).
    """
    _check_tokens(tokens, config)
    swapped = ops.transpose(tokens, (0, 2, 1, 3))
    out, attention = attend(swapped, weights, f'block{block}.temporal', config)
    return ops.transpose(out, (0, 2, 1, 3)), attention


def fuse_streams(out_s, out_t, tokens_in, weights, block, config, rng=None, trace=None):
    """Sum the streams, project, add the residual and normalise, then a feed-forward sublayer."""
    if not (out_s.shape == out_t.shape == tokens_in.shape):
        raise ContractViolation(
            _("Stream shapes %(s)s, %(t)s and residual %(x)s differ."), code='shape_mismatch',
            params={'s': out_s.shape, 't': out_t.shape, 'x': tokens_in.shape},
        )
    p = f'block{block}'
    mixed = ops.add(ops.matmul(ops.add(out_s, out_t), weights[f'{p}.fuse.weight']), weights[f'{p}.fuse.bias'])
    pre_norm = ops.add(tokens_in, dropout(mixed, config.dropout, rng))
    if trace is not None:
        trace['pre_norm'] = pre_norm
    hidden = ops.layer_norm(pre_norm, weights[f'{p}.norm1.gamma'], weights[f'{p}.norm1.beta'])
    ff = ops.gelu(ops.add(ops.matmul(hidden, weights[f'{p}.ffn.w1']), weights[f'{p}.ffn.b1']))
    ff = ops.add(ops.matmul(ff, weights[f'{p}.ffn.w2']), weights[f'{p}.ffn.b2'])
    return ops.layer_norm(ops.add(hidden, dropout(ff, config.dropout, rng)),
                          weights[f'{p}.norm2.gamma'], weights[f'{p}.norm2.beta'])
