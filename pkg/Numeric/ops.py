"""Differentiable primitives.

Every primitive computes its forward value with numpy and, when its inputs
live on a graph, appends a record whose ``backward`` maps the output
gradient to one gradient per input. Tensors without a graph run forward
only, which is how inference avoids building a tape.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation
from Numeric.sparsemax import sparsemax as _sparsemax
from Numeric.sparsemax import sparsemax_backward, softmax as _softmax, softmax_backward
from Numeric.tensor import Tensor, as_tensor, ensure_same_graph

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _emit(op, inputs, out, backward, saved=None):
    graph = ensure_same_graph(*inputs)
    if graph is None:
        return Tensor(out, copy=False)
    return graph.record(op, inputs, out, backward, saved)


def _wrap(*values):
    graph = ensure_same_graph(*values)
    return [as_tensor(v, graph) for v in values]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = _wrap(a, b)
    out = a.data + b.data
    return _emit('add', (a, b), out,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _wrap(a, b)
    out = a.data - b.data
    return _emit('sub', (a, b), out,
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def multiply(a, b):
    a, b = _wrap(a, b)
    out = a.data * b.data
    return _emit('multiply', (a, b), out,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, factor):
    (a,) = _wrap(a)
    factor = float(factor)
    return _emit('scale', (a,), a.data * factor, lambda g: (g * factor,))


def matmul(a, b):
    """Batched matrix product; a 2-D right operand is shared across the batch."""
    a, b = _wrap(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractViolation(
            _("matmul shapes %(a)s and %(b)s are incompatible."),
            code='shape_mismatch', params={'a': a.shape, 'b': b.shape},
        )
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit('matmul', (a, b), out, backward)


def relu(x):
    (x,) = _wrap(x)
    mask = x.data > 0
    return _emit('relu', (x,), np.where(mask, x.data, 0.0), lambda g: (np.where(mask, g, 0.0),))


def gelu(x):
    """Exact GELU, x * Phi(x)."""
    (x,) = _wrap(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data ** 2)
    return _emit('gelu', (x,), x.data * cdf, lambda g: (g * (cdf + x.data * pdf),))


def sigmoid(x):
    (x,) = _wrap(x)
    s = expit(x.data)
    return _emit('sigmoid', (x,), s, lambda g: (g * s * (1.0 - s),))


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale by gamma and shift by beta."""
    x, gamma, beta = _wrap(x, gamma, beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        dxhat = g * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _emit('layer_norm', (x, gamma, beta), out, backward)


def conv2d(x, kernel, bias):
    """Same-padded 2-D convolution, channels last.

    x: (M, H, W, C_in), kernel: (k, k, C_in, C_out) with k odd, bias: (C_out,).
    """
    x, kernel, bias = _wrap(x, kernel, bias)
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1] \
            or kernel.shape[0] % 2 == 0 or kernel.shape[2] != x.shape[3]:
        raise ContractViolation(
            _("conv2d input %(x)s and kernel %(k)s are incompatible."),
            code='shape_mismatch', params={'x': x.shape, 'k': kernel.shape},
        )
    k = kernel.shape[0]
    pad = k // 2
    _m, height, width, _c = x.shape
    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    # patches[m, h, w, c, i, j] = padded[m, h + i, w + j, c]
    patches = sliding_window_view(padded, (k, k), axis=(1, 2))
    out = np.tensordot(patches, kernel.data, axes=([3, 4, 5], [2, 0, 1])) + bias.data

    def backward(g):
        gk = np.tensordot(patches, g, axes=([0, 1, 2], [0, 1, 2]))
        gk = np.transpose(gk, (1, 2, 0, 3))
        gb = g.sum(axis=(0, 1, 2))
        gpad = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                gpad[:, i:i + height, j:j + width, :] += g @ kernel.data[i, j].T
        gx = gpad[:, pad:pad + height, pad:pad + width, :]
        return gx, gk, gb

    return _emit('conv2d', (x, kernel, bias), out, backward)


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x, axis=None):
    (x,) = _wrap(x)
    axes = _axes(axis, x.ndim)
    out = x.data.sum(axis=axes)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape).copy(),)

    return _emit('sum', (x,), out, backward)


def mean(x, axis=None):
    """Mean pooling over ``axis`` (all axes when None)."""
    (x,) = _wrap(x)
    axes = _axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes) / count, x.shape).copy(),)

    return _emit('mean', (x,), out, backward)


def softmax(x):
    (x,) = _wrap(x)
    p = _softmax(x.data, axis=-1)
    return _emit('softmax', (x,), p, lambda g: (softmax_backward(p, g, axis=-1),))


def sparsemax(x):
    (x,) = _wrap(x)
    p = _sparsemax(x.data, axis=-1)
    return _emit('sparsemax', (x,), p, lambda g: (sparsemax_backward(p, g, axis=-1),),
                 saved={'support': p > 0})


NORMALIZERS = {'sparsemax': sparsemax, 'softmax': softmax}


def concatenate(tensors, axis=-1):
    tensors = _wrap(*tensors)
    axis = axis % tensors[0].ndim
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _emit('concatenate', tuple(tensors), out, backward)


def reshape(x, shape):
    (x,) = _wrap(x)
    out = x.data.reshape(shape)
    return _emit('reshape', (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    (x,) = _wrap(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit('transpose', (x,), np.transpose(x.data, axes),
                 lambda g: (np.transpose(g, inverse),))


def bce_with_logits(logits, labels, pos_weight=1.0):
    """Mean binary cross-entropy on raw logits.

    Uses max(z, 0) - z*y + log(1 + exp(-|z|)); the gradient is sigmoid(z) - y
    per sample, scaled by ``pos_weight`` for positive samples.
    """
    (logits,) = _wrap(logits)
    z = logits.data
    y = np.asarray(labels, dtype=np.float64).reshape(z.shape)
    if not np.all((y == 0) | (y == 1)):
        raise ContractViolation(_("Binary labels must be 0 or 1."), code='bad_label')
    weights = np.where(y == 1, float(pos_weight), 1.0)
    per_sample = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    out = np.asarray(np.sum(weights * per_sample) / n)

    def backward(g):
        return (g * weights * (expit(z) - y) / n,)

    return _emit('bce_with_logits', (logits,), out, backward)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy for (B, C) logits and integer labels."""
    (logits,) = _wrap(logits)
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if z.ndim != 2 or labels.shape[0] != z.shape[0] or np.any(labels < 0) or np.any(labels >= z.shape[1]):
        raise ContractViolation(
            _("cross_entropy needs (B, C) logits and labels in [0, C)."), code='bad_label',
        )
    p = _softmax(z, axis=-1)
    rows = np.arange(z.shape[0])
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1))
    out = np.asarray(np.mean(log_norm - shifted[rows, labels]))

    def backward(g):
        grad = p.copy()
        grad[rows, labels] -= 1.0
        return (g * grad / z.shape[0],)

    return _emit('cross_entropy', (logits,), out, backward)
