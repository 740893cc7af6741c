"""Sparse normalisation onto the probability simplex.

sparsemax(z) is the Euclidean projection of z onto the simplex
{p >= 0, sum(p) = 1}. Unlike softmax it assigns exact zeros to low scores.
"""
import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, require_finite


def sparsemax(z, axis=-1):
    """Project every vector along ``axis`` onto the probability simplex."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[axis] == 0:
        raise ContractViolation(_("sparsemax needs a non-empty vector."), code='empty_input')
    require_finite(z, "sparsemax input")

    z = np.moveaxis(z, axis, -1)
    n = z.shape[-1]
    if n == 1:
        return np.moveaxis(np.ones_like(z), -1, axis)
    z_sorted = -np.sort(-z, axis=-1)
    cssv = np.cumsum(z_sorted, axis=-1) - 1.0
    ind = np.arange(1, n + 1, dtype=np.float64)
    cond = z_sorted - cssv / ind > 0
    # cond is True for a prefix of the sorted entries; its length is the support size.
    rho = np.count_nonzero(cond, axis=-1)
    tau = np.take_along_axis(cssv, rho[..., None] - 1, axis=-1) / rho[..., None]
    p = np.maximum(z - tau, 0.0)
    return np.moveaxis(p, -1, axis)


def sparsemax_backward(p, grad_output, axis=-1):
    """Generalised Jacobian-vector product using the support found in the forward pass."""
    p = np.moveaxis(np.asarray(p), axis, -1)
    g = np.moveaxis(np.asarray(grad_output), axis, -1)
    support = p > 0
    n_support = np.count_nonzero(support, axis=-1)[..., None]
    g_mean = np.sum(np.where(support, g, 0.0), axis=-1, keepdims=True) / n_support
    grad_input = np.where(support, g - g_mean, 0.0)
    return np.moveaxis(grad_input, -1, axis)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(p, grad_output, axis=-1):
    dot = np.sum(grad_output * p, axis=axis, keepdims=True)
    return p * (grad_output - dot)
