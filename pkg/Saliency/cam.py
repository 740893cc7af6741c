"""Class activation maps over the convolutional stem.

LayerCAM weights every activation by the positive part of its own gradient;
Grad-CAM (the comparison method) weights whole channels by their mean
gradient. Both maps are averaged over windows, symmetrised and
max-normalised to [0, 1].
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from django.utils.translation import gettext_lazy as _

from Classifier.network import as_batch, model_forward, predict_labels
from Master.validators import ContractViolation
from Numeric import ops
from Numeric.tensor import ComputationGraph, gradients_wrt

logger = logging.getLogger(__name__)

METHODS = ('layercam', 'gradcam')


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    all_zero: bool = False
    method: str = 'layercam'
    target: int = 1


def layercam_raw(activations, gradients):
    """ReLU(sum_c ReLU(grad) * act), averaged over windows.

    activations, gradients: (W, H, H', c) -> (H, H').
    """
    weighted = np.maximum(gradients, 0.0) * activations
    return np.maximum(weighted.sum(axis=-1), 0.0).mean(axis=0)


def gradcam_raw(activations, gradients):
    """ReLU(sum_c mean(grad_c) * act_c) per window, averaged over windows."""
    alpha = gradients.mean(axis=(1, 2), keepdims=True)
    return np.maximum((alpha * activations).sum(axis=-1), 0.0).mean(axis=0)


RAW_MAPS = {'layercam': layercam_raw, 'gradcam': gradcam_raw}


def finalise_map(raw, n, method='layercam', target=1):
    """Resize to (n, n) bilinearly if needed, symmetrise and max-normalise."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (n, n):
        raw = ndimage.zoom(raw, (n / raw.shape[0], n / raw.shape[1]), order=1)
        raw = np.maximum(raw, 0.0)
    values = 0.5 * (raw + raw.T)
    peak = float(values.max())
    if peak <= 0.0:
        return SaliencyMap(values=np.zeros((n, n)), all_zero=True, method=method, target=target)
    return SaliencyMap(values=values / peak, method=method, target=target)


def _target_score(logits, targets, config):
    """Sum over subjects of each subject's target-class score (a scalar Tensor)."""
    if config.is_binary:
        signs = np.where(np.asarray(targets) == 1, 1.0, -1.0)
        return ops.sum_(ops.multiply(logits, signs))
    onehot = np.zeros(logits.shape)
    onehot[np.arange(logits.shape[0]), targets] = 1.0
    return ops.sum_(ops.multiply(logits, onehot))


def stem_gradients(params, config, data, targets=None, layer=-1):
    """Activations and target-score gradients of one stem layer for a batch.

    Returns (activations, gradients, targets) with activations and gradients
    shaped (B, W, N, N, c). ``targets`` defaults to the predicted classes.
    """
    data, _single = as_batch(data, config)
    n_layers = len(config.conv_channels)
    if not -n_layers <= layer < n_layers:
        raise ContractViolation(
            _("The stem has %(n)s layers; layer %(layer)s does not exist."),
            code='bad_layer', params={'n': n_layers, 'layer': layer},
        )
    graph = ComputationGraph()
    result = model_forward(data, params, config, graph=graph)
    if targets is None:
        targets = predict_labels(result.scores, config)
    targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (data.shape[0],))
    score = _target_score(result.logits, targets, config)
    activation = result.stem_activations[layer]
    (gradient,) = gradients_wrt(graph, score, [activation])
    shape = data.shape[:2] + activation.shape[1:]
    return activation.data.reshape(shape), np.asarray(gradient).reshape(shape), targets


def subject_saliency(params, config, data, method='layercam', targets=None, layer=-1, batch_size=16):
    """One SaliencyMap per subject, computed in batches."""
    if method not in RAW_MAPS:
        raise ContractViolation(_("Unknown CAM method %(m)s."), code='bad_method', params={'m': method})
    data, _single = as_batch(data, config)
    if targets is not None:
        targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (data.shape[0],))
    maps = []
    for start in range(0, data.shape[0], batch_size):
        chunk_targets = None if targets is None else targets[start:start + batch_size]
        acts, grads, used = stem_gradients(params, config, data[start:start + batch_size], chunk_targets, layer)
        for a, g, t in zip(acts, grads, used):
            cam = finalise_map(RAW_MAPS[method](a, g), config.n_networks, method, int(t))
            if cam.all_zero:
                logger.warning("%s map is all zero for a subject (target class %d)", method, int(t))
            maps.append(cam)
    return maps


def layercam(params, config, dfnc, layer=-1, target=None):
    """LayerCAM for a single subject."""
    return subject_saliency(params, config, dfnc, 'layercam', target, layer)[0]


def gradcam(params, config, dfnc, layer=-1, target=None):
    return subject_saliency(params, config, dfnc, 'gradcam', target, layer)[0]


def random_map(n, seed):
    """Symmetric uniform-random saliency, the chance-level baseline."""
    values = np.random.default_rng(seed).random((n, n))
    return SaliencyMap(values=0.5 * (values + values.T), method='random')
