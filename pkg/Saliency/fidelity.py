"""Masking fidelity: how much the target score drops when the most salient
connectivity entries are removed."""
import logging
from dataclasses import dataclass

import numpy as np
from django.utils.translation import gettext_lazy as _

from Classifier.network import as_batch, model_forward
from Master.seed_generator import derive_seed
from Master.validators import ContractViolation, require_shape
from Saliency.cam import random_map

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.05, 0.1, 0.2)
RANDOM_SEEDS = 20


@dataclass(frozen=True)
class FidelityResult:
    mean_drop: float
    drops: tuple
    fractions: tuple
    base_score: float


def target_probability(params, config, data, target):
    """Probability the model assigns to class ``target`` for every subject."""
    scores = model_forward(data, params, config).scores
    if config.is_binary:
        return scores if target == 1 else 1.0 - scores
    return scores[..., target]


def top_entries(saliency, fraction):
    """Upper-triangle (row, col) pairs of the top ``fraction`` salient entries.

    Ties keep row-major order.
    """
    values = saliency.values if hasattr(saliency, 'values') else np.asarray(saliency)
    n = values.shape[0]
    rows, cols = np.triu_indices(n, k=1)
    count = int(np.floor(fraction * rows.size + 1e-9))
    order = np.argsort(-values[rows, cols], kind='stable')[:count]
    return rows[order], cols[order]


def mask_entries(data, rows, cols):
    """Zero the given entries and their mirrors in every window."""
    masked = np.array(data, dtype=np.float64, copy=True)
    masked[..., rows, cols] = 0.0
    masked[..., cols, rows] = 0.0
    return masked


def confidence_fidelity(params, config, dfnc, saliency, fractions=DEFAULT_FRACTIONS, target=None):
    """Mean drop of the target-class probability over the masking fractions.

    ``target`` defaults to the class the saliency map was computed for.
    """
    if target is None:
        target = getattr(saliency, 'target', 1)
    data, _single = as_batch(dfnc, config)
    values = saliency.values if hasattr(saliency, 'values') else np.asarray(saliency)
    require_shape(values, (config.n_networks, config.n_networks), "saliency")
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise ContractViolation(
                _("Masking fraction %(f)s lies outside (0, 1]."), code='bad_fraction', params={'f': fraction},
            )
    base = float(target_probability(params, config, data, target).mean())
    drops = []
    for fraction in fractions:
        rows, cols = top_entries(values, fraction)
        if rows.size == 0:
            drops.append(0.0)
            continue
        masked = float(target_probability(params, config, mask_entries(data, rows, cols), target).mean())
        drops.append(base - masked)
    return FidelityResult(mean_drop=float(np.mean(drops)), drops=tuple(drops),
                          fractions=tuple(fractions), base_score=base)


def random_fidelity(params, config, dfnc, fractions=DEFAULT_FRACTIONS, targets=1, seed=0, n_seeds=RANDOM_SEEDS):
    """Fidelity of a random map, averaged over ``n_seeds`` seeds.

    ``targets`` is one class for the whole batch or one class per subject; each
    subject is scored on its own target, as its CAM maps are.
    """
    data, _single = as_batch(dfnc, config)
    targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (data.shape[0],))
    classes = np.unique(targets)
    drops = []
    for i in range(n_seeds):
        saliency = random_map(config.n_networks, derive_seed(seed, 'random-map', i))
        drop = 0.0
        for target in classes:
            members = targets == target
            result = confidence_fidelity(params, config, data[members], saliency, fractions, int(target))
            drop += result.mean_drop * members.sum() / targets.size
        drops.append(drop)
    return float(np.mean(drops))
