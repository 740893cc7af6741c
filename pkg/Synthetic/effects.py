"""Checks that a synthetic cohort carries the effect it was built with."""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from django.utils.translation import gettext_lazy as _

from Connectivity.windowing import static_correlation
from Master.seed_generator import rng_for
from Master.validators import EmptyGroup, require

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EffectTable:
    """Positive minus negative group mean of static FNC per domain block."""

    effects: np.ndarray
    standard_errors: np.ndarray
    names: tuple

    def largest_block(self):
        i, j = np.unravel_index(np.argmax(np.abs(self.effects)), self.effects.shape)
        return self.names[i], self.names[j]

    def effect(self, a, b):
        return float(self.effects[self.names.index(a), self.names.index(b)])

    def to_frame(self):
        return pd.DataFrame(self.effects, index=list(self.names), columns=list(self.names))


def block_features(fnc, partition):
    """Per-subject mean static correlation of every domain block, (S, D, D).

    Diagonal blocks average their off-diagonal entries only.
    """
    fnc = np.asarray(fnc, dtype=np.float64)
    partition.check_covers(fnc.shape[-1])
    ranges = partition.ranges
    d = partition.n_domains
    features = np.empty(fnc.shape[:-2] + (d, d))
    for i, rows in enumerate(ranges):
        for j, cols in enumerate(ranges):
            block = fnc[..., rows.start:rows.stop, cols.start:cols.stop]
            if i == j:
                size = len(rows)
                if size == 1:
                    features[..., i, j] = 1.0
                    continue
                off = ~np.eye(size, dtype=bool)
                features[..., i, j] = block[..., off].mean(axis=-1)
            else:
                features[..., i, j] = block.mean(axis=(-2, -1))
    return features


def cohort_static_fnc(cohort):
    return np.stack([static_correlation(s.timecourse.values) for s in cohort.subjects])


def _split(labels):
    labels = np.asarray(labels)
    positive, negative = labels == 1, labels == 0
    if not positive.any():
        raise EmptyGroup(_("Group %(name)s has no subjects."), params={'name': 'positive'})
    if not negative.any():
        raise EmptyGroup(_("Group %(name)s has no subjects."), params={'name': 'negative'})
    return positive, negative


def verify_planted_effect(cohort, partition=None):
    """Difference of group-mean static FNC for every domain block, with standard errors."""
    partition = partition or cohort.config.partition
    require(len(cohort) > 0, _("The cohort is empty."), code='empty_cohort')
    features = block_features(cohort_static_fnc(cohort), partition)
    positive, negative = _split(cohort.labels)
    a, b = features[positive], features[negative]
    effects = a.mean(axis=0) - b.mean(axis=0)
    variance = np.zeros_like(effects)
    if a.shape[0] > 1:
        variance = variance + a.var(axis=0, ddof=1) / a.shape[0]
    if b.shape[0] > 1:
        variance = variance + b.var(axis=0, ddof=1) / b.shape[0]
    table = EffectTable(effects=effects, standard_errors=np.sqrt(variance), names=tuple(partition.names))
    first, second = table.largest_block()
    logger.info("Largest planted block effect %s-%s: %.3f", first, second, table.effect(first, second))
    return table


def subgroup_effects(cohort, block, partition=None):
    """Mean block feature of each positive subgroup minus the negative group mean."""
    partition = partition or cohort.config.partition
    features = block_features(cohort_static_fnc(cohort), partition)
    i, j = partition.names.index(block[0]), partition.names.index(block[1])
    values = features[:, i, j]
    tags = np.array(cohort.tags)
    labels = cohort.labels
    _positive, negative = _split(labels)
    baseline = values[negative].mean()
    result = {}
    for tag in dict.fromkeys(tags[labels == 1].tolist()):
        result[tag] = float(values[(tags == tag) & (labels == 1)].mean() - baseline)
    return result


def permutation_test(features, labels, n_permutations=1000, seed=0):
    """Two-sided label-permutation p-value per domain block.

    features: (S, D, D) block features; returns (D, D) p-values computed as
    (1 + #{|permuted| >= |observed|}) / (1 + n_permutations).
    """
    labels = np.asarray(labels)
    positive, _negative = _split(labels)
    features = np.asarray(features, dtype=np.float64)

    def difference(mask):
        return features[mask].mean(axis=0) - features[~mask].mean(axis=0)

    observed = np.abs(difference(positive))
    rng = rng_for(seed, 'permutation')
    exceed = np.zeros_like(observed)
    for _i in range(n_permutations):
        permuted = rng.permutation(positive)
        exceed += np.abs(difference(permuted)) >= observed - 1e-12
    return (1.0 + exceed) / (1.0 + n_permutations)
