from dataclasses import dataclass

import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, EmptyGroup

DEFAULT_THRESHOLD = 0.7


@dataclass(frozen=True)
class DomainSaliency:
    values: np.ndarray
    names: tuple


@dataclass(frozen=True)
class DifferenceMap:
    values: np.ndarray
    mask: np.ndarray
    raw: np.ndarray
    threshold: float

    @property
    def retained(self):
        """Normalised values with masked-out entries set to 0."""
        return np.where(self.mask, self.values, 0.0)


def domain_aggregate(matrix, partition):
    """Block means of an N x N map over the partition's domains."""
    matrix = np.asarray(getattr(matrix, 'values', matrix), dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractViolation(_("Domain aggregation needs a square map."), code='not_square')
    partition.check_covers(matrix.shape[0])
    slices = [slice(r.start, r.stop) for r in partition.ranges]
    values = np.array([[matrix[a, b].mean() for b in slices] for a in slices])
    return DomainSaliency(values=values, names=tuple(partition.names))


def _stack(maps, side):
    stack = [np.asarray(getattr(m, 'values', m), dtype=np.float64) for m in maps]
    if not stack:
        raise EmptyGroup(_("Map set %(side)s is empty."), params={'side': side})
    return np.stack(stack)


def threshold_difference_map(maps_a, maps_b, threshold=DEFAULT_THRESHOLD, names=('A', 'B')):
    """mean(A) - mean(B), normalised by its largest magnitude, keeping |value| >= threshold."""
    a = _stack(maps_a, names[0])
    b = _stack(maps_b, names[1])
    if a.shape[1:] != b.shape[1:]:
        raise ContractViolation(
            _("Map sets have extents %(a)s and %(b)s."), code='shape_mismatch',
            params={'a': a.shape[1:], 'b': b.shape[1:]},
        )
    raw = a.mean(axis=0) - b.mean(axis=0)
    peak = float(np.max(np.abs(raw)))
    values = raw / peak if peak > 0 else np.zeros_like(raw)
    mask = np.abs(values) >= threshold
    return DifferenceMap(values=values, mask=mask, raw=raw, threshold=float(threshold))


def group_mean_maps(maps, tags, groups=None):
    """Mean of per-subject (already normalised) maps for every group tag."""
    tags = np.asarray(tags)
    if groups is None:
        groups = list(dict.fromkeys(tags.tolist()))
    means = {}
    for group in groups:
        members = [m for m, tag in zip(maps, tags) if tag == group]
        means[group] = _stack(members, group).mean(axis=0)
    return means
