from dataclasses import dataclass

import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.seed_generator import rng_for
from Master.validators import StratificationError, require


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    seed: int

    @property
    def k(self):
        return len(self.folds)

    @property
    def n_subjects(self):
        return int(sum(len(f) for f in self.folds))

    def split(self, fold):
        """(train indices, validation indices) for ``fold``."""
        val = np.asarray(self.folds[fold])
        train = np.sort(np.concatenate([self.folds[i] for i in range(self.k) if i != fold]))
        return train, val

    def to_dict(self):
        return {'seed': self.seed, 'folds': [[int(i) for i in f] for f in self.folds]}

    @classmethod
    def from_dict(cls, data):
        return cls(folds=tuple(np.asarray(f, dtype=np.int64) for f in data['folds']), seed=int(data['seed']))


def stratified_kfold(labels, k=5, seed=0):
    """Deal each class's shuffled members round-robin over ``k`` folds.

    The dealing position carries over from one class to the next so fold
    sizes stay balanced overall; per class the fold counts differ by at most 1.
    """
    labels = np.asarray(labels)
    require(k >= 2, _("k must be at least 2."), code='bad_k')
    classes, counts = np.unique(labels, return_counts=True)
    for cls, count in zip(classes, counts):
        if count < k:
            raise StratificationError(
                _("Class %(cls)s has %(count)s members, fewer than k=%(k)s."),
                params={'cls': cls.item() if hasattr(cls, 'item') else cls, 'count': int(count), 'k': k},
            )
    rng = rng_for(seed, 'folds')
    buckets = [[] for _i in range(k)]
    start = 0
    for cls in classes:
        members = rng.permutation(np.flatnonzero(labels == cls))
        for j, index in enumerate(members):
            buckets[(start + j) % k].append(int(index))
        start = (start + len(members)) % k
    return FoldPlan(folds=tuple(np.sort(np.asarray(b, dtype=np.int64)) for b in buckets), seed=int(seed))
