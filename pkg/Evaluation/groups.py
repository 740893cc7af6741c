import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from django.utils.translation import gettext_lazy as _

from Classifier.network import predict_scores
from Master.validators import ContractViolation, EmptyGroup

logger = logging.getLogger(__name__)


@dataclass
class GroupScoreReport:
    means: dict
    sizes: dict
    order: list = field(default_factory=list)

    def to_frame(self):
        return pd.DataFrame({
            'group': self.order,
            'n': [self.sizes[g] for g in self.order],
            'score': [self.means[g] for g in self.order],
        })

    def is_ordered(self, groups):
        """True when the mean scores strictly increase along ``groups``."""
        values = [self.means[g] for g in groups]
        return all(x < y for x, y in zip(values, values[1:]))


def mean_scores_by_group(scores, tags, groups=None):
    """Mean positive-class score per group tag, in the order of ``groups``."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    tags = np.asarray(tags).reshape(-1)
    if scores.shape != tags.shape:
        raise ContractViolation(
            _("%(n)s scores but %(m)s group tags."), code='length_mismatch',
            params={'n': scores.size, 'm': tags.size},
        )
    if np.any((scores < 0) | (scores > 1)):
        raise ContractViolation(_("Scores must lie in [0, 1]."), code='bad_score')
    if groups is None:
        groups = list(dict.fromkeys(tags.tolist()))
    means, sizes = {}, {}
    for group in groups:
        mask = tags == group
        if not mask.any():
            raise EmptyGroup(_("Group %(group)s has no subjects."), params={'group': group})
        means[group] = float(scores[mask].mean())
        sizes[group] = int(mask.sum())
    return GroupScoreReport(means=means, sizes=sizes, order=list(groups))


def group_mean_scores(params, config, dfnc, tags, groups=None, batch_size=32):
    """Run the model forward and average its sigmoid scores per group."""
    if not config.is_binary:
        raise ContractViolation(_("Group mean scores need a binary model."), code='not_binary')
    scores = predict_scores(dfnc, params, config, batch_size=batch_size)
    report = mean_scores_by_group(scores, tags, groups)
    logger.info("Group mean scores: %s",
                ", ".join(f"{g}={report.means[g]:.3f} (n={report.sizes[g]})" for g in report.order))
    return report
