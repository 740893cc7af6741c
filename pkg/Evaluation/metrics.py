"""Confusion counts and the percentage metrics reported per fold."""
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, require

METRIC_FIELDS = ('acc', 'f1', 'precision', 'spec', 'sens')


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self):
        return self.tp + self.fn

    @property
    def negatives(self):
        return self.tn + self.fp


@dataclass(frozen=True)
class MetricsRecord:
    """Percentages in [0, 100], rounded to 2 decimals."""

    acc: float
    f1: float
    precision: float
    spec: float
    sens: float
    balanced_acc: float = 0.0

    def as_row(self):
        return [getattr(self, name) for name in METRIC_FIELDS]

    def to_dict(self):
        return asdict(self)


def _binary(values, what):
    values = np.asarray(values).reshape(-1)
    if not np.all((values == 0) | (values == 1)):
        raise ContractViolation(_("%(what)s must be 0 or 1."), code='not_binary', params={'what': what})
    return values.astype(np.int64)


def confusion_counts(labels, predictions):
    labels = _binary(labels, "labels")
    predictions = _binary(predictions, "predictions")
    if labels.shape != predictions.shape:
        raise ContractViolation(
            _("%(n)s labels but %(m)s predictions."), code='length_mismatch',
            params={'n': labels.size, 'm': predictions.size},
        )
    return ConfusionCounts(
        tp=int(np.sum((labels == 1) & (predictions == 1))),
        fp=int(np.sum((labels == 0) & (predictions == 1))),
        tn=int(np.sum((labels == 0) & (predictions == 0))),
        fn=int(np.sum((labels == 1) & (predictions == 0))),
    )


def _ratio(num, den):
    return num / den if den else 0.0


def metric_fractions(counts):
    """Unrounded fractions in [0, 1]; 0/0 is taken as 0."""
    require(counts.total > 0, _("Metrics need at least one subject."), code='empty')
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    sens = _ratio(counts.tp, counts.tp + counts.fn)
    spec = _ratio(counts.tn, counts.tn + counts.fp)
    return {
        'acc': (counts.tp + counts.tn) / counts.total,
        'precision': precision,
        'sens': sens,
        'spec': spec,
        'f1': _ratio(2 * precision * sens, precision + sens),
        'balanced_acc': 0.5 * (sens + spec),
    }


def classification_metrics(counts):
    fractions = metric_fractions(counts)
    return MetricsRecord(**{name: round(100.0 * value, 2) for name, value in fractions.items()})


def summarise_folds(records):
    """Per-fold frame plus the mean and sample standard deviation rows.

    With a single fold the standard deviation is reported as 0.
    """
    frame = pd.DataFrame([r.as_row() for r in records], columns=list(METRIC_FIELDS))
    mean = frame.mean(axis=0)
    sd = frame.std(axis=0, ddof=1) if len(frame) > 1 else frame.iloc[0] * 0.0
    return frame, mean, sd.fillna(0.0)
