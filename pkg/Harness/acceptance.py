"""Synthetic-recovery checks, read back from a finished run directory.

Every check looks at the per-fold outputs of the eval and cam stages and
passes when enough folds recover the planted ground truth.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation
from Synthetic.cohort import planted_mask

logger = logging.getLogger(__name__)

MIN_BALANCED_ACC = 90.0
MIN_SENSITIVITY = 85.0
TOP_DOMAIN_ENTRIES = 3
MIN_FOLDS = 4


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _require_file(path):
    if not path.exists():
        raise ContractViolation(_("%(path)s is missing; finish the run before checking it."),
                                code='missing_input', params={'path': str(path)})
    return path


def _fold_numbers(config):
    return range(1, int(config['training']['folds']) + 1)


def _planted(config):
    if config['data']['source'] != 'synthetic':
        raise ContractViolation(_("Recovery checks need a synthetic cohort."), code='not_synthetic')
    return config.cohort_config()


def check_recovery(config, root):
    summary = json.loads(_require_file(root / 'summary.json').read_text())
    balanced, sens = summary['balanced_acc_mean'], summary['mean']['sens']
    passed = balanced >= MIN_BALANCED_ACC and sens >= MIN_SENSITIVITY
    return CheckResult('recovery', passed,
                       f'balanced accuracy {balanced:.2f} (>= {MIN_BALANCED_ACC}), '
                       f'sensitivity {sens:.2f} (>= {MIN_SENSITIVITY})')


def top_domain_blocks(values, count=TOP_DOMAIN_ENTRIES):
    """The ``count`` largest |value| (row, col) blocks of a symmetric domain map, row <= col."""
    rows, cols = np.triu_indices(values.shape[0])
    order = np.argsort(-np.abs(values[rows, cols]), kind='stable')[:count]
    return {(int(rows[i]), int(cols[i])) for i in order}


def check_planted_domains(config, root):
    cohort = _planted(config)
    names = list(cohort.partition.names)
    planted = {tuple(sorted((names.index(a), names.index(b)))) for a, b in cohort.planted_blocks}
    hits = 0
    for fold in _fold_numbers(config):
        path = root / 'cams' / f'fold_{fold}_domain_difference.csv'
        if not path.exists():
            continue
        values = pd.read_csv(path, index_col=0, float_precision='round_trip').to_numpy(dtype=np.float64)
        if planted <= top_domain_blocks(values):
            hits += 1
    return CheckResult('planted_domains', hits >= MIN_FOLDS,
                       f'planted blocks in the top {TOP_DOMAIN_ENTRIES} domain entries in {hits} folds')


def check_threshold_retention(config, root):
    cohort = _planted(config)
    mask = planted_mask(cohort.partition, cohort.planted_blocks)
    hits = 0
    for fold in _fold_numbers(config):
        path = root / 'cams' / f'fold_{fold}_difference_thresholded.csv'
        if not path.exists():
            continue
        retained = pd.read_csv(path, float_precision='round_trip').to_numpy(dtype=np.float64)
        if np.any(retained[mask] != 0.0):
            hits += 1
    threshold = config['cam']['threshold']
    return CheckResult('threshold_retention', hits >= MIN_FOLDS,
                       f'a planted entry survives the {threshold} threshold in {hits} folds')


def check_fidelity(config, root):
    table = pd.read_csv(_require_file(root / 'cam_confidence.csv'), dtype={'fold': str})
    folds = table[table['fold'] != 'mean'].pivot(index='fold', columns='method', values='confidence')
    hits = int((folds['layercam'] > folds['random']).sum())
    return CheckResult('fidelity', hits >= MIN_FOLDS,
                       f'LayerCAM beats the random baseline in {hits} of {len(folds)} folds')


def check_ordering(config, root):
    order = list(config['design']['negative']) + list(config['design']['positive'])
    table = pd.read_csv(_require_file(root / 'group_scores.csv'), dtype={'fold': str, 'group': str})
    folds = table[table['fold'] != 'mean'].pivot(index='fold', columns='group', values='score')
    missing = [g for g in order if g not in folds.columns]
    if missing:
        return CheckResult('ordering', False, f'no scores for {", ".join(missing)}')
    ordered = folds[order].dropna()
    hits = int((ordered.diff(axis=1).iloc[:, 1:] > 0).all(axis=1).sum())
    return CheckResult('ordering', hits >= MIN_FOLDS,
                       f'mean scores ordered {" < ".join(order)} in {hits} folds')


CHECKS = {
    'recovery': check_recovery,
    'planted_domains': check_planted_domains,
    'threshold_retention': check_threshold_retention,
    'fidelity': check_fidelity,
    'ordering': check_ordering,
}


def check_run(config, root=None, names=None):
    root = Path(root) if root is not None else config.output_dir()
    results = []
    for name in names or CHECKS:
        result = CHECKS[name](config, root)
        logger.log(logging.INFO if result.passed else logging.WARNING, "%s %s: %s",
                   name, 'passed' if result.passed else 'failed', result.detail)
        results.append(result)
    return results
