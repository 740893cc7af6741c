"""Synthetic cohorts with planted group differences in domain-block connectivity.

Every subject's network time course is correlated Gaussian noise drawn from a
group-specific target correlation: a block-structured base matrix plus an
effect added inside the planted domain blocks for the positive group. Target
matrices are repaired to valid correlation matrices before sampling.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from django.utils.translation import gettext_lazy as _

from Connectivity.formats import write_timecourse_csv
from Connectivity.partition import DomainPartition
from Connectivity.windowing import NetworkTimecourse
from Master.seed_generator import derive_seed, rng_for
from Master.validators import ContractViolation, InfeasibleEffect, require

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ['subject_id', 'group', 'subgroup', 'seed']


@dataclass(frozen=True)
class CohortConfig:
    n_negative: int = 60
    n_positive: int = 60
    n_timepoints: int = 60
    partition: DomainPartition = field(default_factory=DomainPartition.desk)
    planted_blocks: tuple = (('CC', 'CC'), ('SM', 'VS'))
    effect: float = 0.3
    within_domain: float = 0.2
    across_domain: float = 0.05
    noise: float = 0.1
    switching: bool = True
    segment_length: int = 20
    switch_within_domain: float = 0.45
    subgroups: tuple = ()
    negative_tag: str = 'CN'
    positive_tag: str = 'Asym'
    tr_seconds: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, 'planted_blocks', tuple(tuple(b) for b in self.planted_blocks))
        object.__setattr__(self, 'subgroups', tuple((str(t), float(m)) for t, m in self.subgroups))
        require(self.n_negative >= 1 and self.n_positive >= 1,
                _("Both groups need at least one subject."), code='bad_cohort')
        require(self.n_timepoints >= 2, _("Time courses need at least 2 samples."), code='bad_cohort')
        require(0.0 <= self.effect <= 1.0, _("Effect size must lie in [0, 1]."), code='bad_effect')
        require(self.noise >= 0.0, _("Noise level must be nonnegative."), code='bad_cohort')
        require(self.segment_length >= 1, _("Segments need at least one sample."), code='bad_cohort')
        for a, b in self.planted_blocks:
            self.partition.slice_of(a)
            self.partition.slice_of(b)
        for tag, multiplier in self.subgroups:
            require(multiplier >= 0.0, _("Subgroup %(tag)s has a negative multiplier."),
                    code='bad_subgroup', tag=tag)

    @property
    def n_networks(self):
        return self.partition.n_networks

    @property
    def n_subjects(self):
        return self.n_negative + self.n_positive

    def positive_subgroups(self):
        """(tag, multiplier) for every positive subject, in subject order."""
        if not self.subgroups:
            return [(self.positive_tag, 1.0)] * self.n_positive
        bounds = np.linspace(0, self.n_positive, len(self.subgroups) + 1).round().astype(int)
        result = []
        for (tag, multiplier), lo, hi in zip(self.subgroups, bounds[:-1], bounds[1:]):
            result.extend([(tag, multiplier)] * int(hi - lo))
        return result

    def to_dict(self):
        return {
            'n_negative': self.n_negative,
            'n_positive': self.n_positive,
            'n_timepoints': self.n_timepoints,
            'partition': self.partition.to_pairs(),
            'planted_blocks': [list(b) for b in self.planted_blocks],
            'effect': self.effect,
            'within_domain': self.within_domain,
            'across_domain': self.across_domain,
            'noise': self.noise,
            'switching': self.switching,
            'segment_length': self.segment_length,
            'switch_within_domain': self.switch_within_domain,
            'subgroups': [[t, m] for t, m in self.subgroups],
            'negative_tag': self.negative_tag,
            'positive_tag': self.positive_tag,
            'tr_seconds': self.tr_seconds,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if 'partition' in data:
            data['partition'] = DomainPartition.from_pairs(data['partition'])
        return cls(**data)


def desk_preset(**overrides):
    """120 subjects, 16 networks in 4 domains, 60 samples, two planted blocks."""
    return replace(CohortConfig(), **overrides)


def full_preset(**overrides):
    """53 networks in 7 domains and 255 samples; slow, for full runs."""
    config = CohortConfig(partition=DomainPartition.default(), n_timepoints=255,
                          planted_blocks=(('CC', 'CC'), ('VS', 'VS')), switching=False)
    return replace(config, **overrides)


def base_correlation(partition, within, across):
    labels = np.array(partition.labels())
    sigma = np.where(labels[:, None] == labels[None, :], within, across)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def planted_mask(partition, blocks):
    """Off-diagonal entries that belong to any planted block, symmetric."""
    n = partition.n_networks
    mask = np.zeros((n, n), dtype=bool)
    for a, b in blocks:
        rows, cols = partition.slice_of(a), partition.slice_of(b)
        mask[rows, cols] = True
        mask[cols, rows] = True
    np.fill_diagonal(mask, False)
    return mask


def nearest_correlation(target):
    """Clip negative eigenvalues and rescale to a unit diagonal."""
    target = 0.5 * (target + target.T)
    eigenvalues, vectors = np.linalg.eigh(target)
    clipped = eigenvalues < 0
    if clipped.any():
        logger.warning("Clipped %d negative eigenvalues (smallest %.3g)", int(clipped.sum()), eigenvalues.min())
    repaired = (vectors * np.maximum(eigenvalues, 0.0)) @ vectors.T
    scale = 1.0 / np.sqrt(np.diag(repaired))
    repaired = repaired * scale[:, None] * scale[None, :]
    repaired = 0.5 * (repaired + repaired.T)
    np.fill_diagonal(repaired, 1.0)
    return repaired


def group_correlation(config, multiplier=1.0, within=None):
    """Repaired target correlation for a group whose effect is ``multiplier`` times the configured one."""
    within = config.within_domain if within is None else within
    target = base_correlation(config.partition, within, config.across_domain)
    delta = config.effect * multiplier
    mask = planted_mask(config.partition, config.planted_blocks)
    target[mask] += delta
    if not np.all(np.abs(target) <= 1.0):
        raise InfeasibleEffect(
            _("Effect %(delta)s pushes planted correlations outside [-1, 1]; use a smaller effect."),
            params={'delta': delta},
        )
    repaired = nearest_correlation(target)
    if mask.any() and delta > 0:
        moved = float(np.max(np.abs(repaired[mask] - target[mask])))
        if moved > delta / 2:
            raise InfeasibleEffect(
                _("Repair moved planted blocks by %(moved).3f, more than half the effect %(delta)s; "
                  "use a smaller effect."),
                params={'moved': moved, 'delta': delta},
            )
    return repaired


def _factor(sigma):
    eigenvalues, vectors = np.linalg.eigh(sigma)
    return vectors * np.sqrt(np.maximum(eigenvalues, 0.0))


def sample_timecourse(config, factors, rng):
    """Correlated Gaussian samples, alternating between ``factors`` every segment."""
    t, n = config.n_timepoints, config.n_networks
    z = rng.standard_normal((t, n))
    if len(factors) == 1:
        signal = z @ factors[0].T
    else:
        start = int(rng.integers(len(factors)))
        state = (start + np.arange(t) // config.segment_length) % len(factors)
        signal = np.empty((t, n))
        for index, factor in enumerate(factors):
            rows = state == index
            signal[rows] = z[rows] @ factor.T
    return signal + config.noise * rng.standard_normal((t, n))


@dataclass(frozen=True)
class SyntheticSubject:
    subject_id: str
    timecourse: NetworkTimecourse
    group: int
    subgroup: str
    seed: int


@dataclass(frozen=True)
class SyntheticCohort:
    subjects: tuple
    config: CohortConfig
    seed: int

    def __len__(self):
        return len(self.subjects)

    @property
    def labels(self):
        return np.array([s.group for s in self.subjects], dtype=np.int64)

    @property
    def tags(self):
        return [s.subgroup for s in self.subjects]

    def values(self):
        """(S, T, N) stack of all time courses."""
        return np.stack([s.timecourse.values for s in self.subjects])

    def label_frame(self):
        return pd.DataFrame(
            [[s.subject_id, s.group, s.subgroup, s.seed] for s in self.subjects], columns=LABEL_COLUMNS,
        )

    def write(self, directory):
        """Write one time-course CSV per subject plus labels.csv; returns the written paths."""
        directory = Path(directory)
        (directory / 'timecourses').mkdir(parents=True, exist_ok=True)
        paths = []
        for subject in self.subjects:
            path = directory / 'timecourses' / f'{subject.subject_id}.csv'
            write_timecourse_csv(subject.timecourse, path)
            paths.append(path)
        labels = directory / 'labels.csv'
        self.label_frame().to_csv(labels, index=False)
        paths.append(labels)
        return paths


def network_names(partition):
    counters = {}
    names = []
    for label in partition.labels():
        counters[label] = counters.get(label, 0) + 1
        names.append(f'{label}{counters[label]}')
    return tuple(names)


def generate_cohort(config, seed=0):
    """Draw every subject from its group's correlation; bit-identical for equal (config, seed)."""
    factors_for = {}

    def factors(multiplier):
        if multiplier not in factors_for:
            states = [group_correlation(config, multiplier)]
            if config.switching:
                states.append(group_correlation(config, multiplier, within=config.switch_within_domain))
            factors_for[multiplier] = [_factor(s) for s in states]
        return factors_for[multiplier]

    names = network_names(config.partition)
    plan = [(0, config.negative_tag, 0.0)] * config.n_negative
    plan += [(1, tag, multiplier) for tag, multiplier in config.positive_subgroups()]

    subjects = []
    for index, (group, tag, multiplier) in enumerate(plan):
        subject_seed = derive_seed(seed, 'subject', index)
        rng = rng_for(subject_seed)
        chosen = factors(multiplier)
        values = sample_timecourse(config, chosen, rng)
        timecourse = NetworkTimecourse(values=values, tr_seconds=config.tr_seconds, network_names=names)
        subjects.append(SyntheticSubject(f'sub{index + 1:04d}', timecourse, group, tag, subject_seed))
    logger.info("Generated %d synthetic subjects (%d positive), effect %.2f",
                len(subjects), config.n_positive, config.effect)
    return SyntheticCohort(subjects=tuple(subjects), config=config, seed=int(seed))


def read_labels(path):
    frame = pd.read_csv(path, dtype={'subject_id': str, 'subgroup': str})
    missing = [c for c in LABEL_COLUMNS[:3] if c not in frame.columns]
    if missing:
        raise ContractViolation(
            _("Labels file %(path)s lacks columns %(missing)s."), code='bad_labels',
            params={'path': str(path), 'missing': missing},
        )
    return frame
