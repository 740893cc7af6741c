"""Experiment configuration: a JSON document checked against ``EXPERIMENT_SCHEMA``.

Every section is optional; missing keys fall back to ``DEFAULTS``. Unknown
keys are rejected at every level.
"""
import copy
import json
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings
from django.utils.translation import gettext_lazy as _
from jsonschema import Draft202012Validator

from Classifier.config import ModelConfig
from Master.validators import ContractViolation
from Synthetic.cohort import CohortConfig, desk_preset, full_preset
from Training.trainer import TrainHyperparams

_POSITIVE_INT = {'type': 'integer', 'minimum': 1}
_NAME_LIST = {'type': 'array', 'items': {'type': 'string'}}
_PAIR = {'type': 'array', 'prefixItems': [{'type': 'string'}, {'type': 'integer', 'minimum': 1}],
         'items': False, 'minItems': 2}
_BLOCK = {'type': 'array', 'prefixItems': [{'type': 'string'}, {'type': 'string'}], 'items': False, 'minItems': 2}
_SUBGROUP = {'type': 'array', 'prefixItems': [{'type': 'string'}, {'type': 'number', 'minimum': 0}],
             'items': False, 'minItems': 2}


def _section(properties, required=()):
    return {'type': 'object', 'properties': properties, 'required': list(required), 'additionalProperties': False}


COHORT_SCHEMA = _section({
    'n_negative': _POSITIVE_INT,
    'n_positive': _POSITIVE_INT,
    'n_timepoints': {'type': 'integer', 'minimum': 2},
    'partition': {'type': 'array', 'items': _PAIR, 'minItems': 1},
    'planted_blocks': {'type': 'array', 'items': _BLOCK},
    'effect': {'type': 'number', 'minimum': 0, 'maximum': 1},
    'within_domain': {'type': 'number', 'minimum': -1, 'maximum': 1},
    'across_domain': {'type': 'number', 'minimum': -1, 'maximum': 1},
    'noise': {'type': 'number', 'minimum': 0},
    'switching': {'type': 'boolean'},
    'segment_length': _POSITIVE_INT,
    'switch_within_domain': {'type': 'number', 'minimum': -1, 'maximum': 1},
    'subgroups': {'type': 'array', 'items': _SUBGROUP},
    'negative_tag': {'type': 'string'},
    'positive_tag': {'type': 'string'},
    'tr_seconds': {'type': 'number', 'exclusiveMinimum': 0},
})

EXPERIMENT_SCHEMA = {
    '$schema': 'https://json-schema.org/draft/2020-12/schema',
    'title': 'ExperimentConfig',
    **_section({
        'name': {'type': 'string', 'minLength': 1},
        'seed': {'type': 'integer', 'minimum': 0},
        'output_dir': {'type': ['string', 'null']},
        'threads': {'type': ['integer', 'null'], 'minimum': 1},
        'baseline_metrics': {'type': ['string', 'null']},
        'data': _section({
            'source': {'enum': ['synthetic', 'files']},
            'preset': {'enum': ['desk', 'full']},
            'cohort': COHORT_SCHEMA,
            'timecourse_dir': {'type': 'string'},
            'labels_csv': {'type': 'string'},
            'partition': {'type': 'array', 'items': _PAIR, 'minItems': 1},
            'tr_seconds': {'type': 'number', 'exclusiveMinimum': 0},
        }),
        'dfnc': _section({
            'width': {'type': 'integer', 'minimum': 2},
            'step': _POSITIVE_INT,
            'sigma': {'type': 'number', 'exclusiveMinimum': 0},
        }),
        'model': _section({
            'conv_channels': {'type': 'array', 'items': _POSITIVE_INT, 'minItems': 1},
            'kernel_size': _POSITIVE_INT,
            'embed_dim': _POSITIVE_INT,
            'n_blocks': _POSITIVE_INT,
            'n_heads': _POSITIVE_INT,
            'dropout': {'type': 'number', 'minimum': 0, 'exclusiveMaximum': 1},
            'attention': {'enum': ['sparsemax', 'softmax']},
            'threshold': {'type': 'number', 'exclusiveMinimum': 0, 'exclusiveMaximum': 1},
            'ffn_multiplier': _POSITIVE_INT,
        }),
        'training': _section({
            'folds': {'type': 'integer', 'minimum': 2},
            'epochs': _POSITIVE_INT,
            'lr': {'type': 'number', 'minimum': 0},
            'lr_min': {'type': 'number', 'minimum': 0},
            'weight_decay': {'type': 'number', 'minimum': 0},
            'batch_size': _POSITIVE_INT,
            'balance_classes': {'type': 'boolean'},
            'keep_best': {'type': 'boolean'},
            'log_every': {'type': ['integer', 'null'], 'minimum': 0},
        }),
        'design': _section({
            'name': {'type': 'string'},
            'negative': {**_NAME_LIST, 'minItems': 1},
            'positive': {**_NAME_LIST, 'minItems': 1},
            'subsample': {'type': 'object', 'additionalProperties': _POSITIVE_INT},
        }),
        'cam': _section({
            'method': {'enum': ['layercam', 'gradcam']},
            'layer': {'type': 'integer'},
            'target': {'enum': ['predicted', 'true']},
            'fractions': {'type': 'array', 'items': {'type': 'number', 'exclusiveMinimum': 0, 'maximum': 1},
                          'minItems': 1},
            'random_seeds': _POSITIVE_INT,
            'threshold': {'type': 'number', 'minimum': 0, 'maximum': 1},
        }),
    }),
}

DEFAULTS = {
    'name': 'experiment',
    'seed': 0,
    'output_dir': None,
    'threads': None,
    'baseline_metrics': None,
    'data': {'source': 'synthetic', 'preset': 'desk', 'cohort': {}, 'tr_seconds': 3.0},
    'dfnc': {'width': 10, 'step': 1, 'sigma': 3.0},
    'model': {'conv_channels': [8, 8], 'kernel_size': 3, 'embed_dim': 32, 'n_blocks': 2, 'n_heads': 1,
              'dropout': 0.1, 'attention': 'sparsemax', 'threshold': 0.5, 'ffn_multiplier': 2},
    'training': {'folds': 5, 'epochs': 300, 'lr': 1e-3, 'lr_min': 0.0, 'weight_decay': 0.05, 'batch_size': 16,
                 'balance_classes': False, 'keep_best': False, 'log_every': None},
    'design': {'name': 'CN vs Asym', 'negative': ['CN'], 'positive': ['Asym'], 'subsample': {}},
    'cam': {'method': 'layercam', 'layer': -1, 'target': 'predicted', 'fractions': [0.05, 0.1, 0.2],
            'random_seeds': 20, 'threshold': 0.7},
}


def _merge(defaults, document):
    merged = copy.deepcopy(defaults)
    for key, value in document.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key != 'cohort':
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def validate_document(document):
    """Raise ContractViolation listing every schema error in ``document``."""
    validator = Draft202012Validator(EXPERIMENT_SCHEMA)
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        details = '; '.join(
            f"{'/'.join(str(p) for p in error.absolute_path) or '<root>'}: {error.message}" for error in errors
        )
        raise ContractViolation(_("Invalid experiment config: %(details)s"), code='bad_config',
                                params={'details': details})


@dataclass(frozen=True)
class ExperimentConfig:
    document: dict

    @classmethod
    def from_dict(cls, document):
        validate_document(document)
        return cls(document=_merge(DEFAULTS, document))

    @classmethod
    def from_file(cls, path):
        try:
            document = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ContractViolation(_("Config %(path)s is not valid JSON: %(error)s"), code='bad_config',
                                    params={'path': str(path), 'error': str(exc)}) from exc
        return cls.from_dict(document)

    def with_overrides(self, seed=None, output_dir=None, threads=None):
        """Command-line flags take precedence over the document."""
        document = copy.deepcopy(self.document)
        if seed is not None:
            document['seed'] = int(seed)
        if output_dir is not None:
            document['output_dir'] = str(output_dir)
        if threads is not None:
            document['threads'] = int(threads)
        return ExperimentConfig.from_dict(document)

    def __getitem__(self, key):
        return self.document[key]

    @property
    def seed(self):
        return int(self.document['seed'])

    @property
    def threads(self):
        return int(self.document['threads'] or settings.HARNESS_THREADS)

    def output_dir(self):
        if self.document['output_dir']:
            return Path(self.document['output_dir'])
        return Path(settings.HARNESS_OUTPUT_ROOT) / self.document['name']

    def cohort_config(self):
        data = self.document['data']
        preset = full_preset if data['preset'] == 'full' else desk_preset
        base = preset()
        overrides = dict(data['cohort'])
        if overrides:
            return CohortConfig.from_dict({**base.to_dict(), **overrides})
        return base

    def model_config(self, n_networks, n_windows):
        return ModelConfig.from_dict({**self.document['model'], 'n_networks': n_networks,
                                      'n_windows': n_windows, 'seed': self.seed})

    def hyperparams(self):
        training = dict(self.document['training'])
        training.pop('folds')
        if training['log_every'] is None:
            training['log_every'] = settings.HARNESS_LOG_EVERY
        return TrainHyperparams(**training)

    def to_dict(self):
        return copy.deepcopy(self.document)
