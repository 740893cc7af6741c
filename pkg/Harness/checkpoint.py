"""Checkpoint container.

Layout: an unsigned little-endian 64-bit header length, the UTF-8 JSON
header, then every tensor as contiguous little-endian float64 values in
header order. The header records the sha256 of the payload.
"""
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from django.utils.translation import gettext_lazy as _

from Classifier.config import ModelConfig
from Classifier.params import ModelParams
from Master.validators import CheckpointChecksumError, CheckpointError, CheckpointTruncatedError, CheckpointVersionError
from Training.optim import OptimState

FORMAT_VERSION = 1
LITTLE_F64 = '<f8'
_LENGTH = struct.Struct('<Q')
HEADER_FIELDS = ('model_config', 'seed', 'fold', 'tensors', 'optimizer', 'payload_bytes', 'sha256')


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ModelParams
    seed: int = 0
    fold: int = 0
    optim_state: Optional[OptimState] = None
    version: int = FORMAT_VERSION


def _tensors(checkpoint):
    tensors = list(checkpoint.params.items())
    state = checkpoint.optim_state
    if state is not None:
        tensors += [(f'optim.first/{name}', state.first[name]) for name in checkpoint.params.names()]
        tensors += [(f'optim.second/{name}', state.second[name]) for name in checkpoint.params.names()]
    return tensors


def encode_checkpoint(checkpoint):
    entries, chunks, offset = [], [], 0
    for name, value in _tensors(checkpoint):
        data = np.ascontiguousarray(value, dtype=LITTLE_F64).tobytes()
        entries.append({'name': name, 'shape': list(np.shape(value)), 'offset': offset, 'nbytes': len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b''.join(chunks)
    state = checkpoint.optim_state
    header = {
        'format_version': checkpoint.version,
        'model_config': checkpoint.model_config.to_dict(),
        'seed': int(checkpoint.seed),
        'fold': int(checkpoint.fold),
        'tensors': entries,
        'optimizer': None if state is None else {
            'step': state.step, 'beta1': state.beta1, 'beta2': state.beta2, 'eps': state.eps,
        },
        'payload_bytes': len(payload),
        'sha256': hashlib.sha256(payload).hexdigest(),
    }
    encoded = json.dumps(header, sort_keys=True).encode('utf-8')
    return _LENGTH.pack(len(encoded)) + encoded + payload


def decode_checkpoint(blob, source='<bytes>'):
    if len(blob) < _LENGTH.size:
        raise CheckpointTruncatedError(_("Checkpoint %(src)s ends before its header."), params={'src': source})
    (length,) = _LENGTH.unpack_from(blob)
    if len(blob) < _LENGTH.size + length:
        raise CheckpointTruncatedError(_("Checkpoint %(src)s ends inside its header."), params={'src': source})
    try:
        header = json.loads(blob[_LENGTH.size:_LENGTH.size + length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(_("Checkpoint %(src)s has an unreadable header."), params={'src': source}) from exc
    if not isinstance(header, dict):
        raise CheckpointError(_("Checkpoint %(src)s has an unreadable header."), params={'src': source})
    version = int(header.get('format_version', -1))
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            _("Checkpoint %(src)s has format version %(found)s; this build reads version %(supported)s."),
            params={'src': source, 'found': version, 'supported': FORMAT_VERSION},
        )
    missing = [key for key in HEADER_FIELDS if key not in header]
    if missing:
        raise CheckpointError(_("Checkpoint %(src)s header lacks %(missing)s."),
                              params={'src': source, 'missing': ', '.join(missing)})
    payload = blob[_LENGTH.size + length:]
    if len(payload) < header['payload_bytes']:
        raise CheckpointTruncatedError(
            _("Checkpoint %(src)s payload has %(got)s of %(want)s bytes."),
            params={'src': source, 'got': len(payload), 'want': header['payload_bytes']},
        )
    payload = payload[:header['payload_bytes']]
    if hashlib.sha256(payload).hexdigest() != header['sha256']:
        raise CheckpointChecksumError(_("Checkpoint %(src)s fails its payload checksum."), params={'src': source})

    try:
        arrays = {}
        for entry in header['tensors']:
            raw = payload[entry['offset']:entry['offset'] + entry['nbytes']]
            arrays[entry['name']] = np.frombuffer(raw, dtype=LITTLE_F64).astype(np.float64).reshape(entry['shape'])
        names = [e['name'] for e in header['tensors'] if not e['name'].startswith('optim.')]
        params = ModelParams({name: arrays[name] for name in names})
        state = None
        if header['optimizer'] is not None:
            opt = header['optimizer']
            state = OptimState(
                first={n: arrays[f'optim.first/{n}'] for n in names},
                second={n: arrays[f'optim.second/{n}'] for n in names},
                step=int(opt['step']), beta1=opt['beta1'], beta2=opt['beta2'], eps=opt['eps'],
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(_("Checkpoint %(src)s has a malformed tensor table: %(error)s"),
                              params={'src': source, 'error': exc}) from exc
    config = ModelConfig.from_dict(header['model_config'])
    params.check_matches(config)
    return Checkpoint(model_config=config, params=params, seed=header['seed'], fold=header['fold'],
                      optim_state=state, version=version)


def save_checkpoint(path, checkpoint):
    Path(path).write_bytes(encode_checkpoint(checkpoint))
    return Path(path)


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes(), source=str(path))
