"""Readers and writers for time courses and dFNC stacks.

Binary payloads are raw little-endian float64 with a JSON sidecar next to
them (``<name>.json``).
"""
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from django.utils.translation import gettext_lazy as _

from Connectivity.windowing import DFNCSequence, NetworkTimecourse
from Master.validators import ContractViolation, require_finite

logger = logging.getLogger(__name__)

LITTLE_F64 = np.dtype('<f8')


def sidecar_path(path):
    path = Path(path)
    return path.with_suffix('.json')


def _read_sidecar(path, required):
    try:
        meta = json.loads(sidecar_path(path).read_text())
    except FileNotFoundError:
        raise ContractViolation(
            _("Missing sidecar for %(path)s."), code='missing_sidecar', params={'path': str(path)},
        ) from None
    missing = [key for key in required if key not in meta]
    if missing:
        raise ContractViolation(
            _("Sidecar for %(path)s lacks %(keys)s."), code='bad_sidecar',
            params={'path': str(path), 'keys': ', '.join(missing)},
        )
    return meta


def _read_payload(path, count):
    payload = np.fromfile(path, dtype=LITTLE_F64)
    if payload.size != count:
        raise ContractViolation(
            _("%(path)s holds %(got)s values, sidecar promises %(want)s."), code='bad_payload',
            params={'path': str(path), 'got': payload.size, 'want': count},
        )
    return payload.astype(np.float64)


def read_timecourse_csv(path, tr_seconds=3.0):
    frame = pd.read_csv(path, float_precision='round_trip')
    values = frame.to_numpy(dtype=np.float64)
    return NetworkTimecourse(values=values, tr_seconds=tr_seconds, network_names=tuple(frame.columns))


def write_timecourse_csv(timecourse, path):
    frame = pd.DataFrame(timecourse.values, columns=list(timecourse.network_names))
    frame.to_csv(path, index=False, float_format='%.17g')


def read_timecourse_binary(path):
    meta = _read_sidecar(path, ('T', 'N', 'tr_seconds', 'network_names'))
    t, n = int(meta['T']), int(meta['N'])
    values = _read_payload(path, t * n).reshape(t, n)
    return NetworkTimecourse(values=values, tr_seconds=float(meta['tr_seconds']),
                             network_names=tuple(meta['network_names']))


def write_timecourse_binary(timecourse, path):
    path = Path(path)
    timecourse.values.astype(LITTLE_F64).tofile(path)
    meta = {
        'T': timecourse.n_timepoints,
        'N': timecourse.n_networks,
        'tr_seconds': timecourse.tr_seconds,
        'network_names': list(timecourse.network_names),
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2))


def read_timecourse(path, tr_seconds=3.0):
    """Dispatch on extension: ``.csv`` or raw binary with sidecar."""
    if Path(path).suffix.lower() == '.csv':
        return read_timecourse_csv(path, tr_seconds=tr_seconds)
    return read_timecourse_binary(path)


def write_dfnc(sequence, path):
    path = Path(path)
    np.ascontiguousarray(sequence.windows).astype(LITTLE_F64).tofile(path)
    meta = {
        'W': sequence.n_windows,
        'N': sequence.n_networks,
        'w': sequence.window_width,
        's': sequence.step,
        'sigma': sequence.sigma,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2))
    logger.debug("Wrote %d windows of %dx%d to %s", meta['W'], meta['N'], meta['N'], path)


def read_dfnc(path):
    meta = _read_sidecar(path, ('W', 'N', 'w', 's', 'sigma'))
    w_count, n = int(meta['W']), int(meta['N'])
    windows = _read_payload(path, w_count * n * n).reshape(w_count, n, n)
    require_finite(windows, str(path))
    return DFNCSequence(windows=windows, window_width=int(meta['w']), step=int(meta['s']),
                        sigma=float(meta['sigma']))
