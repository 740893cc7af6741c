"""Tapered sliding-window dynamic connectivity.

For every window of ``w`` consecutive samples (start indices 0, s, 2s, ...)
the weighted Pearson correlation between all network pairs is computed with
the taper as sample weights.
"""
import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import windows
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, require, require_finite

logger = logging.getLogger(__name__)

DEFAULT_WIDTH = 10
DEFAULT_STEP = 1
DEFAULT_SIGMA = 3.0


@dataclass(frozen=True)
class NetworkTimecourse:
    values: np.ndarray
    tr_seconds: float = 3.0
    network_names: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ContractViolation(_("A time course is a T x N matrix."), code='bad_shape')
        require(values.shape[1] >= 2, _("A time course needs at least 2 networks."), code='bad_shape')
        require(self.tr_seconds > 0, _("TR must be positive."), code='bad_tr')
        require_finite(values, "time course")
        object.__setattr__(self, 'values', values)
        if not self.network_names:
            names = tuple(f"net{i + 1:02d}" for i in range(values.shape[1]))
            object.__setattr__(self, 'network_names', names)
        require(len(self.network_names) == values.shape[1],
                _("One network name per column is required."), code='bad_names')

    @property
    def n_timepoints(self):
        return self.values.shape[0]

    @property
    def n_networks(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class TaperWeights:
    weights: np.ndarray
    sigma: float

    @property
    def width(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class DFNCSequence:
    windows: np.ndarray
    window_width: int
    step: int
    sigma: float = DEFAULT_SIGMA

    @property
    def n_windows(self):
        return self.windows.shape[0]

    @property
    def n_networks(self):
        return self.windows.shape[1]

    def mean_fnc(self):
        """Window-averaged connectivity."""
        return self.windows.mean(axis=0)


def window_count(n_timepoints, width, step):
    require(width >= 2, _("Window width must be at least 2."), code='bad_window')
    require(step >= 1, _("Window step must be at least 1."), code='bad_window')
    if n_timepoints < width:
        raise ContractViolation(
            _("Time course has %(t)s samples, shorter than the %(w)s-sample window."),
            code='window_too_long', params={'t': n_timepoints, 'w': width},
        )
    return (n_timepoints - width) // step + 1


def taper_weights(width=DEFAULT_WIDTH, sigma=DEFAULT_SIGMA):
    """Rectangle of ``width`` samples convolved with a Gaussian, cut back to ``width``.

    ``sigma`` is in samples (TRs); 0 gives the rectangular window.
    """
    require(width >= 2, _("Window width must be at least 2."), code='bad_window')
    require(sigma >= 0, _("Taper sigma must be nonnegative."), code='bad_sigma')
    rect = np.ones(width)
    if sigma == 0:
        tapered = rect
    else:
        half = int(np.ceil(3 * sigma))
        kernel = windows.gaussian(2 * half + 1, sigma)
        full = np.convolve(rect, kernel, mode='full')
        tapered = full[half:half + width]
    tapered = tapered / tapered.sum()
    # the convolution is symmetric analytically; enforce it bitwise
    tapered = 0.5 * (tapered + tapered[::-1])
    return TaperWeights(weights=tapered, sigma=float(sigma))


def _weighted_correlation(segments, weights):
    """segments: (W, w, N) windowed samples; weights: (w,) summing to 1."""
    mean = np.einsum('t,ktn->kn', weights, segments)
    centred = segments - mean[:, None, :]
    cov = np.einsum('t,ktn,ktm->knm', weights, centred, centred)
    var = np.einsum('knn->kn', cov).copy()
    scale = np.max(np.abs(segments), axis=1) ** 2
    degenerate = var <= 1e-14 * np.maximum(scale, 1e-300)
    safe = np.where(degenerate, 1.0, var)
    inv_std = 1.0 / np.sqrt(safe)
    corr = cov * inv_std[:, :, None] * inv_std[:, None, :]
    corr = np.where(degenerate[:, :, None] | degenerate[:, None, :], 0.0, corr)
    corr = 0.5 * (corr + np.swapaxes(corr, 1, 2))
    corr = np.clip(corr, -1.0, 1.0)
    diag = np.arange(corr.shape[1])
    corr[:, diag, diag] = 1.0
    return corr, degenerate


def windowed_correlation(timecourse, taper=None, step=DEFAULT_STEP):
    if taper is None:
        taper = taper_weights()
    values = timecourse.values if isinstance(timecourse, NetworkTimecourse) else np.asarray(timecourse, dtype=np.float64)
    width = taper.width
    n_windows = window_count(values.shape[0], width, step)
    # (T - w + 1, N, w) -> every step-th window as (W, w, N)
    segments = sliding_window_view(values, width, axis=0)[::step]
    segments = np.swapaxes(segments, 1, 2)
    corr, degenerate = _weighted_correlation(segments, taper.weights)
    if degenerate.any():
        logger.warning(
            "%d window/channel pairs have zero weighted variance; their correlations were set to 0",
            int(degenerate.sum()),
        )
    require(corr.shape[0] == n_windows, _("Produced %(got)s windows where %(want)s were expected."),
            code='window_count', got=corr.shape[0], want=n_windows)
    return DFNCSequence(windows=corr, window_width=width, step=step, sigma=taper.sigma)


def static_correlation(values):
    """Full-length Pearson correlation (uniform weights over all samples)."""
    values = np.asarray(values, dtype=np.float64)
    uniform = TaperWeights(weights=np.full(values.shape[0], 1.0 / values.shape[0]), sigma=0.0)
    corr, _degenerate = _weighted_correlation(values[None, :, :], uniform.weights)
    return corr[0]
