"""Tables and figures written into a run directory."""
import io
from pathlib import Path

import numpy as np
import pandas as pd
from django.template.loader import render_to_string
from django.utils.translation import gettext_lazy as _

from Evaluation.metrics import METRIC_FIELDS, summarise_folds
from Evaluation.significance import paired_ttest
from Master.validators import ContractViolation, require

METRICS_HEADER = ['fold', *METRIC_FIELDS]
NEGATIVE_COLOR = (0, 0, 255)
POSITIVE_COLOR = (255, 0, 0)
CELL_AREA = 480
MARGIN = 60


def metrics_frame(records):
    """Fold rows numbered from 1, then the mean and sd rows."""
    require(len(records) >= 1, _("At least one fold record is required."), code='no_records')
    frame, mean, sd = summarise_folds(records)
    frame.insert(0, 'fold', [str(i + 1) for i in range(len(frame))])
    summary = pd.DataFrame([['mean', *mean.tolist()], ['sd', *sd.tolist()]], columns=METRICS_HEADER)
    return pd.concat([frame, summary], ignore_index=True)


def metrics_csv_text(records):
    buffer = io.StringIO()
    metrics_frame(records).to_csv(buffer, index=False, float_format='%.2f', lineterminator='\n')
    return buffer.getvalue()


def emit_metrics_csv(records, path):
    Path(path).write_text(metrics_csv_text(records))
    return Path(path)


def read_metrics_csv(path):
    """Per-fold rows of a metrics CSV (the mean and sd rows dropped)."""
    frame = pd.read_csv(path, dtype={'fold': str})
    if list(frame.columns) != METRICS_HEADER:
        raise ContractViolation(_("%(path)s is not a metrics table."), code='bad_metrics',
                                params={'path': str(path)})
    return frame[~frame['fold'].isin(['mean', 'sd'])].reset_index(drop=True)


def comparison_frame(current, baseline):
    """Per-metric means of both runs with a paired t-test over folds; '*' marks p < 0.01."""
    if len(current) != len(baseline):
        raise ContractViolation(
            _("Runs have %(a)s and %(b)s folds; a paired comparison needs equal counts."),
            code='fold_mismatch', params={'a': len(current), 'b': len(baseline)},
        )
    rows = []
    for metric in METRIC_FIELDS:
        result = paired_ttest(current[metric].to_numpy(float), baseline[metric].to_numpy(float))
        rows.append({
            'metric': metric,
            'run': round(float(current[metric].mean()), 2),
            'baseline': round(float(baseline[metric].mean()), 2),
            't': result.t,
            'p': result.p,
            'marker': '*' if result.significant else '',
        })
    return pd.DataFrame(rows)


def matrix_csv_text(matrix, labels=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    frame = pd.DataFrame(matrix, index=labels, columns=labels)
    buffer = io.StringIO()
    frame.to_csv(buffer, index=labels is not None, float_format='%.17g', lineterminator='\n')
    return buffer.getvalue()


def diverging_color(value, bounds):
    """Blue at the lower bound, white at 0, red at the upper bound (hex)."""
    lo, hi = bounds
    if value >= 0:
        t, extreme = min(value / hi, 1.0), POSITIVE_COLOR
    else:
        t, extreme = min(value / lo, 1.0), NEGATIVE_COLOR
    rgb = [round(255 + (c - 255) * t) for c in extreme]
    return '#{:02x}{:02x}{:02x}'.format(*rgb)


def default_bounds(matrix):
    peak = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    peak = peak if peak > 0 else 1.0
    return -peak, peak


def heatmap_svg(matrix, partition=None, bounds=None, title='', labels=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractViolation(_("Heatmaps need a square matrix, got %(shape)s."), code='not_square',
                                params={'shape': matrix.shape})
    n = matrix.shape[0]
    if partition is not None:
        partition.check_covers(n)
    bounds = tuple(bounds) if bounds is not None else default_bounds(matrix)
    require(bounds[0] < 0 < bounds[1], _("Color bounds must straddle 0."), code='bad_bounds')

    size = max(4, CELL_AREA // n)
    extent = size * n
    cells = [
        {'x': MARGIN + j * size, 'y': MARGIN + i * size, 'fill': diverging_color(matrix[i, j], bounds),
         'value': f'{matrix[i, j]:.4g}'}
        for i in range(n) for j in range(n)
    ]
    grid = [MARGIN + k * size for k in range(n + 1)]
    boundaries, axis_labels = [], []
    if partition is not None:
        for r in partition.ranges[1:]:
            boundaries.append(MARGIN + r.start * size)
        for name, r in zip(partition.names, partition.ranges):
            axis_labels.append({'text': name, 'center': MARGIN + (r.start + r.stop) * size / 2})
    elif labels is not None:
        axis_labels = [{'text': str(t), 'center': MARGIN + (k + 0.5) * size} for k, t in enumerate(labels)]

    steps = 32
    bar_x = MARGIN + extent + 20
    stop_height = extent / steps
    colorbar = [
        {'y': MARGIN + k * stop_height,
         'fill': diverging_color(bounds[1] - (bounds[1] - bounds[0]) * (k + 0.5) / steps, bounds)}
        for k in range(steps)
    ]
    context = {
        'title': title,
        'width': bar_x + 80,
        'height': MARGIN + extent + 40,
        'size': size,
        'cells': cells,
        'grid': grid,
        'grid_start': MARGIN,
        'grid_end': MARGIN + extent,
        'boundaries': boundaries,
        'axis_labels': axis_labels,
        'label_row': MARGIN + extent + 16,
        'label_column': MARGIN - 6,
        'bar_x': bar_x,
        'stop_height': stop_height,
        'colorbar': colorbar,
        'bar_labels': [
            {'y': MARGIN + 4, 'text': f'{bounds[1]:.3g}'},
            {'y': MARGIN + extent * bounds[1] / (bounds[1] - bounds[0]) + 4, 'text': '0'},
            {'y': MARGIN + extent, 'text': f'{bounds[0]:.3g}'},
        ],
    }
    return render_to_string('reports/heatmap.svg', context)


def emit_heatmap_svg(matrix, partition, path, bounds=None, title=''):
    Path(path).write_text(heatmap_svg(matrix, partition, bounds, title))
    return Path(path)
