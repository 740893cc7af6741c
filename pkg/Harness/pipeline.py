"""Experiment stages: synth, dfnc, train, eval, cam and report.

Each stage reads what it needs from the run directory, so every stage can
run on its own after the ones before it have produced their outputs.
``run_experiment`` chains them all. Randomness comes from the config's root
seed, split per stage, fold and subject.
"""
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.utils.translation import gettext_lazy as _

from Classifier.network import collect_attention, predict_labels, predict_scores
from Connectivity.formats import read_dfnc, read_timecourse, write_dfnc, write_timecourse_csv
from Connectivity.partition import DomainPartition
from Connectivity.windowing import taper_weights, windowed_correlation
from Evaluation.groups import mean_scores_by_group
from Evaluation.metrics import classification_metrics, confusion_counts, summarise_folds
from Harness import recording
from Harness.checkpoint import Checkpoint, load_checkpoint
from Harness.reports import (
    comparison_frame, heatmap_svg, matrix_csv_text, metrics_csv_text, read_metrics_csv,
)
from Harness.writer import RunWriter
from Master.seed_generator import derive_seed, rng_for
from Master.validators import ContractViolation
from Saliency.cam import subject_saliency
from Saliency.fidelity import confidence_fidelity, random_fidelity
from Saliency.maps import domain_aggregate, group_mean_maps, threshold_difference_map
from Synthetic.cohort import generate_cohort, read_labels
from Training.folds import FoldPlan, stratified_kfold
from Training.trainer import train_fold

logger = logging.getLogger(__name__)

STAGES = ('synth', 'dfnc', 'train', 'eval', 'cam', 'report')
CAM_METHODS = ('layercam', 'gradcam')


@dataclass
class RunContext:
    config: object
    writer: RunWriter
    baseline: object = None
    record: bool = False
    cache: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.config.seed

    def map(self, fn, items):
        """Apply ``fn`` to every item, on a thread pool when more than one thread is configured."""
        items = list(items)
        if self.config.threads <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
            return list(pool.map(fn, items))

    def partition(self):
        data = self.config['data']
        if data['source'] == 'synthetic':
            return self.config.cohort_config().partition
        if 'partition' in data:
            return DomainPartition.from_pairs(data['partition'])
        return DomainPartition.default()

    def labels_frame(self):
        if 'labels' not in self.cache:
            path = self.writer.path('labels.csv')
            if not path.exists():
                raise ContractViolation(_("%(path)s is missing; run the synth stage first."),
                                        code='missing_input', params={'path': str(path)})
            self.cache['labels'] = read_labels(path)
        return self.cache['labels']

    def design(self):
        """Subjects of the configured binary design with their 0/1 labels and subgroup tags."""
        if 'design' not in self.cache:
            self.cache['design'] = select_design(self.labels_frame(), self.config['design'], self.seed)
        return self.cache['design']

    def dfnc_stack(self, subject_ids):
        def load(subject_id):
            return read_dfnc(self.writer.path(f'dfnc/{subject_id}.bin')).windows
        return np.stack(self.map(load, subject_ids))

    def fold_plan(self):
        if 'plan' not in self.cache:
            path = self.writer.path('folds.json')
            if not path.exists():
                raise ContractViolation(_("%(path)s is missing; run the train stage first."),
                                        code='missing_input', params={'path': str(path)})
            self.cache['plan'] = FoldPlan.from_dict(json.loads(path.read_text()))
        return self.cache['plan']

    def checkpoint(self, fold):
        return load_checkpoint(self.writer.path(f'checkpoints/fold_{fold + 1}.ckpt'))


def select_design(frame, design, seed):
    """Keep subjects whose subgroup belongs to either side and label them 0/1.

    ``design['subsample']`` draws a fixed number of subjects from a subgroup.
    """
    negative, positive = set(design['negative']), set(design['positive'])
    overlap = negative & positive
    if overlap:
        raise ContractViolation(_("Subgroups %(tags)s sit on both sides of the design."), code='bad_design',
                                params={'tags': sorted(overlap)})
    frame = frame[frame['subgroup'].isin(negative | positive)].copy()
    keep = np.ones(len(frame), dtype=bool)
    for tag, count in sorted(design.get('subsample', {}).items()):
        rows = np.flatnonzero(frame['subgroup'].to_numpy() == tag)
        if count > rows.size:
            raise ContractViolation(
                _("Subgroup %(tag)s has %(n)s subjects, fewer than the %(count)s requested."),
                code='bad_design', params={'tag': tag, 'n': rows.size, 'count': count},
            )
        chosen = rng_for(seed, 'subsample', tag).choice(rows, size=count, replace=False)
        dropped = np.setdiff1d(rows, chosen)
        keep[dropped] = False
    frame = frame[keep].reset_index(drop=True)
    frame['y'] = frame['subgroup'].isin(positive).astype(np.int64)
    return frame


def _frame_text(frame, float_format='%.17g', index=False):
    buffer = io.StringIO()
    frame.to_csv(buffer, index=index, float_format=float_format, lineterminator='\n')
    return buffer.getvalue()


def stage_synth(ctx):
    data = ctx.config['data']
    if data['source'] == 'files':
        frame = read_labels(data['labels_csv'])
        ctx.writer.write_frame('labels.csv', frame)
        logger.info("Ingested %d subjects from %s", len(frame), data['labels_csv'])
        return
    cohort = generate_cohort(ctx.config.cohort_config(), derive_seed(ctx.seed, 'synth'))
    for subject in cohort.subjects:
        ctx.writer.write_with([f'timecourses/{subject.subject_id}.csv'],
                              lambda path, tc=subject.timecourse: write_timecourse_csv(tc, path))
    ctx.writer.write_frame('labels.csv', cohort.label_frame())
    ctx.cache.pop('labels', None)


def _timecourse_path(ctx, subject_id):
    data = ctx.config['data']
    if data['source'] == 'synthetic':
        return ctx.writer.path(f'timecourses/{subject_id}.csv')
    directory = Path(data['timecourse_dir'])
    for candidate in (directory / f'{subject_id}.csv', directory / f'{subject_id}.bin'):
        if candidate.exists():
            return candidate
    raise ContractViolation(_("No time course for subject %(id)s in %(dir)s."), code='missing_input',
                            params={'id': subject_id, 'dir': str(directory)})


def stage_dfnc(ctx):
    geometry = ctx.config['dfnc']
    taper = taper_weights(geometry['width'], geometry['sigma'])
    tr_seconds = ctx.config['data']['tr_seconds']
    partition = ctx.partition()

    def convert(subject_id):
        timecourse = read_timecourse(_timecourse_path(ctx, subject_id), tr_seconds=tr_seconds)
        partition.check_covers(timecourse.n_networks)
        sequence = windowed_correlation(timecourse, taper, geometry['step'])
        ctx.writer.write_with([f'dfnc/{subject_id}.bin', f'dfnc/{subject_id}.json'],
                              lambda payload, _sidecar: write_dfnc(sequence, payload))
        return sequence.n_windows

    counts = ctx.map(convert, ctx.labels_frame()['subject_id'].tolist())
    logger.info("Computed dFNC for %d subjects (%d windows each)", len(counts), counts[0] if counts else 0)


def stage_train(ctx):
    design = ctx.design()
    ids = design['subject_id'].tolist()
    labels = design['y'].to_numpy()
    data = ctx.dfnc_stack(ids)
    k = ctx.config['training']['folds']
    plan = stratified_kfold(labels, k=k, seed=derive_seed(ctx.seed, 'folds'))
    ctx.writer.write_json('folds.json', {**plan.to_dict(), 'subjects': ids})
    ctx.cache['plan'] = plan
    model_config = ctx.config.model_config(data.shape[2], data.shape[1])
    hyper = ctx.config.hyperparams()

    def run_fold(fold):
        train, val = plan.split(fold)
        fold_seed = derive_seed(ctx.seed, 'train', fold)
        logger.info("Fold %d/%d: %d training and %d validation subjects", fold + 1, k, len(train), len(val))
        params, history = train_fold(data[train], labels[train], data[val], labels[val],
                                     model_config, hyper, seed=fold_seed, fold=fold + 1)
        checkpoint = Checkpoint(model_config=model_config, params=params, seed=fold_seed, fold=fold + 1,
                                optim_state=history.optim_state)
        ctx.writer.write_checkpoint(f'checkpoints/fold_{fold + 1}.ckpt', checkpoint)
        ctx.writer.write_frame(f'histories/fold_{fold + 1}.csv', history.to_frame())
        return history.train_loss[-1]

    losses = ctx.map(run_fold, range(k))
    logger.info("Training finished; final training losses %s", ', '.join(f'{v:.4f}' for v in losses))


def _validation(ctx, fold):
    design = ctx.design()
    _train, val = ctx.fold_plan().split(fold)
    rows = design.iloc[val]
    return rows, ctx.dfnc_stack(rows['subject_id'].tolist())


def stage_eval(ctx):
    plan = ctx.fold_plan()
    ctx.design()
    group_order = list(ctx.config['design']['negative']) + list(ctx.config['design']['positive'])

    def evaluate(fold):
        rows, data = _validation(ctx, fold)
        checkpoint = ctx.checkpoint(fold)
        scores = predict_scores(data, checkpoint.params, checkpoint.model_config)
        predicted = predict_labels(scores, checkpoint.model_config)
        record = classification_metrics(confusion_counts(rows['y'].to_numpy(), predicted))
        tags = rows['subgroup'].to_numpy()
        present = [g for g in group_order if g in set(tags)]
        report = mean_scores_by_group(scores, tags, present)
        attention = collect_attention(data, checkpoint.params, checkpoint.model_config)
        return record, report, attention, tags

    results = ctx.map(evaluate, range(plan.k))
    records = [r[0] for r in results]
    ctx.writer.write_text('metrics.csv', metrics_csv_text(records))
    frame, mean, sd = summarise_folds(records)

    group_rows = []
    for fold, (record, report, _attention, _tags) in enumerate(results):
        for group in report.order:
            group_rows.append({'fold': str(fold + 1), 'group': group, 'n': report.sizes[group],
                               'score': report.means[group], 'acc': record.acc, 'f1': record.f1})
    groups = pd.DataFrame(group_rows)
    means = groups.groupby('group', sort=False)[['score', 'acc', 'f1']].mean().reset_index()
    means.insert(0, 'fold', 'mean')
    means.insert(2, 'n', groups.groupby('group', sort=False)['n'].sum().to_numpy())
    ctx.writer.write_text('group_scores.csv', _frame_text(pd.concat([groups, means], ignore_index=True), '%.4f'))

    for group in group_order:
        spatial = [a.attn_s[t == group] for _r, _g, a, t in results]
        temporal = [a.attn_t[t == group] for _r, _g, a, t in results]
        spatial = np.concatenate(spatial)
        if spatial.shape[0] == 0:
            continue
        ctx.writer.write_text(f'attention/{group}_spatial.csv', matrix_csv_text(spatial.mean(axis=0)))
        ctx.writer.write_text(f'attention/{group}_temporal.csv',
                              matrix_csv_text(np.concatenate(temporal).mean(axis=0)))

    summary = {
        'folds': [r.to_dict() for r in records],
        'mean': {k: float(v) for k, v in mean.items()},
        'sd': {k: float(v) for k, v in sd.items()},
        'balanced_acc_mean': float(np.mean([r.balanced_acc for r in records])),
        'group_scores': {g: float(v) for g, v in zip(means['group'], means['score'])},
    }
    baseline = ctx.baseline or ctx.config['baseline_metrics']
    if baseline:
        comparison = comparison_frame(frame, read_metrics_csv(baseline))
        ctx.writer.write_text('comparison.csv', _frame_text(comparison, '%.6g'))
        summary['baseline'] = str(baseline)
    ctx.writer.write_json('summary.json', summary)
    if ctx.record:
        recording.record_metrics(ctx.config, ctx.writer.root, records)
    logger.info("Mean over %d folds: %s", plan.k, ', '.join(f'{k}={v:.2f}' for k, v in mean.items()))


def stage_cam(ctx):
    plan = ctx.fold_plan()
    ctx.design()
    cam = ctx.config['cam']
    partition = ctx.partition()
    negative_name = '+'.join(ctx.config['design']['negative'])
    positive_name = '+'.join(ctx.config['design']['positive'])

    def explain(fold):
        rows, data = _validation(ctx, fold)
        checkpoint = ctx.checkpoint(fold)
        params, model_config = checkpoint.params, checkpoint.model_config
        targets = rows['y'].to_numpy() if cam['target'] == 'true' else None
        maps = {method: subject_saliency(params, model_config, data, method, targets, cam['layer'])
                for method in CAM_METHODS}
        confidence = {}
        for method, subject_maps in maps.items():
            drops = [confidence_fidelity(params, model_config, data[i], m, cam['fractions']).mean_drop
                     for i, m in enumerate(subject_maps)]
            confidence[method] = float(np.mean(drops))
        subject_targets = [m.target for m in maps[cam['method']]]
        confidence['random'] = random_fidelity(params, model_config, data, cam['fractions'], subject_targets,
                                               seed=derive_seed(ctx.seed, 'random-map', fold),
                                               n_seeds=cam['random_seeds'])
        return rows['y'].to_numpy(), maps[cam['method']], confidence

    results = ctx.map(explain, range(plan.k))

    confidence_rows = [{'fold': str(f + 1), 'method': m, 'confidence': v}
                       for f, (_y, _maps, conf) in enumerate(results) for m, v in conf.items()]
    confidence = pd.DataFrame(confidence_rows)
    means = confidence.groupby('method', sort=False)['confidence'].mean()
    best = means.idxmax()
    summary_rows = pd.DataFrame({'fold': 'mean', 'method': means.index, 'confidence': means.to_numpy()})
    table = pd.concat([confidence, summary_rows], ignore_index=True)
    table['best'] = np.where((table['fold'] == 'mean') & (table['method'] == best), '*', '')
    ctx.writer.write_text('cam_confidence.csv', _frame_text(table, '%.6g'))
    logger.info("Highest mean confidence: %s (%.4f)", best, means[best])

    labels = partition.names
    all_maps, all_y = [], []
    for fold, (y, maps, _conf) in enumerate(results):
        all_maps.extend(maps)
        all_y.extend(y.tolist())
        by_group = {0: [m for m, t in zip(maps, y) if t == 0], 1: [m for m, t in zip(maps, y) if t == 1]}
        if by_group[0] and by_group[1]:
            difference = threshold_difference_map(by_group[0], by_group[1], cam['threshold'],
                                                  names=(negative_name, positive_name))
            ctx.writer.write_text(f'cams/fold_{fold + 1}_difference.csv', matrix_csv_text(difference.raw))
            ctx.writer.write_text(f'cams/fold_{fold + 1}_difference_thresholded.csv',
                                  matrix_csv_text(difference.retained))
            domains = domain_aggregate(difference.raw, partition)
            ctx.writer.write_text(f'cams/fold_{fold + 1}_domain_difference.csv',
                                  matrix_csv_text(domains.values, labels))

    means = group_mean_maps(all_maps, all_y, groups=[0, 1])
    ctx.writer.write_text(f'cams/group_{negative_name}.csv', matrix_csv_text(means[0]))
    ctx.writer.write_text(f'cams/group_{positive_name}.csv', matrix_csv_text(means[1]))
    difference = threshold_difference_map([m for m, t in zip(all_maps, all_y) if t == 0],
                                          [m for m, t in zip(all_maps, all_y) if t == 1],
                                          cam['threshold'], names=(negative_name, positive_name))
    ctx.writer.write_text('cams/difference.csv', matrix_csv_text(difference.raw))
    ctx.writer.write_text('cams/difference_thresholded.csv', matrix_csv_text(difference.retained))
    ctx.writer.write_text('cams/domain_difference.csv',
                          matrix_csv_text(domain_aggregate(difference.raw, partition).values, labels))


def _read_matrix(ctx, relative, labelled=False):
    frame = pd.read_csv(ctx.writer.path(relative), index_col=0 if labelled else None,
                        float_precision='round_trip')
    return frame.to_numpy(dtype=np.float64)


def stage_report(ctx):
    partition = ctx.partition()
    design = ctx.design()
    negative_name = '+'.join(ctx.config['design']['negative'])
    positive_name = '+'.join(ctx.config['design']['positive'])
    threshold = ctx.config['cam']['threshold']

    figures = {
        'figures/cam_difference.svg': (
            _read_matrix(ctx, 'cams/difference_thresholded.csv'), partition, None,
            f'CAM {negative_name} minus {positive_name}, |value| >= {threshold}'),
        f'figures/cam_{negative_name}.svg': (
            _read_matrix(ctx, f'cams/group_{negative_name}.csv'), partition, (-1.0, 1.0), f'CAM {negative_name}'),
        f'figures/cam_{positive_name}.svg': (
            _read_matrix(ctx, f'cams/group_{positive_name}.csv'), partition, (-1.0, 1.0), f'CAM {positive_name}'),
    }

    static = ctx.dfnc_stack(design['subject_id'].tolist()).mean(axis=1)
    y = design['y'].to_numpy()
    fnc = threshold_difference_map(list(static[y == 0]), list(static[y == 1]), threshold,
                                   names=(negative_name, positive_name))
    ctx.writer.write_text('fnc_difference.csv', matrix_csv_text(fnc.raw))
    figures['figures/fnc_difference.svg'] = (
        fnc.retained, partition, (-1.0, 1.0), f'FNC {negative_name} minus {positive_name}, |value| >= {threshold}')

    for name, (matrix, part, bounds, title) in figures.items():
        ctx.writer.write_text(name, heatmap_svg(matrix, part, bounds, title))

    domains = _read_matrix(ctx, 'cams/domain_difference.csv', labelled=True)
    ctx.writer.write_text('figures/cam_domain_difference.svg',
                          heatmap_svg(domains, None, None, 'Domain-level CAM difference', labels=partition.names))

    for group in list(ctx.config['design']['negative']) + list(ctx.config['design']['positive']):
        if not ctx.writer.exists(f'attention/{group}_spatial.csv'):
            continue
        spatial = _read_matrix(ctx, f'attention/{group}_spatial.csv')
        temporal = _read_matrix(ctx, f'attention/{group}_temporal.csv')
        ctx.writer.write_text(f'figures/attention_{group}_spatial.svg',
                              heatmap_svg(spatial, partition, (-1.0, 1.0), f'Spatial attention {group}'))
        ctx.writer.write_text(f'figures/attention_{group}_temporal.svg',
                              heatmap_svg(temporal, None, (-1.0, 1.0), f'Temporal attention {group}'))


STAGE_FUNCTIONS = {
    'synth': stage_synth,
    'dfnc': stage_dfnc,
    'train': stage_train,
    'eval': stage_eval,
    'cam': stage_cam,
    'report': stage_report,
}


def open_run(config, baseline=None, record=None):
    root = config.output_dir()
    seeds = {'root': config.seed, **{stage: derive_seed(config.seed, stage) for stage in ('synth', 'folds')}}
    writer = RunWriter(root, config=config.to_dict(), seeds=seeds)
    if record is None:
        record = settings.HARNESS_RECORD_RUNS
    return RunContext(config=config, writer=writer, baseline=baseline, record=record)


def run_stage(ctx, stage):
    """Run one stage, recording its status in the manifest; failures are re-raised."""
    logger.info("Stage %s started in %s", stage, ctx.writer.root)
    ctx.writer.stage_started(stage)
    try:
        STAGE_FUNCTIONS[stage](ctx)
    except Exception as exc:
        ctx.writer.stage_failed(stage, exc)
        if ctx.record:
            recording.mark_run(ctx.config, ctx.writer.root, 'failed', stage)
        logger.error("Stage %s failed: %s", stage, exc)
        raise
    ctx.writer.stage_finished(stage)
    logger.info("Stage %s finished", stage)


def run_experiment(config, baseline=None, record=None):
    """Every stage in order; returns the run context (its writer holds the manifest)."""
    ctx = open_run(config, baseline=baseline, record=record)
    if ctx.record:
        recording.mark_run(config, ctx.writer.root, 'running')
    for stage in STAGES:
        run_stage(ctx, stage)
    if ctx.record:
        recording.mark_run(config, ctx.writer.root, 'ok')
    ctx.writer.flush()
    return ctx
