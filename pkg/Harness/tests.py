import io
import json
import struct
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, tag
from hypothesis import given, settings, strategies as st

from Classifier.config import ModelConfig
from Classifier.params import init_params
from Connectivity.partition import DomainPartition
from Evaluation.metrics import MetricsRecord
from Harness import recording
from Harness.acceptance import (
    check_fidelity, check_ordering, check_planted_domains, check_recovery, check_run, check_threshold_retention,
)
from Harness.checkpoint import (
    FORMAT_VERSION, Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
)
from Harness.config import ExperimentConfig
from Harness.models import ExperimentRun, FoldResult
from Harness.pipeline import STAGES, run_experiment, select_design
from Harness.reports import (
    comparison_frame, diverging_color, emit_heatmap_svg, emit_metrics_csv, heatmap_svg, matrix_csv_text,
    metrics_csv_text, read_metrics_csv,
)
from Harness.writer import MANIFEST, RunWriter
from Master.validators import (
    CheckpointChecksumError, CheckpointError, CheckpointTruncatedError, CheckpointVersionError, ContractViolation,
    StratificationError,
)
from Synthetic.cohort import generate_cohort
from Synthetic.effects import subgroup_effects
from Training.optim import OptimState

SVG = '{http://www.w3.org/2000/svg}'


def small_document(output_dir, **sections):
    document = {
        'name': 'tiny',
        'seed': 7,
        'output_dir': str(output_dir),
        'threads': 1,
        'data': {'cohort': {'n_negative': 5, 'n_positive': 5, 'n_timepoints': 20, 'segment_length': 10}},
        'dfnc': {'width': 10, 'step': 2, 'sigma': 3.0},
        'model': {'conv_channels': [2], 'embed_dim': 4, 'n_blocks': 1, 'dropout': 0.0},
        'training': {'folds': 2, 'epochs': 2, 'batch_size': 4, 'log_every': 0},
        'cam': {'random_seeds': 2},
    }
    document.update(sections)
    return document


def edit_header(blob, change):
    """Re-encode a checkpoint with its JSON header passed through ``change``."""
    (length,) = struct.unpack_from('<Q', blob)
    header = json.loads(blob[8:8 + length])
    change(header)
    encoded = json.dumps(header).encode('utf-8')
    return struct.pack('<Q', len(encoded)) + encoded + blob[8 + length:]


def perfect_record():
    return MetricsRecord(acc=100.0, f1=100.0, precision=100.0, spec=100.0, sens=100.0, balanced_acc=100.0)


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.config = ModelConfig(n_networks=4, n_windows=3, conv_channels=(2,), embed_dim=4, n_blocks=1)
        self.params = init_params(self.config, seed=5)

    def test_round_trip_with_optimizer_state(self):
        rng = np.random.default_rng(0)
        state = OptimState(first={n: rng.normal(size=v.shape) for n, v in self.params.items()},
                           second={n: rng.random(size=v.shape) for n, v in self.params.items()}, step=3)
        blob = encode_checkpoint(Checkpoint(self.config, self.params, seed=11, fold=2, optim_state=state))
        restored = decode_checkpoint(blob)
        self.assertEqual(restored.model_config, self.config)
        self.assertEqual((restored.seed, restored.fold, restored.optim_state.step), (11, 2, 3))
        for name, value in self.params.items():
            np.testing.assert_array_equal(restored.params[name], value)
            np.testing.assert_array_equal(restored.optim_state.second[name], state.second[name])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(1, 4), st.sampled_from([1, 2]), st.integers(0, 1000))
    def test_parameters_survive_bit_exact(self, n, windows, heads, seed):
        config = ModelConfig(n_networks=n, n_windows=windows, conv_channels=(2,), embed_dim=4,
                             n_heads=heads, n_blocks=1, seed=seed)
        params = init_params(config, seed=seed)
        restored = decode_checkpoint(encode_checkpoint(Checkpoint(config, params)))
        self.assertEqual(restored.params.names(), params.names())
        for name, value in params.items():
            self.assertEqual(restored.params[name].tobytes(), np.asarray(value, dtype='<f8').tobytes())

    def test_save_and_load_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / 'fold_1.ckpt', Checkpoint(self.config, self.params, fold=1))
            restored = load_checkpoint(path)
        self.assertEqual(restored.fold, 1)
        np.testing.assert_array_equal(restored.params['head.weight'], self.params['head.weight'])

    def test_corrupt_payload_byte_fails_checksum(self):
        blob = bytearray(encode_checkpoint(Checkpoint(self.config, self.params)))
        blob[-3] ^= 0xFF
        with self.assertRaises(CheckpointChecksumError):
            decode_checkpoint(bytes(blob))

    def test_future_version_names_both_versions(self):
        checkpoint = Checkpoint(self.config, self.params, version=FORMAT_VERSION + 1)
        with self.assertRaises(CheckpointVersionError) as caught:
            decode_checkpoint(encode_checkpoint(checkpoint), source='future.ckpt')
        self.assertIn(str(FORMAT_VERSION + 1), str(caught.exception))
        self.assertIn(str(FORMAT_VERSION), str(caught.exception))

    def test_truncated_file(self):
        blob = encode_checkpoint(Checkpoint(self.config, self.params))
        for cut in (4, 20, len(blob) - 8):
            with self.assertRaises(CheckpointTruncatedError):
                decode_checkpoint(blob[:cut])

    def test_header_without_required_fields(self):
        blob = encode_checkpoint(Checkpoint(self.config, self.params))
        for field in ('sha256', 'tensors', 'payload_bytes'):
            with self.subTest(field=field):
                with self.assertRaises(CheckpointError) as caught:
                    decode_checkpoint(edit_header(blob, lambda header: header.pop(field)))
                self.assertIn(field, str(caught.exception))

    def test_malformed_tensor_table(self):
        blob = encode_checkpoint(Checkpoint(self.config, self.params))
        with self.assertRaises(CheckpointError):
            decode_checkpoint(edit_header(blob, lambda header: header['tensors'][0].pop('offset')))
        with self.assertRaises(CheckpointError):
            decode_checkpoint(edit_header(blob, lambda header: header.update(tensors=7)))


class MetricsTableTests(SimpleTestCase):
    def test_header_and_perfect_fold(self):
        lines = metrics_csv_text([perfect_record()]).splitlines()
        self.assertEqual(lines[0], 'fold,acc,f1,precision,spec,sens')
        self.assertEqual(lines[1], '1,100.00,100.00,100.00,100.00,100.00')
        self.assertEqual(lines[2], 'mean,100.00,100.00,100.00,100.00,100.00')
        self.assertEqual(lines[3], 'sd,0.00,0.00,0.00,0.00,0.00')

    def test_read_back_drops_summary_rows(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'metrics.csv'
            emit_metrics_csv([perfect_record(), perfect_record()], path)
            frame = read_metrics_csv(path)
        self.assertEqual(frame['fold'].tolist(), ['1', '2'])

    def test_comparison_marks_significant_metrics(self):
        current = pd.DataFrame({m: [90.0, 91.0, 92.0, 90.5, 91.5] for m in ('acc', 'f1', 'precision', 'spec', 'sens')})
        baseline = current.sub([10.0, 10.5, 9.5, 10.2, 9.8], axis=0)
        table = comparison_frame(current, baseline)
        self.assertEqual(table['marker'].tolist(), ['*'] * 5)
        with self.assertRaises(ContractViolation):
            comparison_frame(current, baseline.iloc[:3])


class HeatmapTests(SimpleTestCase):
    def test_two_by_two_cells_and_colors(self):
        svg = heatmap_svg(np.array([[1.0, -1.0], [0.0, 0.5]]), bounds=(-1.0, 1.0), title='demo')
        root = ET.fromstring(svg)
        cells = root.find(f"{SVG}g[@class='cells']").findall(f'{SVG}rect')
        self.assertEqual(len(cells), 4)
        self.assertEqual([c.get('fill') for c in cells], ['#ff0000', '#0000ff', '#ffffff', '#ff8080'])

    def test_color_oracle(self):
        self.assertEqual(diverging_color(0.0, (-2.0, 2.0)), '#ffffff')
        self.assertEqual(diverging_color(-1.0, (-2.0, 2.0)), '#8080ff')
        self.assertEqual(diverging_color(5.0, (-2.0, 2.0)), '#ff0000')

    def test_domain_boundaries(self):
        partition = DomainPartition.from_pairs([('A', 2), ('B', 1)])
        with tempfile.TemporaryDirectory() as tmp:
            path = emit_heatmap_svg(np.eye(3), partition, Path(tmp) / 'eye.svg')
            root = ET.parse(path).getroot()
        boundaries = root.find(f"{SVG}g[@class='domains']").findall(f'{SVG}line')
        self.assertEqual(len(boundaries), 2)

    def test_rejects_bad_input(self):
        with self.assertRaises(ContractViolation):
            heatmap_svg(np.zeros((2, 3)))
        with self.assertRaises(ContractViolation):
            heatmap_svg(np.eye(2), bounds=(0.0, 1.0))


class ExperimentConfigTests(SimpleTestCase):
    def test_defaults_fill_missing_sections(self):
        config = ExperimentConfig.from_dict({'name': 'x'})
        self.assertEqual(config['dfnc'], {'width': 10, 'step': 1, 'sigma': 3.0})
        self.assertEqual(config.hyperparams().epochs, 300)
        self.assertEqual(config.cohort_config().n_networks, 16)

    def test_unknown_keys_rejected(self):
        for document in ({'nmae': 'x'}, {'training': {'epoch': 3}}, {'data': {'cohort': {'effekt': 0.2}}}):
            with self.assertRaises(ContractViolation) as caught:
                ExperimentConfig.from_dict(document)
            self.assertEqual(caught.exception.code, 'bad_config')

    def test_overrides_take_precedence(self):
        config = ExperimentConfig.from_dict({'seed': 1}).with_overrides(seed=9, output_dir='/tmp/run', threads=3)
        self.assertEqual((config.seed, config.threads, str(config.output_dir())), (9, 3, '/tmp/run'))

    def test_model_config_carries_geometry(self):
        model = ExperimentConfig.from_dict({}).model_config(16, 26)
        self.assertEqual((model.n_networks, model.n_windows, model.attention), (16, 26, 'sparsemax'))


class RunWriterTests(SimpleTestCase):
    def test_manifest_lists_outputs_and_stage_status(self):
        with tempfile.TemporaryDirectory() as tmp:
            writer = RunWriter(tmp, config={'name': 'x'}, seeds={'root': 1})
            writer.stage_started('eval')
            writer.write_text('b.txt', 'b')
            writer.write_json('a/summary.json', {'k': 1})
            writer.stage_finished('eval')
            manifest = json.loads((Path(tmp) / MANIFEST).read_text())
        self.assertEqual(manifest['outputs'], ['a/summary.json', 'b.txt'])
        self.assertEqual(manifest['stages']['eval']['status'], 'ok')
        self.assertNotIn('failed_stage', manifest)

    def test_failed_stage_recorded(self):
        with tempfile.TemporaryDirectory() as tmp:
            writer = RunWriter(tmp)
            writer.stage_started('train')
            writer.stage_failed('train', ValueError('boom'))
            reopened = RunWriter(tmp)
        self.assertEqual(reopened.manifest['failed_stage'], 'train')
        self.assertEqual(reopened.manifest['stages']['train']['error'], 'boom')


class DesignSelectionTests(SimpleTestCase):
    def setUp(self):
        self.frame = pd.DataFrame({
            'subject_id': [f's{i}' for i in range(8)],
            'group': [0, 0, 0, 0, 1, 1, 1, 1],
            'subgroup': ['CN', 'CN', 'CN', 'CN', 'SCD', 'SCD', 'MCI', 'MCI'],
        })

    def test_labels_follow_design_sides(self):
        design = select_design(self.frame, {'negative': ['CN'], 'positive': ['MCI']}, seed=0)
        self.assertEqual(design['subgroup'].tolist(), ['CN'] * 4 + ['MCI'] * 2)
        self.assertEqual(design['y'].tolist(), [0, 0, 0, 0, 1, 1])

    def test_subsample_is_seeded(self):
        spec = {'negative': ['CN'], 'positive': ['SCD'], 'subsample': {'CN': 2}}
        first = select_design(self.frame, spec, seed=4)
        self.assertEqual(int((first['subgroup'] == 'CN').sum()), 2)
        self.assertEqual(first['subject_id'].tolist(), select_design(self.frame, spec, seed=4)['subject_id'].tolist())

    def test_rejects_overlap_and_oversized_subsample(self):
        with self.assertRaises(ContractViolation):
            select_design(self.frame, {'negative': ['CN'], 'positive': ['CN']}, seed=0)
        with self.assertRaises(ContractViolation):
            select_design(self.frame, {'negative': ['CN'], 'positive': ['SCD'], 'subsample': {'SCD': 5}}, seed=0)


class PipelineTests(SimpleTestCase):
    def run_in(self, directory, **sections):
        config = ExperimentConfig.from_dict(small_document(directory, **sections))
        return run_experiment(config, record=False)

    def test_small_run_is_deterministic(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = self.run_in(Path(tmp) / 'a').writer
            second = self.run_in(Path(tmp) / 'b').writer
            for relative in ('labels.csv', 'dfnc/sub0001.bin', 'folds.json', 'checkpoints/fold_1.ckpt',
                             'metrics.csv', 'cam_confidence.csv', 'cams/difference.csv', 'figures/cam_difference.svg'):
                self.assertEqual(first.path(relative).read_bytes(), second.path(relative).read_bytes(), relative)
            manifest = json.loads(first.path(MANIFEST).read_text())
            self.assertEqual([manifest['stages'][s]['status'] for s in STAGES], ['ok'] * len(STAGES))
            self.assertIn('metrics.csv', manifest['outputs'])
            metrics = first.path('metrics.csv').read_text().splitlines()
            self.assertEqual(len(metrics), 1 + 2 + 2)
            confidence = pd.read_csv(first.path('cam_confidence.csv'), dtype={'fold': str}, keep_default_na=False)
            self.assertEqual(set(confidence['method']), {'layercam', 'gradcam', 'random'})
            self.assertEqual((confidence['best'] == '*').sum(), 1)

    def test_stratification_failure_marks_stage(self):
        document = small_document('unused', data={'cohort': {'n_negative': 5, 'n_positive': 2,
                                                              'n_timepoints': 20, 'segment_length': 10}},
                                  training={'folds': 3, 'epochs': 1, 'log_every': 0})
        with tempfile.TemporaryDirectory() as tmp:
            document['output_dir'] = tmp
            with self.assertRaises(StratificationError):
                run_experiment(ExperimentConfig.from_dict(document), record=False)
            manifest = json.loads((Path(tmp) / MANIFEST).read_text())
        self.assertEqual(manifest['failed_stage'], 'train')
        self.assertEqual(manifest['stages']['dfnc']['status'], 'ok')

    def test_command_reports_contract_violations(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'bad.json'
            path.write_text(json.dumps({'training': {'folds': 1}}))
            with self.assertRaises(CommandError):
                call_command('synth', config=str(path), no_record=True)


class RecordingTests(TestCase):
    def setUp(self):
        self.config = ExperimentConfig.from_dict({'name': 'recorded', 'seed': 3})

    def test_fold_rows_replace_previous_ones(self):
        record = MetricsRecord(acc=80.0, f1=75.0, precision=70.0, spec=85.0, sens=80.0, balanced_acc=82.5)
        recording.record_metrics(self.config, '/runs/recorded', [record, perfect_record()])
        recording.record_metrics(self.config, '/runs/recorded', [record])
        run = ExperimentRun.objects.get(output_dir='/runs/recorded')
        self.assertEqual(run.seed, 3)
        self.assertEqual(list(run.folds.values_list('fold', 'balanced_acc')), [(1, 82.5)])
        self.assertEqual(FoldResult.objects.count(), 1)

    def test_failed_status_keeps_stage(self):
        recording.mark_run(self.config, '/runs/recorded', 'failed', 'cam')
        run = recording.mark_run(self.config, '/runs/recorded', 'failed', 'cam')
        self.assertEqual((run.status, run.failed_stage), ('failed', 'cam'))
        self.assertEqual(recording.mark_run(self.config, '/runs/recorded', 'ok').failed_stage, '')


CONFIG_DIR = Path(__file__).resolve().parent.parent / 'configs'


class ShippedConfigTests(SimpleTestCase):
    def test_every_config_builds_its_cohort_without_repair(self):
        paths = sorted(CONFIG_DIR.glob('*.json'))
        self.assertGreaterEqual(len(paths), 2)
        for path in paths:
            with self.subTest(config=path.name):
                config = ExperimentConfig.from_file(path)
                cohort_config = config.cohort_config()
                with self.assertLogs('Synthetic.cohort', level='INFO') as logs:
                    cohort = generate_cohort(cohort_config, seed=config.seed)
                self.assertEqual([line for line in logs.output if 'Clipped' in line], [])
                self.assertEqual(len(cohort), cohort_config.n_subjects)
                design = select_design(cohort.label_frame(), config['design'], config.seed)
                self.assertEqual(set(design['y']), {0, 1})

    def test_progression_subgroups_are_graded(self):
        config = ExperimentConfig.from_file(CONFIG_DIR / 'progression.json')
        cohort = generate_cohort(config.cohort_config(), seed=config.seed)
        effects = subgroup_effects(cohort, ('CC', 'CC'))
        self.assertEqual(list(effects), ['Asym', 'AD'])
        self.assertLess(effects['Asym'], effects['AD'])


class AcceptanceCheckTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        (self.root / 'cams').mkdir()
        self.config = ExperimentConfig.from_dict({
            'training': {'folds': 5},
            'design': {'negative': ['CN'], 'positive': ['Asym', 'AD']},
        })

    def write_summary(self, balanced, sens):
        (self.root / 'summary.json').write_text(json.dumps({'balanced_acc_mean': balanced, 'mean': {'sens': sens}}))

    def test_recovery_thresholds(self):
        self.write_summary(92.0, 84.0)
        self.assertFalse(check_recovery(self.config, self.root).passed)
        self.write_summary(92.0, 86.0)
        self.assertTrue(check_recovery(self.config, self.root).passed)

    def test_planted_domain_blocks_must_lead_in_enough_folds(self):
        rng = np.random.default_rng(0)
        names = list(self.config.cohort_config().partition.names)
        cc, sm, vs = names.index('CC'), names.index('SM'), names.index('VS')
        for fold in range(1, 6):
            noise = rng.uniform(-0.1, 0.1, size=(4, 4))
            values = noise + noise.T
            if fold < 5:
                values[cc, cc] = 0.9
                values[sm, vs] = values[vs, sm] = -0.8
            path = self.root / 'cams' / f'fold_{fold}_domain_difference.csv'
            path.write_text(matrix_csv_text(values, names))
        result = check_planted_domains(self.config, self.root)
        self.assertTrue(result.passed, result.detail)
        (self.root / 'cams' / 'fold_2_domain_difference.csv').unlink()
        self.assertFalse(check_planted_domains(self.config, self.root).passed)

    def test_threshold_retention_counts_planted_entries_only(self):
        for fold in range(1, 6):
            retained = np.zeros((16, 16))
            i, j = (12, 13) if fold < 4 else (0, 1)
            retained[i, j] = retained[j, i] = 1.0
            (self.root / 'cams' / f'fold_{fold}_difference_thresholded.csv').write_text(matrix_csv_text(retained))
        result = check_threshold_retention(self.config, self.root)
        self.assertFalse(result.passed)
        self.assertIn('in 3 folds', result.detail)

    def test_fidelity_compares_layercam_with_random_per_fold(self):
        rows = []
        for fold in range(1, 6):
            rows.append({'fold': str(fold), 'method': 'layercam', 'confidence': 0.05 if fold < 5 else 0.0})
            rows.append({'fold': str(fold), 'method': 'gradcam', 'confidence': 0.02})
            rows.append({'fold': str(fold), 'method': 'random', 'confidence': 0.01})
        rows.append({'fold': 'mean', 'method': 'layercam', 'confidence': 0.04})
        pd.DataFrame(rows).to_csv(self.root / 'cam_confidence.csv', index=False)
        result = check_fidelity(self.config, self.root)
        self.assertTrue(result.passed)
        self.assertIn('4 of 5', result.detail)

    def test_group_ordering_follows_design_sides(self):
        rows = []
        for fold in range(1, 6):
            scores = {'CN': 0.2, 'Asym': 0.5 if fold < 4 else 0.9, 'AD': 0.8}
            rows.extend({'fold': str(fold), 'group': g, 'n': 8, 'score': s} for g, s in scores.items())
        pd.DataFrame(rows).to_csv(self.root / 'group_scores.csv', index=False)
        result = check_ordering(self.config, self.root)
        self.assertFalse(result.passed)
        self.assertIn('CN < Asym < AD in 3 folds', result.detail)

    def test_missing_outputs_are_reported(self):
        with self.assertRaises(ContractViolation):
            check_fidelity(self.config, self.root)

    def test_command_fails_on_a_failed_check(self):
        path = self.root / 'config.json'
        path.write_text(json.dumps({'training': {'folds': 5}}))
        self.write_summary(95.0, 90.0)
        call_command('acceptance', config=str(path), out=str(self.root), check=['recovery'], no_record=True,
                     stdout=io.StringIO())
        self.write_summary(80.0, 90.0)
        with self.assertRaises(CommandError):
            call_command('acceptance', config=str(path), out=str(self.root), check=['recovery'], no_record=True,
                         stdout=io.StringIO())


@tag('slow')
class SyntheticRecoveryTests(SimpleTestCase):
    """Full desk-scale runs; select with ``manage.py test --tag slow``."""

    def run_config(self, name, directory):
        config = ExperimentConfig.from_file(CONFIG_DIR / name).with_overrides(output_dir=directory)
        run_experiment(config, record=False)
        return config

    def assertChecksPass(self, results):
        for result in results:
            self.assertTrue(result.passed, f'{result.name}: {result.detail}')

    def test_desk_cohort_is_recovered(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = self.run_config('desk.json', tmp)
            self.assertChecksPass(check_run(config, names=[
                'recovery', 'planted_domains', 'threshold_retention', 'fidelity',
            ]))

    def test_progression_scores_are_ordered(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = self.run_config('progression.json', tmp)
            self.assertChecksPass(check_run(config, names=['ordering']))
