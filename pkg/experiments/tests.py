import io
import json
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, tag

from detection.checkpoint import load_checkpoint
from detection.detector import OC4SeqModel, score_many
from detection.services import DetectorTrainingService
from evaluation.exports import read_csv_rows
from sequences.data import ABNORMAL, NORMAL, DatasetSplit
from sequences.services import load_sequences
from .config import RunConfigError, load_run_config, parse_override
from .models import ExperimentRun
from .services import ExperimentService

SMALL_CONFIG = {
    'seed': 7,
    'num_events': 6,
    'out_degree': 2,
    'min_length': 8,
    'max_length': 12,
    'n_normal': 40,
    'n_train': 20,
    'n_abnormal': 10,
    'epochs': 2,
    'batch_size': 8,
    'hidden_size': 4,
    'layers': 1,
    'embed_dim': 3,
    'window': 3,
    'sweep_alphas': [0.0, 1.0],
    'sweep_layers': [1],
}

# 20 оставшихся нормальных: 6 в валидацию, 14 в тест; 10 аномальных: 3 и 7
SMALL_SPLIT_COUNTS = {
    'train_normal.txt': 20,
    'val_normal.txt': 6,
    'val_abnormal.txt': 3,
    'test_normal.txt': 14,
    'test_abnormal.txt': 7,
}


def count_lines(path):
    return len(Path(path).read_text(encoding='utf-8').splitlines())


class RunConfigTests(SimpleTestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.config_path = Path(tmp.name) / 'config.json'

    def write_config(self, payload):
        self.config_path.write_text(json.dumps(payload), encoding='utf-8')
        return self.config_path

    def test_defaults(self):
        config = load_run_config()
        self.assertEqual(config['lr'], 0.01)
        self.assertEqual(config['batch_size'], 64)
        self.assertEqual(config['sweep_alphas'], [0.0, 0.01, 0.1, 1.0, 10.0])

    def test_flag_overrides_file_overrides_default(self):
        path = self.write_config({'epochs': 5, 'alpha': 0.5})
        config = load_run_config(path, ['alpha=2'])
        self.assertEqual(config['epochs'], 5)
        self.assertEqual(config['alpha'], 2.0)
        self.assertEqual(config['layers'], 2)

    def test_unknown_keys_rejected(self):
        with self.assertRaises(RunConfigError):
            load_run_config(self.write_config({'learning_rate': 0.1}))
        with self.assertRaises(RunConfigError):
            load_run_config(overrides=['depth=3'])

    def test_form_validation(self):
        for override in ('num_events=1', 'epochs="many"', 'detector="svm"', 'sweep_layers=[0]', 'window=0'):
            with self.subTest(override=override):
                with self.assertRaises(RunConfigError):
                    load_run_config(overrides=[override])
        with self.assertRaises(RunConfigError):
            load_run_config(overrides=['num_events=3', 'out_degree=4'])
        with self.assertRaises(RunConfigError):
            load_run_config(overrides=['min_length=10', 'max_length=5'])

    def test_bad_config_file(self):
        self.config_path.write_text('{not json', encoding='utf-8')
        with self.assertRaises(RunConfigError):
            load_run_config(self.config_path)
        with self.assertRaises(RunConfigError):
            load_run_config(self.config_path.with_name('missing.json'))

    def test_parse_override(self):
        self.assertEqual(parse_override('alpha=0.5'), ('alpha', 0.5))
        self.assertEqual(parse_override('output_dir=runs/x'), ('output_dir', 'runs/x'))
        self.assertEqual(parse_override('sweep_layers=[1, 2]'), ('sweep_layers', [1, 2]))
        with self.assertRaises(RunConfigError):
            parse_override('alpha')


class CommandTestCase(TestCase):
    """Команды на маленьком синтетическом корпусе во временном каталоге"""

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.root = Path(tmp.name)
        self.data_dir = self.root / 'data'
        self.run_dir = self.root / 'run'
        self.config_path = self.root / 'config.json'
        self.config_path.write_text(json.dumps(dict(
            SMALL_CONFIG, data_dir=str(self.data_dir), output_dir=str(self.run_dir),
        )), encoding='utf-8')

    def call(self, name, *overrides):
        args = ['--config', str(self.config_path)]
        for override in overrides:
            args += ['--set', override]
        out = io.StringIO()
        call_command(name, *args, stdout=out)
        return out.getvalue()

    def service(self, *overrides):
        return ExperimentService(load_run_config(self.config_path, overrides))

    def assertExitCode(self, code, name, *overrides):
        with self.assertRaises(CommandError) as ctx:
            self.call(name, *overrides)
        self.assertEqual(ctx.exception.returncode, code)


class GenCommandTests(CommandTestCase):

    def test_files_match_requested_counts(self):
        output = self.call('gen')
        self.assertIn('gen', output)
        for name, expected in SMALL_SPLIT_COUNTS.items():
            self.assertEqual(count_lines(self.data_dir / name), expected, name)
        manifest = json.loads((self.data_dir / 'manifest.json').read_text(encoding='utf-8'))
        self.assertEqual(manifest['counts'], SMALL_SPLIT_COUNTS)
        self.assertEqual(len(manifest['chain']['successors']), 6)
        self.assertTrue(all(len(row) == 2 for row in manifest['chain']['successors']))

    def test_rerun_is_byte_identical(self):
        self.call('gen')
        first = {path.name: path.read_bytes() for path in self.data_dir.iterdir()}
        self.call('gen')
        second = {path.name: path.read_bytes() for path in self.data_dir.iterdir()}
        self.assertEqual(first, second)

    def test_abnormal_files_hold_injected_sequences(self):
        self.call('gen', 'anomaly_kind="permutation"')
        for seq in load_sequences(self.data_dir / 'test_abnormal.txt', ABNORMAL):
            self.assertTrue(8 <= seq.length <= 12)

    def test_invalid_config_writes_nothing(self):
        self.assertExitCode(1, 'gen', 'num_events=1')
        self.assertFalse(self.data_dir.exists())
        self.assertExitCode(1, 'gen', 'n_train=40')
        self.assertFalse(self.data_dir.exists())

    def test_usage_error(self):
        self.assertExitCode(1, 'gen', 'alpha')
        with self.assertRaises(CommandError) as ctx:
            call_command('gen', '--bogus', stdout=io.StringIO())
        self.assertEqual(ctx.exception.returncode, 1)

    def test_run_record(self):
        self.call('gen')
        run = ExperimentRun.objects.get(command='gen')
        self.assertEqual(run.status, 'completed')
        self.assertEqual(run.output_dir, str(self.run_dir))
        self.assertEqual(run.metrics['counts'], SMALL_SPLIT_COUNTS)
        self.assertIsNotNone(run.processing_time)


class PipelineCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.call('gen')

    def test_train_writes_checkpoint_and_loss_history(self):
        self.call('train', 'epochs=3')
        rows = read_csv_rows(self.run_dir / 'loss_history.csv')
        self.assertEqual([int(row['epoch']) for row in rows], [1, 2, 3])
        self.assertTrue((self.run_dir / 'checkpoint.json').is_file())

        service = self.service('epochs=3')
        _, history = DetectorTrainingService(service.train_config()).train(
            DatasetSplit(train=service.load_split('train'), val=[], test=[], seed=service.config['seed'])
        )
        self.assertEqual([float(row['loss']) for row in rows], history)

    def test_reloaded_checkpoint_reproduces_scores(self):
        self.call('train')
        self.call('score')
        service = self.service()
        model, _ = DetectorTrainingService(service.train_config()).train(
            DatasetSplit(train=service.load_split('train'), val=[], test=[], seed=service.config['seed'])
        )
        reports = score_many(model, service.load_split('test'))
        rows = read_csv_rows(self.run_dir / 'test_scores.csv')
        self.assertEqual([row['id'] for row in rows], [r.sequence_id for r in reports])
        np.testing.assert_allclose([float(row['combined']) for row in rows], [r.combined for r in reports],
                                   rtol=1e-15, atol=0)
        np.testing.assert_allclose([float(row['global']) for row in rows], [r.global_score for r in reports],
                                   rtol=1e-15, atol=0)

    def test_global_only_detector_leaves_local_head(self):
        self.call('train', 'detector="oc4seq-global-only"')
        model = load_checkpoint(self.run_dir / 'checkpoint.json')
        self.assertEqual(model.config.alpha, 0.0)
        initial = OC4SeqModel.initialize(model.config, model.vocab)
        for name in model.local_param_names:
            np.testing.assert_array_equal(model.store[name], initial.store[name])

    def test_score_writes_csv_files(self):
        self.call('train')
        self.call('score')
        for split in ('val', 'test'):
            scores = read_csv_rows(self.run_dir / f'{split}_scores.csv')
            labels = read_csv_rows(self.run_dir / f'{split}_labels.csv')
            self.assertEqual(list(scores[0]), ['id', 'global', 'local_max', 'combined'])
            self.assertEqual([row['id'] for row in scores], [row['id'] for row in labels])
            for row in scores:
                self.assertAlmostEqual(float(row['combined']), float(row['global']) + float(row['local_max']),
                                       delta=1e-12)

        first = read_csv_rows(self.run_dir / 'val_labels.csv')[0]['id']
        sequence = next(seq for seq in self.service().load_split('val') if seq.id == first)
        windows = [row for row in read_csv_rows(self.run_dir / 'val_windows.csv') if row['id'] == first]
        self.assertEqual(len(windows), sequence.length - 3 + 1)

    def test_score_single_input_file(self):
        self.call('train')
        source = self.data_dir / 'test_abnormal.txt'
        self.call('score', f'input={source}', 'input_label=abnormal')
        labels = read_csv_rows(self.run_dir / 'test_abnormal_labels.csv')
        self.assertEqual(len(labels), 7)
        self.assertTrue(all(row['label'] == ABNORMAL for row in labels))

    def test_eval_writes_report_and_curve(self):
        self.call('train')
        self.call('score')
        self.call('eval')
        report = json.loads((self.run_dir / 'report.json').read_text(encoding='utf-8'))
        self.assertEqual(report['tp'] + report['fp'] + report['fn'] + report['tn'], 21)
        self.assertEqual(report['tp'] + report['fn'], 7)
        self.assertEqual(report['threshold_source'], 'val')
        self.assertTrue(0.0 <= report['average_precision'] <= 1.0)
        curve = read_csv_rows(self.run_dir / 'pr_curve.csv')
        self.assertEqual(list(curve[0]), ['threshold', 'precision', 'recall'])

    def test_eval_falls_back_to_test_threshold(self):
        self.call('train')
        self.call('score')
        (self.run_dir / 'val_scores.csv').unlink()
        self.call('eval')
        report = json.loads((self.run_dir / 'report.json').read_text(encoding='utf-8'))
        self.assertEqual(report['threshold_source'], 'test')

    def test_pca_detector(self):
        self.call('train', 'detector="pca"')
        self.call('score')
        self.call('eval')
        rows = read_csv_rows(self.run_dir / 'test_scores.csv')
        self.assertTrue(all(float(row['local_max']) == 0.0 for row in rows))
        self.assertFalse((self.run_dir / 'test_windows.csv').exists())
        self.assertTrue((self.run_dir / 'report.json').is_file())

    def test_sweep_rows_follow_grid(self):
        self.call('sweep', 'sweep_layers=[1, 2]')
        rows = read_csv_rows(self.run_dir / 'sweep.csv')
        self.assertEqual([(float(r['alpha']), int(r['layers'])) for r in rows],
                         [(0.0, 1), (1.0, 1), (0.0, 2), (1.0, 2)])

    def test_single_point_sweep_matches_train_and_eval(self):
        self.call('sweep', 'sweep_alphas=[1.0]', 'sweep_layers=[1]')
        swept = read_csv_rows(self.run_dir / 'sweep.csv')
        self.assertEqual(len(swept), 1)

        self.call('train')
        self.call('score')
        self.call('eval')
        report = json.loads((self.run_dir / 'report.json').read_text(encoding='utf-8'))
        self.assertAlmostEqual(float(swept[0]['average_precision']), report['validation_average_precision'],
                               delta=1e-12)

    def test_sweep_errors(self):
        self.assertExitCode(1, 'sweep', 'sweep_alphas=[]')
        self.assertExitCode(1, 'sweep', 'detector="pca"')

    def test_project_writes_points_and_representations(self):
        self.call('train')
        self.call('project')
        points = read_csv_rows(self.run_dir / 'projection.csv')
        self.assertEqual(len(points), 9)
        self.assertEqual({row['label'] for row in points}, {NORMAL, ABNORMAL})
        reps = read_csv_rows(self.run_dir / 'representations.csv')
        self.assertEqual(list(reps[0]), ['id', 'label', 'r0', 'r1', 'r2', 'r3'])

    def test_missing_data_is_data_error(self):
        (self.data_dir / 'train_normal.txt').unlink()
        self.assertExitCode(2, 'train')
        run = ExperimentRun.objects.get(command='train')
        self.assertEqual(run.status, 'error')
        self.assertIn('train_normal.txt', run.error_message)

    def test_missing_checkpoint_is_data_error(self):
        self.assertExitCode(2, 'score')

    def test_divergent_training_is_numeric_error(self):
        self.assertExitCode(3, 'train', 'lr=1e300', 'epochs=1')


class EvalCommandTests(CommandTestCase):
    """eval на готовых файлах оценок"""

    def write_scores(self, split, labels):
        scores = self.root / f'{split}_scores.csv'
        scores.write_text('id,global,local_max,combined\n' + ''.join(
            f's{i},1.0,0.0,1.0\n' for i in range(len(labels))), encoding='utf-8')
        label_file = self.root / f'{split}_labels.csv'
        label_file.write_text('id,label\n' + ''.join(
            f's{i},{label}\n' for i, label in enumerate(labels)), encoding='utf-8')
        return [f'{split}_scores={scores}', f'{split}_labels={label_file}']

    def test_identical_scores_give_strict_json_report(self):
        overrides = (self.write_scores('val', [NORMAL, ABNORMAL, NORMAL])
                     + self.write_scores('test', [NORMAL, ABNORMAL, ABNORMAL, NORMAL]))
        self.call('eval', *overrides)

        def reject(constant):
            raise ValueError(f"Нестрогий JSON: {constant}")

        text = (self.run_dir / 'report.json').read_text(encoding='utf-8')
        report = json.loads(text, parse_constant=reject)
        self.assertEqual(report['threshold'], '-inf')
        self.assertEqual(float(report['threshold']), -np.inf)
        self.assertEqual((report['tp'], report['fp']), (2, 2))
        self.assertEqual(report['recall'], 1.0)


class SplitCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        rng = np.random.default_rng(0)
        self.normal_path = self.root / 'keys_normal'
        self.abnormal_path = self.root / 'keys_abnormal'
        self.normal_path.write_text(
            ''.join(' '.join(str(e) for e in rng.integers(1, 9, size=6)) + '\n' for _ in range(30)), encoding='utf-8'
        )
        self.abnormal_path.write_text(
            ''.join(' '.join(str(e) for e in rng.integers(1, 9, size=6)) + '\n' for _ in range(10)), encoding='utf-8'
        )
        self.sources = (f'source_normal={self.normal_path}', f'source_abnormal={self.abnormal_path}', 'n_train=10')

    def test_keyed_split(self):
        self.call('split', *self.sources)
        self.assertEqual(count_lines(self.data_dir / 'train_normal.txt'), 10)
        self.assertEqual(count_lines(self.data_dir / 'val_normal.txt'), 6)
        self.assertEqual(count_lines(self.data_dir / 'test_normal.txt'), 14)
        self.assertEqual(count_lines(self.data_dir / 'val_abnormal.txt'), 3)
        self.assertEqual(count_lines(self.data_dir / 'test_abnormal.txt'), 7)

    def test_subsampled_split(self):
        self.call('split', *self.sources, 'max_sequences=10')
        manifest = json.loads((self.data_dir / 'manifest.json').read_text(encoding='utf-8'))
        self.assertEqual(manifest['counts'], {
            'train_normal.txt': 10,
            'val_normal.txt': 1,
            'val_abnormal.txt': 0,
            'test_normal.txt': 5,
            'test_abnormal.txt': 3,
        })

    def test_sources_required(self):
        self.assertExitCode(1, 'split')
        self.assertExitCode(2, 'split', f'source_normal={self.normal_path}',
                            f'source_abnormal={self.root / "absent"}')


ACCEPTANCE_CHAIN = ('num_events=20', 'out_degree=3', 'min_length=40', 'max_length=60',
                    'n_normal=3000', 'n_train=2000', 'n_abnormal=300', 'anomaly_span=5', 'seed=42')
ACCEPTANCE_MODEL = ('hidden_size=32', 'layers=2', 'embed_dim=16', 'window=8', 'alpha=1.0', 'epochs=30',
                    'batch_size=64', 'lr=0.01')


@tag('acceptance')
class AcceptanceTests(CommandTestCase):
    """Эксперименты полного масштаба; запускаются при OC4SEQ_ACCEPTANCE=1"""

    def read_report(self):
        return json.loads((self.run_dir / 'report.json').read_text(encoding='utf-8'))

    def test_local_anomalies_detected(self):
        self.call('gen', *ACCEPTANCE_CHAIN)
        for name in ('train', 'score', 'eval'):
            self.call(name, *ACCEPTANCE_MODEL)
        self.assertGreaterEqual(self.read_report()['f1'], 0.90)

    def test_local_head_improves_average_precision(self):
        self.call('gen', *ACCEPTANCE_CHAIN)
        self.call('sweep', *ACCEPTANCE_MODEL, 'sweep_alphas=[0.0, 1.0]', 'sweep_layers=[2]')
        ap = {float(row['alpha']): float(row['average_precision'])
              for row in read_csv_rows(self.run_dir / 'sweep.csv')}
        self.assertGreaterEqual(ap[1.0] - ap[0.0], 0.10)

    def test_order_blind_baseline_misses_permutations(self):
        chain = ACCEPTANCE_CHAIN + ('anomaly_kind="permutation"',)
        self.call('gen', *chain)
        test_abnormal = count_lines(self.data_dir / 'test_abnormal.txt')
        base_rate = test_abnormal / (test_abnormal + count_lines(self.data_dir / 'test_normal.txt'))

        for name in ('train', 'score', 'eval'):
            self.call(name, 'detector="pca"')
        self.assertLessEqual(self.read_report()['average_precision'], base_rate + 0.1)

        for name in ('train', 'score', 'eval'):
            self.call(name, *ACCEPTANCE_MODEL)
        self.assertGreaterEqual(self.read_report()['average_precision'], 0.70)

    @unittest.skipUnless(os.environ.get('OC4SEQ_HDFS_DIR'), 'OC4SEQ_HDFS_DIR не задан')
    def test_hdfs_subsample(self):
        hdfs_dir = Path(os.environ['OC4SEQ_HDFS_DIR'])
        sources = (f'source_normal={hdfs_dir / "hdfs_test_normal"}',
                   f'source_abnormal={hdfs_dir / "hdfs_test_abnormal"}',
                   'n_train=5000', 'max_sequences=20000')
        self.call('split', *sources)
        model = ('hidden_size=64', 'layers=2', 'embed_dim=32', 'window=10', 'alpha=1.0', 'epochs=30')
        for name in ('train', 'score', 'eval'):
            self.call(name, *model)
        self.assertGreaterEqual(self.read_report()['f1'], 0.90)
