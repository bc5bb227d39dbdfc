import json
import os
import struct
import tempfile
import unittest
import xml.etree.ElementTree as ET
from collections import defaultdict

import numpy as np
import torch
from django.conf import settings
from django.test import SimpleTestCase

from src.services.model_zoo_service.training import evaluate_accuracy
from src.shared.exceptions import InvalidConfig, IoFailure, MalformedHeader, NonFinite
from src.shared.utils import sha256_file
from .datasets import (
    class_balanced_halves, desk_scale_splits, load_cifar10_binary, load_idx, read_idx, synth_dataset,
)
from .experiments import pearson, run_experiment
from .pipeline import Workbench, block_of
from .plots import heat_grid, line_plot, scatter_plot
from .reports import ExperimentReport, Table, format_cell, image_grid, table_text, write_ppm, write_reports
from .serializers import ExperimentConfig, load_experiment_config, parse_config_text


def _idx_bytes(dims, body):
    return bytes([0, 0, 0x08, len(dims)]) + struct.pack(f'>{len(dims)}I', *dims) + bytes(body)


def _tiny_cfg(experiment, **overrides):
    values = {
        'experiment': experiment,
        'seed': 3,
        'class_count': 4,
        'train_size': 40,
        'surrogate_size': 24,
        'attack_size': 12,
        'target_presets': 'tinyvgg',
        'target_epochs': 1,
        'distill_queries': 12,
        'distill_epochs': 1,
        'distill_lr': 0.005,
        'attack_samples': 4,
        'modes': 'score',
        'methods': 'simba-ods',
        'query_budgets': '2,5',
        'query_budget': 5,
        'unbounded_query_budget': 5,
        'eps_grid': '0.5',
        'pgd_iterations': 2,
        'target_splits': '6',
        'surrogate_splits': '3,6',
        'dump_samples': 1,
        'batch_sizes': '2,512',
        'shape_channels': '8',
        'shape_widths': '8',
    }
    values.update(overrides)
    return ExperimentConfig.create(**values)


def _read(path):
    with open(path, 'rb') as f:
        return f.read()


class DatasetTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def _file(self, name, data):
        path = os.path.join(self.tmp.name, name)
        with open(path, 'wb') as f:
            f.write(data)
        return path

    def test_idx_images_and_labels(self):
        images = self._file('images.idx', _idx_bytes((2, 3, 4), range(24)))
        labels = self._file('labels.idx', _idx_bytes((2,), [1, 0]))
        self.assertEqual(read_idx(images).shape, (2, 3, 4))
        dataset = load_idx(images, labels, class_count=2)
        self.assertEqual(dataset.image_shape, (1, 3, 4))
        self.assertEqual(dataset.labels.tolist(), [1, 0])
        self.assertAlmostEqual(float(dataset.images[0, 0, 0, 1]), 1 / 255)

    def test_malformed_idx(self):
        with self.assertRaises(MalformedHeader):
            read_idx(self._file('bad.idx', b'\x01\x00\x08\x01\x00\x00\x00\x01\x05'))
        with self.assertRaises(MalformedHeader):
            read_idx(self._file('short.idx', _idx_bytes((4,), [1, 2])))
        with self.assertRaises(IoFailure):
            read_idx(os.path.join(self.tmp.name, 'missing.idx'))

    def test_cifar10_records(self):
        record = bytes([7]) + bytes(range(256)) * 12
        for i in range(1, 6):
            self._file(f'data_batch_{i}.bin', record * 2)
        dataset = load_cifar10_binary(self.tmp.name)
        self.assertEqual(tuple(dataset.images.shape), (10, 3, 32, 32))
        self.assertTrue((dataset.labels == 7).all())
        self._file('test_batch.bin', record[:-1])
        with self.assertRaises(MalformedHeader):
            load_cifar10_binary(self.tmp.name, train=False)

    def test_synthetic_is_deterministic(self):
        a = synth_dataset(32, seed=5)
        b = synth_dataset(32, seed=5)
        self.assertTrue(torch.equal(a.images, b.images))
        self.assertTrue(torch.equal(a.labels, b.labels))
        self.assertFalse(torch.equal(a.images, synth_dataset(32, seed=6).images))
        self.assertTrue(((a.images >= 0) & (a.images <= 1)).all())

    def test_halves_are_disjoint_and_balanced(self):
        pool = synth_dataset(40, class_count=4, seed=1)
        first, second = class_balanced_halves(pool, seed=1)
        self.assertFalse(set(first.ids) & set(second.ids))
        self.assertEqual(len(first) + len(second), 40)
        self.assertEqual(torch.bincount(first.labels).tolist(), torch.bincount(second.labels).tolist())

    def test_desk_scale_sizes(self):
        splits = desk_scale_splits(0, class_count=4, sizes={'TRAIN': 8, 'SURROGATE_TRAIN': 24, 'ATTACK_EVAL': 12})
        self.assertEqual(len(splits['train']), 8)
        self.assertEqual(len(splits['surrogate']), 24)
        self.assertEqual(len(splits['attack']), 12)
        self.assertFalse(set(splits['surrogate'].ids) & set(splits['attack'].ids))


class ConfigTests(SimpleTestCase):
    def test_parse_text(self):
        values = parse_config_text('# run\nseed = 4\n\nmodes=score,hard  # two modes\n')
        self.assertEqual(values, {'seed': '4', 'modes': 'score,hard'})
        cfg = ExperimentConfig.create(experiment='eps-table', **values)
        self.assertEqual(cfg.seed, 4)
        self.assertEqual(cfg.modes, ('score', 'hard'))
        self.assertEqual(cfg.query_budget, 100)
        self.assertEqual(cfg.eps_grid, (0.25, 0.5, 1.0, 1.5))

    def test_rejects_bad_lines(self):
        for text in ('colour=blue\n', 'seed=1\nseed=2\n', 'seed\n', '=3\n'):
            with self.assertRaises(InvalidConfig):
                parse_config_text(text)

    def test_rejects_bad_values(self):
        for bad in ({'modes': 'score,loud'}, {'attack_samples': 2000}, {'alpha': 0, 'query_alpha': 0, 'beta': 0},
                    {'distill_lr': 0}, {'input_size': 20}, {'experiment': 'nope'}):
            with self.assertRaises(InvalidConfig):
                ExperimentConfig.create(**{'experiment': 'eps-table', **bad})

    def test_config_text_round_trip(self):
        cfg = _tiny_cfg('split-matrix')
        self.assertEqual(ExperimentConfig.create(**parse_config_text(cfg.to_config_text())), cfg)

    def test_load_file_and_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.cfg')
            with open(path, 'w') as f:
                f.write('seed=9\nmethods=gfcs\n')
            cfg = load_experiment_config(path, experiment='sr-vs-queries', seed=None)
            self.assertEqual((cfg.seed, cfg.methods), (9, ('gfcs',)))
            self.assertEqual(load_experiment_config(path, experiment='sr-vs-queries', seed=2).seed, 2)

            manifest = os.path.join(tmp, 'manifest.json')
            with open(manifest, 'w') as f:
                json.dump({'config': cfg.to_dict()}, f)
            self.assertEqual(load_experiment_config(manifest), cfg)
            with self.assertRaises(IoFailure):
                load_experiment_config(os.path.join(tmp, 'missing.cfg'), experiment='eps-table')


class ReportTests(SimpleTestCase):
    def test_cells(self):
        self.assertEqual(format_cell(None), '')
        self.assertEqual(format_cell(True), 'true')
        self.assertEqual(format_cell(0.25), '0.25')
        self.assertEqual(format_cell(np.float32(0.5)), '0.5')
        self.assertEqual(format_cell(7), '7')
        with self.assertRaises(NonFinite):
            format_cell(float('nan'))

    def test_table_text(self):
        table = Table('t', ['a', 'b'])
        table.add(a=1, b=None)
        table.add(a='x,y', b=0.5)
        self.assertEqual(table_text(table), 'a,b\r\n1,\r\n"x,y",0.5\r\n')
        self.assertEqual(table_text(Table('empty', ['a'])), 'a\r\n')
        with self.assertRaises(InvalidConfig):
            table.add(b=1, a=2)

    def test_charts_are_well_formed(self):
        charts = [
            line_plot('SR <curve>', {'a & b': [(5, 0.1), (10, None), (100, 0.6)], 'c': [(5, 0.0)]},
                      'queries', 'sr', log_x=True),
            scatter_plot('scatter', [(0.2, 0.4, 3, 'p'), (0.5, 0.9, 6, 'q'), (None, 0.1, 6, 'skip')],
                         'acc', 'sr', notes=[(3, 'r = 0.5')]),
            heat_grid('delta', ['4', '8'], ['3', '6'], [[0.2, -0.1], [None, 0.0]], 'ssplit', 'tsplit'),
            line_plot('flat', {}, 'x', 'y'),
        ]
        for svg in charts:
            root = ET.fromstring(svg.encode('utf-8'))
            self.assertTrue(root.tag.endswith('svg'))
        self.assertIn('a &amp; b', charts[0])
        self.assertNotIn('skip', charts[1])

    def test_image_grid_and_ppm(self):
        clean = np.zeros((3, 4, 4))
        pixels = image_grid([clean, np.ones((3, 4, 4)), np.full((1, 4, 4), 0.5)], scale=2)
        self.assertEqual(pixels.shape, (8, 3 * 8 + 2 * 2, 3))
        self.assertEqual(pixels.dtype, np.uint8)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'grid.ppm')
            write_ppm(path, pixels)
            self.assertTrue(_read(path).startswith(b'P6'))

    def test_write_reports(self):
        cfg = _tiny_cfg('shape-batch')
        table = Table('shape-batch', ['n', 'rate'])
        table.add(n=2, rate=0.5)
        report = ExperimentReport('shape-batch', [table], {'chart': line_plot('c', {'s': [(1, 0.5)]}, 'x', 'y')},
                                  images={'dump': image_grid([np.zeros((3, 2, 2))])})
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_reports(report, tmp, cfg)
            names = sorted(os.path.basename(p) for p in paths)
            self.assertEqual(names, ['chart.svg', 'dump.ppm', 'manifest.json', 'run.cfg', 'shape-batch.csv'])
            with open(os.path.join(tmp, 'manifest.json')) as f:
                manifest = json.load(f)
            self.assertEqual(manifest['config'], cfg.to_dict())
            self.assertEqual(manifest['artifacts']['shape-batch.csv'], sha256_file(os.path.join(tmp, 'shape-batch.csv')))
            self.assertIn('torch', manifest['packages'])
        with self.assertRaises(InvalidConfig):
            write_reports(ExperimentReport('shape-batch'), 'unused', cfg)

    def test_pearson(self):
        self.assertIsNone(pearson([0.1], [0.2]))
        self.assertIsNone(pearson([0.1, 0.2, 0.3], [0.5, 0.5, 0.5]))
        self.assertIsNone(pearson([0.1, None], [0.2, 0.3]))
        self.assertAlmostEqual(pearson([0.1, 0.2, 0.3], [0.2, 0.4, 0.6]), 1.0)
        self.assertLess(pearson([0.1, 0.2, 0.3], [0.6, 0.5, 0.1]), 0)


class WorkbenchTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_split_placement(self):
        wb = Workbench(_tiny_cfg('pgd-transfer', target_presets='tinyres', target_splits='', surrogate_splits=''))
        spec = wb.target_spec('tinyres')
        self.assertEqual(wb.target_splits('tinyres'), list(spec.block_ends))
        self.assertEqual(block_of(spec, spec.block_ends[1]), 2)
        backbone = wb.backbone_spec()
        self.assertEqual(wb.matched_surrogate_split('tinyres', spec.block_ends[1]), backbone.block_ends[1])
        self.assertEqual(wb.default_target_split('tinyres'), spec.block_ends[1])

    def test_query_data_is_aligned(self):
        wb = Workbench(_tiny_cfg('pgd-transfer', feature_shape_source='true'))
        data = wb.query_data('tinyvgg', 6, 'score')
        self.assertEqual(len(data), 12)
        self.assertEqual(data.feature_shape, tuple(wb.target_spec('tinyvgg').feature_shape(6)))
        target = wb.target('tinyvgg')
        with torch.no_grad():
            expected = target.run(data.inputs[:1], 0, 6)
        self.assertTrue(torch.allclose(data.features[:1], expected.float(), atol=1e-6))
        self.assertTrue(torch.allclose(data.probs.sum(dim=1), torch.ones(12), atol=1e-5))
        self.assertIs(wb.query_data('tinyvgg', 6, 'score'), data)

    def test_label_mode_sees_no_outputs(self):
        wb = Workbench(_tiny_cfg('pgd-transfer', feature_shape_source='true'))
        data = wb.query_data('tinyvgg', 6, 'label')
        self.assertIsNone(data.probs)
        self.assertIsNone(data.hard)
        self.assertEqual(len(data.labels), 12)

    def test_transfer_at_zero_radius_is_the_clean_error(self):
        wb = Workbench(_tiny_cfg('pgd-transfer', feature_shape_source='true'))
        target = wb.target('tinyvgg')
        dataset = wb.attack_set()
        clean_error = 1.0 - evaluate_accuracy(target, dataset)
        sr = wb.transfer(target, target, dataset, wb.attack_config(method='pgd', norm='2', eps='0'))
        self.assertAlmostEqual(sr, clean_error)
        report = run_experiment(_tiny_cfg('pgd-transfer', feature_shape_source='true'), self.tmp.name, workbench=wb)[0]
        self.assertAlmostEqual(report.table('pgd-transfer').rows[0]['baseline_sr'], clean_error)


class ExperimentRunTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def _run(self, cfg, name='out'):
        out = os.path.join(self.tmp.name, name)
        report, paths = run_experiment(cfg, out)
        return report, out

    def test_sr_vs_queries(self):
        cfg = _tiny_cfg('sr-vs-queries')
        report, out = self._run(cfg)
        table = report.table('sr-vs-queries')
        self.assertEqual(table.columns, ['method', 'mode', 'fd', 'query_budget', 'sr'])
        self.assertEqual(len(table.rows), 1 * 1 * 2 * 2)
        curves = defaultdict(list)
        for row in table.rows:
            curves[(row['method'], row['mode'], row['fd'])].append(row['sr'])
        for values in curves.values():
            known = [v for v in values if v is not None]
            self.assertEqual(known, sorted(known))
        self.assertTrue(_read(os.path.join(out, 'sr-vs-queries.csv')).startswith(b'method,mode,fd,query_budget,sr\r\n'))

        _, again = self._run(cfg, name='again')
        self.assertEqual(_read(os.path.join(out, 'sr-vs-queries.csv')), _read(os.path.join(again, 'sr-vs-queries.csv')))

    def test_no_runnable_cell_writes_nothing(self):
        cfg = _tiny_cfg('sr-vs-queries', methods='pgd')
        out = os.path.join(self.tmp.name, 'empty')
        with self.assertRaises(InvalidConfig):
            run_experiment(cfg, out)
        self.assertFalse(os.path.exists(out))

    def test_eps_table(self):
        report, _ = self._run(_tiny_cfg('eps-table', eps_method='simba-ods', eps_grid='0,0.5'))
        table = report.table('eps-table')
        self.assertEqual(table.columns, ['model', 'eps', 'mode', 'fd', 'sr', 'avg_queries'])
        self.assertEqual(len(table.rows), 2 * 2)
        for row in table.rows:
            if row['eps'] == 0.0:
                self.assertIn(row['sr'], (0.0, None))
                self.assertIsNone(row['avg_queries'])

    def test_unbounded(self):
        report, out = self._run(_tiny_cfg('unbounded'))
        table = report.table('unbounded')
        self.assertEqual(table.columns, ['model', 'method', 'mode', 'fd', 'sr', 'avg_pert_l2', 'avg_queries'])
        self.assertEqual(len(table.rows), 2)
        for name in report.images:
            self.assertTrue(_read(os.path.join(out, f'{name}.ppm')).startswith(b'P6'))

    def test_split_matrix(self):
        report, out = self._run(_tiny_cfg('split-matrix'))
        for name in ('split-matrix-linf', 'split-matrix-l2'):
            table = report.table(name)
            self.assertEqual(table.columns, ['tsplit', 'ssplit', 'sr_fd', 'sr_nofd', 'delta', 'clean_acc'])
            self.assertEqual(sorted((r['tsplit'], r['ssplit']) for r in table.rows), [(6, 3), (6, 6)])
            for row in table.rows:
                if row['delta'] is not None:
                    self.assertAlmostEqual(row['delta'], row['sr_fd'] - row['sr_nofd'])
                self.assertTrue(0.0 <= row['clean_acc'] <= 1.0)
            ET.parse(os.path.join(out, f'{name}.svg'))

    def test_cleanacc_corr(self):
        report, _ = self._run(_tiny_cfg('cleanacc-corr'))
        self.assertEqual(len(report.table('cleanacc-corr').rows), 2)
        correlation = report.table('cleanacc-corr-pearson').rows
        self.assertEqual([r['points'] for r in correlation], [2])

    def test_shape_batch(self):
        report, _ = self._run(_tiny_cfg('shape-batch'))
        table = report.table('shape-batch')
        self.assertEqual(table.columns, ['model', 'split', 'n', 'west', 'wtrue', 'correct'])
        self.assertEqual([r['n'] for r in table.rows], [2, 512])
        self.assertTrue(table.rows[-1]['correct'])
        self.assertEqual(report.table('shape-batch-rate').column('n'), [2, 512])

    def test_pgd_transfer(self):
        report, _ = self._run(_tiny_cfg('pgd-transfer'))
        table = report.table('pgd-transfer')
        self.assertEqual(table.columns, ['norm', 'eps', 'mode', 'fd', 'sr', 'baseline_sr'])
        self.assertEqual(len(table.rows), 2 * 1 * 2)
        self.assertEqual(len(set(table.column('baseline_sr'))), 1)
        self.assertEqual(sorted(set(table.column('norm'))), ['l2', 'linf'])


@unittest.skipUnless(settings.SPLITLEAK_RUN_SLOW, 'set SPLITLEAK_RUN_SLOW=1 for the desk-scale acceptance runs')
class DeskScaleAcceptanceTests(SimpleTestCase):
    """Directional checks on the default toy setup: TinyRes target, TinyVGG surrogate, 200 distillation queries"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def _rows(self, experiment, **overrides):
        cfg = ExperimentConfig.create(experiment=experiment, modes='score', **overrides)
        report, _ = run_experiment(cfg, os.path.join(self.tmp.name, experiment))
        return report

    def _sr(self, rows, **match):
        return next(r['sr'] for r in rows if all(r[k] == v for k, v in match.items()))

    def test_query_attacks_gain_from_features(self):
        rows = self._rows('eps-table', eps_method='gfcs', eps_grid='1.0').table('eps-table').rows
        self.assertGreaterEqual(self._sr(rows, fd=True), self._sr(rows, fd=False) + 0.10)
        rows = self._rows('eps-table', eps_method='simba-ods', eps_grid='0.5,1.0').table('eps-table').rows
        for eps in (0.5, 1.0):
            self.assertGreater(self._sr(rows, eps=eps, fd=True), self._sr(rows, eps=eps, fd=False))

    def test_transfer_gains_from_features(self):
        rows = self._rows('pgd-transfer').table('pgd-transfer').rows
        fd = self._sr(rows, norm='linf', fd=True)
        nofd = self._sr(rows, norm='linf', fd=False)
        self.assertGreaterEqual(fd, nofd + 0.10)
        self.assertGreater(nofd, rows[0]['baseline_sr'])

    def test_unbounded_features_need_less_perturbation(self):
        rows = self._rows('unbounded').table('unbounded').rows
        for method in ('gfcs', 'simba-ods'):
            fd = next(r for r in rows if r['method'] == method and r['fd'])
            nofd = next(r for r in rows if r['method'] == method and not r['fd'])
            self.assertGreaterEqual(fd['sr'], nofd['sr'])
            self.assertLessEqual(fd['avg_pert_l2'], nofd['avg_pert_l2'])

    def test_shape_batch_trend(self):
        report = self._rows('shape-batch', batch_sizes='2,8,64,512', shape_seeds=10)
        rates = report.table('shape-batch-rate').column('rate')
        self.assertEqual(rates, sorted(rates))
        self.assertEqual(rates[-1], 1.0)
