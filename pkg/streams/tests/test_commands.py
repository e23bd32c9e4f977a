import csv
import io
import json
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings
from PIL import Image

from streams.corruptions import severity_table_rows
from streams.datasets import read_records, write_records

from .helpers import tiny_set

SLOW = os.getenv('STNET_RUN_SLOW') == '1'

RUNS_DIR = tempfile.mkdtemp()


def run(*args, **options):
    out = io.StringIO()
    call_command(*args, stdout=out, **options)
    return out.getvalue()


@override_settings(STNET_RUNS_DIR=RUNS_DIR)
class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def manifest(self, out_dir):
        return json.loads((Path(out_dir) / 'manifest.json').read_text())


class SliceCommandTests(CommandTestCase):
    def write_image(self, pixels):
        path = self.tmp / 'input.png'
        Image.fromarray(pixels).save(path)
        return path

    def test_constant_image_gives_one_nonzero_slice(self):
        path = self.write_image(np.full((6, 6, 3), 100, dtype=np.uint8))
        out = self.tmp / 'slices'
        run('slice', '--input', str(path), '--n', '5', '--out', str(out))
        nonzero = [k for k in range(5) if any((out / f'slice_{k}.raw').read_bytes())]
        self.assertEqual(nonzero, [1])
        self.assertEqual(len(self.manifest(out)['artifacts']), 5)

    def test_single_slice_is_the_planar_input(self):
        pixels = np.random.default_rng(0).integers(0, 256, size=(4, 5, 3), dtype=np.uint8)
        out = self.tmp / 'one'
        run('slice', '--input', str(self.write_image(pixels)), '--n', '1', '--out', str(out))
        self.assertEqual((out / 'slice_0.raw').read_bytes(), pixels.transpose(2, 0, 1).tobytes())

    def test_partition_check(self):
        pixels = np.random.default_rng(1).integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        text = run('slice', '--input', str(self.write_image(pixels)), '--n', '3', '--mode', 'per-channel',
                   '--check-partition', '--out', str(self.tmp / 'p'))
        self.assertIn('partition ok', text)

    def test_default_output_directory(self):
        run('slice', '--input', str(self.write_image(np.zeros((2, 2, 3), dtype=np.uint8))), '--n', '2')
        self.assertTrue((Path(RUNS_DIR) / 'slices' / 'slice_1.raw').exists())


class CorruptCommandTests(CommandTestCase):
    def test_severity_table(self):
        rows = list(csv.reader(io.StringIO(run('corrupt', '--print-severity-table'))))
        self.assertEqual(rows[0], ['kind', 'severity', 'parameter', 'value'])
        self.assertEqual(rows[1:], [[str(v) for v in row] for row in severity_table_rows()])

    def test_same_flags_same_bytes(self):
        records = write_records(tiny_set(4), self.tmp / 'set.bin')
        outputs = []
        for name in ('a', 'b'):
            out = self.tmp / name
            run('corrupt', '--kind', 'gaussian-noise', '--severity', '3', '--seed', '7',
                '--set', str(records), '--out', str(out))
            outputs.append((out / 'gaussian-noise-3.bin').read_bytes())
        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(len(read_records(self.tmp / 'a' / 'gaussian-noise-3.bin')), 4)
        self.assertEqual(self.manifest(self.tmp / 'a')['seeds'], {'corruption': 7})

    def test_severity_out_of_range(self):
        with self.assertRaises(CommandError):
            run('corrupt', '--kind', 'contrast', '--severity', '6', '--set', 'x.bin')

    def test_missing_arguments(self):
        with self.assertRaisesMessage(CommandError, '--set'):
            run('corrupt', '--kind', 'contrast', '--severity', '2')


class ModelCommandTests(CommandTestCase):
    def test_analyze_base_parameter_counts(self):
        self.assertIn('33,638,218', run('analyze', '--model', 'VGG16'))
        self.assertIn(',2270794,', run('analyze', '--model', 'MobileNetV2', '--format', 'csv'))

    def test_analyze_stnet_against_its_base(self):
        text = run('analyze', '--model', 'STNet5_2.5_MobileNetV2')
        self.assertIn('STNet5_2.5_MobileNetV2', text)
        self.assertIn('5,093,530 (2.243)', text)
        self.assertIn('| MobileNetV2 |', text)

    def test_analyze_per_layer(self):
        text = run('analyze', '--model', 'MiniVGG', '--format', 'csv', '--per-layer', '--convention', 'weight-pass-v1')
        self.assertIn('MiniVGG,weight-pass-v1,conv1,conv2d,32x32x16,448,880', text)

    def test_analyze_convention_defaults_to_settings(self):
        self.assertIn('MiniVGG,spatial-v1,', run('analyze', '--model', 'MiniVGG', '--format', 'csv'))
        defaults = {**settings.STNET_DEFAULTS, 'flops_convention': 'weight-pass-v1'}
        with override_settings(STNET_DEFAULTS=defaults):
            self.assertIn('MiniVGG,weight-pass-v1,', run('analyze', '--model', 'MiniVGG', '--format', 'csv'))

    def test_build_dump(self):
        out = self.tmp / 'build'
        text = run('build', '--model', 'STNet5_5_ResNet50', '--dump', '--out', str(out))
        self.assertIn('streams=5', text)
        self.assertTrue((out / 'model.stnt').exists())
        self.assertEqual(self.manifest(out)['seeds'], {'init': 0})

    def test_bad_model_name(self):
        with self.assertRaisesMessage(CommandError, 'STNet{streams}_{scale}_{base}'):
            run('analyze', '--model', 'STNet5_five_VGG16')


class PipelineCommandTests(CommandTestCase):
    def test_train_then_evaluate_twice(self):
        train_out = self.tmp / 'train'
        sizes = ['--set', 'train_size=20', '--set', 'test_size=10']
        text = run('train', '--model', 'STNet3_3_MiniVGG', '--epochs', '1', '--lr', '0',
                   '--set', 'batch_size=10', *sizes, '--out', str(train_out))
        self.assertIn('STNet3_3_MiniVGG', text)
        history = (train_out / 'history.csv').read_text().splitlines()
        self.assertEqual(len(history), 2)
        reports = []
        for name in ('eval1', 'eval2'):
            out = self.tmp / name
            run('evaluate', '--checkpoint', str(train_out / 'model.stnt'), *sizes,
                '--set', 'kinds=contrast,pixelate', '--set', 'severities=1,3', '--out', str(out))
            reports.append((out / 'report.csv').read_text())
        self.assertEqual(reports[0], reports[1])
        self.assertEqual(len(reports[0].splitlines()), 1 + 1 + 4 + 1)

    def test_evaluate_refuses_a_different_split(self):
        train_out = self.tmp / 'train'
        sizes = ['--set', 'train_size=20', '--set', 'test_size=10']
        run('train', '--model', 'MiniVGG', '--epochs', '1', '--set', 'batch_size=10', *sizes,
            '--seed', '2', '--out', str(train_out))
        self.assertEqual(self.manifest(train_out)['data'],
                         {'source': 'synth', 'train_size': 20, 'test_size': 10, 'seed': 2})
        checkpoint = str(train_out / 'model.stnt')
        common = ['--set', 'kinds=contrast', '--set', 'severities=1']
        with self.assertRaisesMessage(CommandError, 'test_size=12 (trained with 10)'):
            run('evaluate', '--checkpoint', checkpoint, '--set', 'train_size=20', '--set', 'test_size=12',
                '--seed', '2', *common, '--out', str(self.tmp / 'bad_size'))
        with self.assertRaisesMessage(CommandError, 'seed=0 (trained with 2)'):
            run('evaluate', '--checkpoint', checkpoint, *sizes, *common, '--out', str(self.tmp / 'bad_seed'))
        out = self.tmp / 'eval'
        run('evaluate', '--checkpoint', checkpoint, *sizes, '--seed', '2', *common, '--out', str(out))
        self.assertEqual(self.manifest(out)['data']['seed'], 2)

    def test_config_errors_become_command_errors(self):
        with self.assertRaisesMessage(CommandError, 'unknown configuration keys'):
            run('train', '--set', 'epoch=2', '--out', str(self.tmp / 't'))

    def test_report_on_identical_reports(self):
        text = 'model,protocol,kind,severity,n,accuracy\n'
        for protocol in ('no-aug', 'aug'):
            text += f'MiniVGG,{protocol},contrast,3,10,0.500000\nMiniVGG,{protocol},pixelate,3,10,0.700000\n'
        path = self.tmp / 'reports.csv'
        path.write_text(text)
        out = self.tmp / 'report'
        printed = run('report', '--aug', str(path), '--noaug', str(path), '--out', str(out))
        boosts = (out / 'boost.csv').read_text().splitlines()
        self.assertEqual(boosts[1:], ['MiniVGG,contrast,3,0.000000', 'MiniVGG,pixelate,3,0.000000'])
        self.assertIn('## Augmentation boost', printed)
        self.assertTrue((out / 'tables.md').exists())

    def test_report_published(self):
        printed = run('report', '--published', '--out', str(self.tmp / 'published'))
        self.assertIn('STNet5_5_ResNet50', printed)
        self.assertIn('jpeg compression', printed)

    def test_report_needs_inputs(self):
        with self.assertRaises(CommandError):
            run('report', '--aug', str(self.tmp / 'a.csv'))

    @unittest.skipUnless(SLOW, 'set STNET_RUN_SLOW=1 for the desk-scale experiment')
    def test_experiment(self):
        out = self.tmp / 'experiment'
        text = run('experiment', '--out', str(out))
        self.assertIn('trend', text)
        self.assertEqual(len((out / 'desk.csv').read_text().splitlines()), 4)
