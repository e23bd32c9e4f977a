from fractions import Fraction

from django.test import SimpleTestCase

from streams import analyzer, harness, reports, zoo
from streams.exceptions import ProtocolError
from streams.harness import EpochRecord, EvalReport, EvalRow


class EvalReportCsvTests(SimpleTestCase):
    def setUp(self):
        self.report = EvalReport('MiniVGG', 'no-aug', Fraction(2, 3), 3, (
            EvalRow('contrast', 3, Fraction(1, 3), 3),
            EvalRow('pixelate', 3, Fraction(2, 3), 3),
        ))

    def test_columns_and_rows(self):
        lines = reports.report_csv([self.report]).splitlines()
        self.assertEqual(lines[0], 'model,protocol,kind,severity,n,accuracy')
        self.assertEqual(lines[1], 'MiniVGG,no-aug,clean,,3,0.666667')
        self.assertEqual(lines[2], 'MiniVGG,no-aug,contrast,3,3,0.333333')
        self.assertEqual(lines[-1], 'MiniVGG,no-aug,mean,,,0.500000')

    def test_parsing_restores_exact_fractions(self):
        parsed = reports.parse_report_csv(reports.report_csv([self.report]))
        self.assertEqual(parsed, {('MiniVGG', 'no-aug'): self.report})

    def test_missing_columns(self):
        with self.assertRaises(ProtocolError):
            reports.parse_report_csv('model,kind\nm,clean\n')

    def test_markdown(self):
        text = reports.accuracy_markdown([self.report])
        self.assertIn('| Noise type | MiniVGG |', text)
        self.assertIn('| contrast (3) | 0.333 |', text)
        self.assertIn('| mean | 0.500 |', text)

    def test_history(self):
        text = reports.history_csv([EpochRecord(1, 4, 2.302585, Fraction(1, 4))])
        self.assertEqual(text.splitlines(), ['epoch,steps,loss,train_accuracy', '1,4,2.302585,0.250000'])


class PublishedTests(SimpleTestCase):
    def test_all_models_and_protocols(self):
        published = reports.load_published()
        self.assertEqual(len(published), 12)
        for report in published.values():
            self.assertEqual(len(report.rows), 19)
            self.assertIsNone(report.clean)

    def test_published_boost(self):
        published = reports.load_published()
        boosts = harness.augmentation_boost(published[('VGG16', 'aug')], published[('VGG16', 'no-aug')])
        brightness = next(b for b in boosts if b.kind == 'brightness')
        self.assertEqual(brightness.boost, Fraction('0.890') - Fraction('0.771'))
        text = reports.boost_csv(boosts)
        self.assertIn('VGG16,brightness,,0.119000', text)

    def test_published_stnet_boost(self):
        published = reports.load_published()
        boosts = harness.augmentation_boost(
            published[('STNet5_1.5_VGG16', 'aug')], published[('STNet5_1.5_VGG16', 'no-aug')],
        )
        brightness = next(b for b in boosts if b.kind == 'brightness')
        self.assertEqual(brightness.boost, Fraction('0.220'))


class CostEmitterTests(SimpleTestCase):
    def test_markdown_with_ratios(self):
        comparison = analyzer.compare('STNet5_2.5_MobileNetV2')
        text = reports.cost_markdown([(comparison.stnet, comparison.base), (comparison.base, None)])
        self.assertIn('| Name | FLOPs | Num of Params |', text)
        self.assertIn('5,093,530 (2.243)', text)
        self.assertIn('| MobileNetV2 |', text)

    def test_csv(self):
        report = analyzer.cost_report(zoo.minivgg_desc())
        lines = reports.cost_csv([report]).splitlines()
        self.assertEqual(lines[0], 'model,convention,layer,kind,output_shape,params,flops')
        self.assertTrue(lines[1].startswith('MiniVGG,spatial-v1,conv1,conv2d,32x32x16,448,'))
        self.assertTrue(lines[-1].startswith('MiniVGG,spatial-v1,total,,,280218,'))
        summary = reports.summary_csv([(report, None)]).splitlines()
        self.assertEqual(summary[1], f'MiniVGG,spatial-v1,280218,{report.flops},,')
