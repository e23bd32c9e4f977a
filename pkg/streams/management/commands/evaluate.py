from streams import harness, reports
from streams.checkpoint import load_checkpoint
from streams.forms import SuiteConfigForm
from streams.manifest import check_training_data, data_params
from streams.slicer import make_spec

from ._base import StnetCommand
from .train import add_config_arguments


class Command(StnetCommand):
    help = 'Evaluate a checkpoint on clean and corrupted test data; writes an EvalReport CSV.'
    default_out = 'evaluate'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        add_config_arguments(parser)
        parser.add_argument('--source', choices=('synth', 'cifar10'))
        parser.add_argument('--seed', type=int)

    def run(self, **options):
        values, _ = self.config_form(SuiteConfigForm, options, {'source': options['source'], 'seed': options['seed']})
        check_training_data(options['checkpoint'], values)
        graph = load_checkpoint(options['checkpoint'])
        _, test_data = harness.load_sources(
            values['source'], options['data_dir'], values['train_size'], values['test_size'], seed=values['seed'],
        )
        spec = make_spec(len(graph.inputs), values['slice_mode'])
        if values['protocol'] == 'aug':
            parts = harness.augmentation_parts(
                test_data, values['kinds'], values['severities'], values['suite_seed'],
                values['split_seed'], values['split_fraction'],
            )
            report = harness.eval_held_out(graph, test_data, parts, spec, values['stream_inputs'])
        else:
            report = harness.eval_corruption_suite(
                graph, test_data, values['kinds'], values['severities'], spec, values['suite_seed'],
                values['stream_inputs'],
            )
        out = self.out_dir(options)
        manifest = self.manifest(options, seeds={'suite': values['suite_seed'], 'split': values['split_seed']})
        manifest.flags['resolved'] = values
        manifest.data = data_params(values)
        path = out / 'report.csv'
        path.write_text(reports.report_csv([report]))
        manifest.add(path)
        manifest.finish(out)
        self.stdout.write(reports.accuracy_markdown([report]), ending='')
