from streams import harness, reports
from streams.checkpoint import save_checkpoint
from streams.forms import TrainConfigForm
from streams.graph import compile_graph
from streams.manifest import data_params

from ._base import StnetCommand
from .build import resolve


def add_config_arguments(parser):
    parser.add_argument('--config', help='key = value configuration file')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='override one configuration key (repeatable)')
    parser.add_argument('--data-dir', help='CIFAR-10 directory (defaults to STNET_DATA_DIR)')
    parser.add_argument('--out', help='output directory')


class Command(StnetCommand):
    help = 'Train a model from a configuration file plus overrides; writes a checkpoint and history CSV.'
    default_out = 'train'

    def add_arguments(self, parser):
        add_config_arguments(parser)
        parser.add_argument('--model')
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--lr', type=float)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--source', choices=('synth', 'cifar10'))

    def run(self, **options):
        flags = {key: options[key] for key in ('model', 'epochs', 'lr', 'seed', 'source')}
        values, form = self.config_form(TrainConfigForm, options, flags)
        config = form.to_config()
        desc = resolve(values['model'], values['share_weights'])
        train_data, test_data = harness.load_sources(
            values['source'], options['data_dir'], values['train_size'], values['test_size'], seed=config.seed,
        )
        graph = compile_graph(desc, precision=config.precision, seed=config.seed)
        config = config.for_graph(graph)
        training = train_data
        if values['protocol'] == 'aug':
            parts = harness.augmentation_parts(
                test_data, config.augment_kinds, (config.augment_severity,), config.suite_seed,
                config.split_seed, config.split_fraction,
            )
            training = harness.augmented_training_set(train_data, parts)
        else:
            harness.assert_no_leakage(train_data, [test_data])
        _, history = harness.train(graph, training, config)

        out = self.out_dir(options)
        manifest = self.manifest(options, seeds={
            'init': config.seed, 'shuffle': config.seed, 'suite': config.suite_seed, 'split': config.split_seed,
        })
        manifest.flags['resolved'] = values
        manifest.data = data_params(values)
        manifest.add(save_checkpoint(graph, out / 'model.stnt'))
        history_path = out / 'history.csv'
        history_path.write_text(reports.history_csv(history))
        manifest.add(history_path)
        manifest.finish(out)
        last = history[-1]
        self.stdout.write(f"{out / 'model.stnt'}\t{desc.name}\tepochs={len(history)}\tloss={last.loss:.6f}")
