from streams import zoo
from streams.checkpoint import save_checkpoint
from streams.exceptions import ArchError, NameFormatError
from streams.graph import PRECISIONS, compile_graph

from ._base import CommandError, StnetCommand

NAME_HELP = "a base name (VGG16, ResNet50, MobileNetV2, MiniVGG) or STNet{streams}_{scale}_{base}"


def resolve(text, share_weights=False):
    try:
        return zoo.resolve_model(text, share_weights=share_weights)
    except (ArchError, NameFormatError) as exc:
        raise CommandError(f"{exc}\nexpected {NAME_HELP}") from exc


class Command(StnetCommand):
    help = 'Build and initialize a model, write its checkpoint and optionally dump its description.'
    default_out = 'build'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True, help=NAME_HELP)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--precision', choices=PRECISIONS, default='float32')
        parser.add_argument('--share-weights', action='store_true',
                            help='streams reuse one weight set (ablation)')
        parser.add_argument('--dump', action='store_true', help='print the canonical description text')
        parser.add_argument('--out', help='output directory')

    def run(self, **options):
        desc = resolve(options['model'], options['share_weights'])
        if options['dump']:
            self.stdout.write(zoo.dumps(desc), ending='')
        graph = compile_graph(desc, precision=options['precision'], seed=options['seed'])
        out = self.out_dir(options)
        manifest = self.manifest(options, seeds={'init': options['seed']})
        path = manifest.add(save_checkpoint(graph, out / 'model.stnt'))
        manifest.finish(out)
        self.stdout.write(f'{path}\t{desc.name}\tstreams={desc.streams}\tparams={graph.param_count()}')
