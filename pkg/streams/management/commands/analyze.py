from django.conf import settings

from streams import analyzer, reports, zoo

from ._base import StnetCommand
from .build import resolve


class Command(StnetCommand):
    help = 'Count parameters and FLOPs of a model; STNet names are compared against their base.'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True)
        parser.add_argument('--format', choices=('csv', 'md'), default='md')
        parser.add_argument('--convention', choices=tuple(analyzer.CONVENTIONS),
                            help='FLOPs convention (defaults to STNET_DEFAULTS["flops_convention"])')
        parser.add_argument('--per-layer', action='store_true', help='one CSV row per layer')

    def run(self, **options):
        desc = resolve(options['model'])
        convention = options['convention'] or settings.STNET_DEFAULTS.get(
            'flops_convention', analyzer.DEFAULT_CONVENTION,
        )
        report = analyzer.cost_report(desc, convention)
        entries = [(report, None)]
        if desc.family == 'stnet':
            base = analyzer.cost_report(zoo.base_desc(desc.base, desc.input_shape, desc.classes), convention)
            entries = [(report, base), (base, None)]
        if options['format'] == 'md':
            text = reports.cost_markdown(entries)
        elif options['per_layer']:
            text = reports.cost_csv([r for r, _ in entries])
        else:
            text = reports.summary_csv(entries)
        self.stdout.write(text, ending='')
