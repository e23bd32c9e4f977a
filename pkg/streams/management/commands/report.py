from pathlib import Path

from django.core.management.base import CommandError

from streams import harness, reports

from ._base import StnetCommand


def _read_reports(path, protocol):
    path = Path(path)
    if not path.is_file():
        raise CommandError(f"report file {path} does not exist")
    found = {model: report for (model, proto), report in reports.parse_report_csv(path.read_text()).items()
             if proto == protocol}
    if not found:
        raise CommandError(f"{path} holds no {protocol} reports")
    return found


class Command(StnetCommand):
    help = 'Join aug and no-aug EvalReports into augmentation boosts and markdown tables.'
    default_out = 'report'

    def add_arguments(self, parser):
        parser.add_argument('--aug', help='EvalReport CSV of the aug protocol')
        parser.add_argument('--noaug', help='EvalReport CSV of the no-aug protocol')
        parser.add_argument('--published', action='store_true', help='use the shipped published accuracies')
        parser.add_argument('--out', help='output directory')

    def run(self, **options):
        if options['published']:
            loaded = reports.load_published()
            aug = {model: r for (model, proto), r in loaded.items() if proto == 'aug'}
            noaug = {model: r for (model, proto), r in loaded.items() if proto == 'no-aug'}
        elif options['aug'] and options['noaug']:
            aug = _read_reports(options['aug'], 'aug')
            noaug = _read_reports(options['noaug'], 'no-aug')
        else:
            raise CommandError("pass --aug and --noaug report files, or --published")
        models = [model for model in noaug if model in aug]
        if not models:
            raise CommandError("no model appears in both protocols")
        boosts = []
        for model in models:
            boosts.extend(harness.augmentation_boost(aug[model], noaug[model]))

        noaug_reports = [noaug[m] for m in models]
        aug_reports = [aug[m] for m in models]
        tables = '\n'.join([
            '## Without augmentation\n', reports.accuracy_markdown(noaug_reports),
            '## With augmentation\n', reports.accuracy_markdown(aug_reports),
            '## Augmentation boost\n', reports.boost_markdown(boosts),
        ])
        out = self.out_dir(options)
        manifest = self.manifest(options)
        boost_path = out / 'boost.csv'
        boost_path.write_text(reports.boost_csv(boosts))
        manifest.add(boost_path)
        tables_path = out / 'tables.md'
        tables_path.write_text(tables)
        manifest.add(tables_path)
        manifest.finish(out)
        self.stdout.write(tables, ending='')
