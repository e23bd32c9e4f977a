from streams import harness, reports
from streams.forms import TrainConfigForm

from ._base import StnetCommand
from .train import add_config_arguments


def _seeds(text):
    return tuple(int(part) for part in text.split(',') if part.strip())


class Command(StnetCommand):
    help = ('Desk-scale robustness check: MiniVGG against STNet3_3_MiniVGG over several seeds. '
            'A deviation from the expected trend is reported, not failed.')
    default_out = 'experiment'

    def add_arguments(self, parser):
        add_config_arguments(parser)
        parser.add_argument('--source', choices=('synth', 'cifar10'))
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--seeds', type=_seeds, default=harness.DESK_SEEDS, help='comma separated')
        parser.add_argument('--streams', type=int, default=3)
        parser.add_argument('--scale', type=float, default=3)

    def run(self, **options):
        flags = {'source': options['source'], 'epochs': options['epochs']}
        values, form = self.config_form(TrainConfigForm, options, flags)
        config = form.to_config()
        train_data, test_data = harness.load_sources(
            values['source'], options['data_dir'], values['train_size'], values['test_size'], seed=config.seed,
        )
        result = harness.run_desk_experiment(
            train_data, test_data, config, seeds=options['seeds'],
            num_streams=options['streams'], scale=options['scale'],
        )

        out = self.out_dir(options)
        manifest = self.manifest(options, seeds={'runs': list(options['seeds'])})
        manifest.flags['resolved'] = values
        manifest.flags['trend_holds'] = result.trend_holds
        all_reports = [report for run in result.runs for report in (run.base, run.stnet)]
        report_path = out / 'report.csv'
        report_path.write_text(reports.report_csv(all_reports))
        manifest.add(report_path)
        desk_path = out / 'desk.csv'
        desk_path.write_text(reports.desk_csv(result))
        manifest.add(desk_path)
        manifest.finish(out)

        for run in result.runs:
            self.stdout.write(f"## seed {run.seed}\n")
            self.stdout.write(reports.accuracy_markdown([run.base, run.stnet]))
        verdict = 'holds' if result.trend_holds else 'DEVIATES'
        self.stdout.write(f"trend {verdict}: STNet not worse in {result.wins} of {len(result.runs)} seeds")
