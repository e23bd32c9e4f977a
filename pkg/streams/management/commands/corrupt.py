import csv

from streams.corruptions import KINDS, SEVERITIES, Corruption, corrupt_set, severity_table_rows
from streams.datasets import read_records, write_records

from ._base import CommandError, StnetCommand


class Command(StnetCommand):
    help = 'Corrupt a set stored in CIFAR-10 record format, or print the severity table.'
    default_out = 'corrupted'

    def add_arguments(self, parser):
        parser.add_argument('--kind', choices=KINDS)
        parser.add_argument('--severity', type=int, choices=SEVERITIES)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--set', dest='records', help='input file in CIFAR-10 record format')
        parser.add_argument('--first-id', type=int, default=0, help='source id of the first record')
        parser.add_argument('--out', help='output directory')
        parser.add_argument('--print-severity-table', action='store_true')

    def run(self, **options):
        if options['print_severity_table']:
            writer = csv.writer(self.stdout, lineterminator='\n')
            writer.writerow(('kind', 'severity', 'parameter', 'value'))
            writer.writerows(severity_table_rows())
            return
        missing = [flag for flag, key in (('--kind', 'kind'), ('--severity', 'severity'), ('--set', 'records'))
                   if options[key] is None]
        if missing:
            raise CommandError(f"missing {', '.join(missing)}")
        corruption = Corruption(options['kind'], options['severity'], options['seed'])
        data = read_records(options['records'], first_id=options['first_id'])
        corrupted = corrupt_set(data, corruption)
        out = self.out_dir(options)
        manifest = self.manifest(options, seeds={'corruption': options['seed']})
        path = manifest.add(write_records(corrupted, out / f"{options['kind']}-{options['severity']}.bin"))
        manifest.finish(out)
        self.stdout.write(f'{path}\t{len(corrupted)} records\t{corruption.tag}')
