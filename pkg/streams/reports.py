"""CSV and markdown emitters for cost reports, evaluation reports, boosts and training history."""
import csv
import io
from fractions import Fraction
from pathlib import Path

from .exceptions import ProtocolError
from .harness import EvalReport, EvalRow

PUBLISHED_ACCURACIES = Path(__file__).resolve().parent / 'fixtures' / 'published_accuracies.csv'

REPORT_COLUMNS = ('model', 'protocol', 'kind', 'severity', 'n', 'accuracy')
BOOST_COLUMNS = ('model', 'kind', 'severity', 'boost')
HISTORY_COLUMNS = ('epoch', 'steps', 'loss', 'train_accuracy')
COST_COLUMNS = ('model', 'convention', 'layer', 'kind', 'output_shape', 'params', 'flops')


def fmt(value, places=6):
    if value is None:
        return ''
    return f"{float(value):.{places}f}"


def _blank(value):
    return '' if value is None else value


def _to_text(rows, columns):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(columns)
    writer.writerows(rows)
    return out.getvalue()


def report_rows(report):
    rows = []
    if report.clean is not None:
        rows.append((report.model, report.protocol, 'clean', '', _blank(report.clean_n), fmt(report.clean)))
    for r in report.rows:
        rows.append((report.model, report.protocol, r.kind, _blank(r.severity), _blank(r.n), fmt(r.accuracy)))
    if report.rows:
        rows.append((report.model, report.protocol, 'mean', '', '', fmt(report.mean_accuracy)))
    return rows


def report_csv(reports) -> str:
    return _to_text([row for report in reports for row in report_rows(report)], REPORT_COLUMNS)


def _accuracy(raw, n):
    # with a sample count the six-decimal text pins down the exact count
    if n:
        return Fraction(round(Fraction(raw) * n), n)
    return Fraction(raw)


def parse_report_csv(text):
    """EvalReports keyed by (model, protocol); derived 'mean' rows are recomputed, not read."""
    reports = {}
    for line in csv.DictReader(io.StringIO(text)):
        missing = [c for c in ('model', 'protocol', 'kind', 'accuracy') if c not in line]
        if missing:
            raise ProtocolError(f"report CSV lacks columns {missing}")
        key = (line['model'], line['protocol'])
        entry = reports.setdefault(key, {'clean': None, 'clean_n': None, 'rows': []})
        n = int(line['n']) if line.get('n') else None
        severity = int(line['severity']) if line.get('severity') else None
        kind = line['kind']
        if kind == 'mean':
            continue
        accuracy = _accuracy(line['accuracy'], n)
        if kind == 'clean':
            entry['clean'], entry['clean_n'] = accuracy, n
        else:
            entry['rows'].append(EvalRow(kind, severity, accuracy, n))
    return {
        key: EvalReport(key[0], key[1], entry['clean'], entry['clean_n'], tuple(entry['rows']))
        for key, entry in reports.items()
    }


def load_published(path=PUBLISHED_ACCURACIES) -> dict:
    """The published per-corruption accuracies as EvalReports keyed by (model, protocol)."""
    return parse_report_csv(Path(path).read_text())


def boost_csv(boosts):
    return _to_text([(b.model, b.kind, _blank(b.severity), fmt(b.boost)) for b in boosts], BOOST_COLUMNS)


def history_csv(history):
    return _to_text(
        [(h.epoch, h.steps, f"{h.loss:.6f}", fmt(h.train_accuracy)) for h in history], HISTORY_COLUMNS,
    )


def _row_label(kind, severity):
    label = kind.replace('-', ' ')
    return label if severity is None else f"{label} ({severity})"


def _markdown(header, body):
    lines = ['| ' + ' | '.join(header) + ' |', '|' + '---|' * len(header)]
    lines.extend('| ' + ' | '.join(str(cell) for cell in row) + ' |' for row in body)
    return '\n'.join(lines) + '\n'


def accuracy_markdown(reports, places=3):
    """Kinds down, models across; a kind missing from a report is left blank."""
    reports = list(reports)
    keys = []
    for report in reports:
        for r in report.rows:
            if r.key not in keys:
                keys.append(r.key)
    body = []
    for kind, severity in keys:
        cells = []
        for report in reports:
            try:
                cells.append(fmt(report.row(kind, severity).accuracy, places))
            except KeyError:
                cells.append('')
        body.append([_row_label(kind, severity)] + cells)
    if any(report.clean is not None for report in reports):
        body.append(['clean'] + [fmt(report.clean, places) for report in reports])
    body.append(['mean'] + [fmt(report.mean_accuracy, places) for report in reports])
    return _markdown(['Noise type'] + [report.model for report in reports], body)


def boost_markdown(boosts, places=3):
    return _markdown(
        ['Model', 'Noise type', 'Boost'],
        [[b.model, _row_label(b.kind, b.severity), fmt(b.boost, places)] for b in boosts],
    )


def cost_csv(reports):
    rows = []
    for report in reports:
        for row in report.rows:
            shape = 'x'.join(str(d) for d in row.output_shape)
            rows.append((report.name, report.convention, row.name, row.kind, shape, row.params, row.flops))
        rows.append((report.name, report.convention, 'total', '', '', report.params, report.flops))
    return _to_text(rows, COST_COLUMNS)


def cost_markdown(entries):
    """Name, FLOPs and parameter count per model; ``entries`` are (CostReport, base CostReport or None)."""
    body = []
    for report, base in entries:
        flops = f"{report.flops:,}"
        params = f"{report.params:,}"
        if base is not None:
            flops += f" ({report.flops / base.flops:.5f})"
            params += f" ({report.params / base.params:.3f})"
        body.append([report.name, flops, params])
    return _markdown(['Name', 'FLOPs', 'Num of Params'], body)


SUMMARY_COLUMNS = ('model', 'convention', 'params', 'flops', 'ratio_params', 'ratio_flops')


def summary_csv(entries):
    rows = []
    for report, base in entries:
        ratios = ('', '') if base is None else (
            f"{report.params / base.params:.6f}", f"{report.flops / base.flops:.6f}",
        )
        rows.append((report.name, report.convention, report.params, report.flops) + ratios)
    return _to_text(rows, SUMMARY_COLUMNS)


DESK_COLUMNS = ('seed', 'base', 'stnet', 'base_clean', 'stnet_clean', 'base_mean', 'stnet_mean', 'stnet_not_worse')


def desk_csv(result):
    rows = [
        (run.seed, run.base.model, run.stnet.model, fmt(run.base.clean), fmt(run.stnet.clean),
         fmt(run.base.mean_accuracy), fmt(run.stnet.mean_accuracy), int(run.stnet_not_worse))
        for run in result.runs
    ]
    return _to_text(rows, DESK_COLUMNS)
