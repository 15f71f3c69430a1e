from django.conf import settings

from core import csv_io
from core.exceptions import SchemaError
from core.trial_scoring import highpass_filter, score_trials

from ._common import RandInfCommand


class Command(RandInfCommand):
    help = "Score trials from per-scan series with HRF weights, optionally high-pass filtering first."

    def add_arguments(self, parser):
        parser.add_argument('series', help='series.csv with block_id, t_index, value')
        parser.add_argument('events', help='events.csv with block_id, onset_index, z')
        parser.add_argument('--filter-cutoff', type=float, default=None, metavar='SECONDS',
                            help=f'high-pass cutoff period (e.g. {settings.RANDINF_HIGHPASS_CUTOFF:g})')
        parser.add_argument('--sample-interval', type=float, default=settings.RANDINF_SAMPLE_INTERVAL)
        parser.add_argument('--out', required=True, help='trials.csv to write')

    def handle(self, *args, **options):
        series = csv_io.read_series(options['series'], options['sample_interval'])
        events = csv_io.read_events(options['events'])
        orphans = sorted(set(events) - {s.block_id for s in series})
        if orphans:
            raise SchemaError(options['events'], f"events for blocks without a series: {orphans[:5]}")
        for session in series:
            if session.block_id not in events:
                raise SchemaError(options['events'], f"no events for block {session.block_id!r}")

        trials = []
        for session in sorted(series, key=lambda s: s.block_id):
            if options['filter_cutoff'] is not None:
                session = highpass_filter(session, options['filter_cutoff'])
            trials.extend(score_trials(session, events[session.block_id]))

        out = csv_io.write_trials(trials, options['out'])
        self.record(options, [options['series'], options['events']], [out])
