from pathlib import Path

from django.conf import settings

from core import csv_io
from core.synthetic import SyntheticConfig, synthesize

from ._common import RandInfCommand


class Command(RandInfCommand):
    help = "Write synthetic series.csv, events.csv and covariates.csv for end-to-end runs."

    def add_arguments(self, parser):
        parser.add_argument('--blocks', type=int, default=232)
        parser.add_argument('--trials', type=int, default=97, help='trials per block')
        parser.add_argument('--p-stop', type=float, default=0.25)
        parser.add_argument('--effect', type=float, default=1.0, help='peak stop-trial response')
        parser.add_argument('--lag-effect', type=float, default=0.0, help='extra response after a stop trial')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--out-dir', required=True)

    def handle(self, *args, **options):
        config = SyntheticConfig(
            blocks=options['blocks'], trials_per_block=options['trials'], p_stop=options['p_stop'],
            effect=options['effect'], lag_effect=options['lag_effect'], seed=options['seed'],
            sample_interval=settings.RANDINF_SAMPLE_INTERVAL,
        )
        data = synthesize(config)
        out_dir = Path(options['out_dir'])
        outputs = [
            csv_io.write_series(data.series, out_dir / 'series.csv'),
            csv_io.write_events(data.events, out_dir / 'events.csv'),
            csv_io.write_table(data.covariates.to_dict('records'), list(data.covariates.columns),
                               out_dir / 'covariates.csv', csv_io.ROUND_TRIP_FORMAT),
        ]
        self.record(options, [], outputs)
