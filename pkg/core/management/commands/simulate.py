from core import csv_io
from core.sim_engine import POWER_COLUMNS, load_scenarios, run_scenario

from ._common import RandInfCommand


class Command(RandInfCommand):
    help = "Monte Carlo size and power of the t-test and placement tests for each scenario in a config file."

    def add_arguments(self, parser):
        parser.add_argument('config', help='scenario .cfg file (one section per scenario)')
        parser.add_argument('--threads', type=int, default=1)
        parser.add_argument('--replications', type=int, default=None,
                            help='override every scenario\'s replication count')
        parser.add_argument('--out', required=True, help='power.csv to write')

    def handle(self, *args, **options):
        scenarios = load_scenarios(options['config'])
        if options['replications'] is not None:
            scenarios = [s.model_copy(update={'replications': options['replications']}) for s in scenarios]
        rows = []
        for scenario in scenarios:
            power = run_scenario(scenario, threads=max(1, options['threads']))
            rows.extend(power.as_rows())
            self.stdout.write(
                f"{scenario.id}: " + ", ".join(f"{t.value}={p:.4f}" for t, p in power.rates.items())
            )
        out = csv_io.write_table(rows, POWER_COLUMNS, options['out'])
        self.record(options, [options['config']], [out])
