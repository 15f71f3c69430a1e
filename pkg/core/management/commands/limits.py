from core import csv_io
from core.sim_engine import Family, LimitGrid, limit_table, load_limit_grid

from ._common import RandInfCommand, parse_list

LIMIT_COLUMNS = ['F', 'delta', 'k', 'probability', 'pct_increase']


class Command(RandInfCommand):
    help = "Limiting probability that a shifted treated response beats k - 1 controls."

    def add_arguments(self, parser):
        parser.add_argument('--deltas', default='0,0.25,0.5,1')
        parser.add_argument('--k', default='2,5,10')
        parser.add_argument('--families', default='normal,t2')
        parser.add_argument('--config', default=None, help='read the grid from a [limits] section instead')
        parser.add_argument('--out', required=True, help='limits.csv to write')

    def handle(self, *args, **options):
        if options['config'] is not None:
            grid = load_limit_grid(options['config'])
            inputs = [options['config']]
        else:
            grid = LimitGrid(
                deltas=parse_list(options['deltas'], float, 'deltas'),
                k=parse_list(options['k'], int, 'k'),
                families=parse_list(options['families'], lambda f: Family(f.lower()), 'families'),
            )
            inputs = []
        rows = limit_table(grid)
        out = csv_io.write_table(rows, LIMIT_COLUMNS, options['out'])
        self.record(options, inputs, [out])
