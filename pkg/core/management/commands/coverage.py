from core import csv_io
from core.null_dist import Mode
from core.sim_engine import Interference, coverage_study

from ._common import RandInfCommand

COVERAGE_COLUMNS = [
    'k', 'alpha', 'shift', 'interference', 'mode', 'replications', 'covered', 'coverage',
    'rejections', 'mean_attributable', 't_tilde',
]


class Command(RandInfCommand):
    help = "Check how often the attributable-effect bound covers its target when the uniformity trial is known."

    def add_arguments(self, parser):
        parser.add_argument('--replications', type=int, default=1000)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--k', type=int, default=2)
        parser.add_argument('--alpha', type=float, default=0.05)
        parser.add_argument('--blocks', type=int, default=10)
        parser.add_argument('--trials', type=int, default=40, help='trials per block')
        parser.add_argument('--treated', type=int, default=20, help='treated trials per block')
        parser.add_argument('--shift', type=float, default=1.0, help='effect size in the actual trial')
        parser.add_argument('--interference', choices=[i.value for i in Interference], default=Interference.A.value)
        parser.add_argument('--mode', choices=[Mode.EXACT.value, Mode.NORMAL.value], default=Mode.EXACT.value)
        parser.add_argument('--out', required=True, help='coverage.csv to write')

    def handle(self, *args, **options):
        result = coverage_study(
            blocks=options['blocks'], trials_per_block=options['trials'], treated_per_block=options['treated'],
            k=options['k'], alpha=options['alpha'], shift=options['shift'],
            interference=Interference(options['interference']), replications=options['replications'],
            seed=options['seed'], mode=Mode(options['mode']),
        )
        row = {
            'k': options['k'], 'alpha': options['alpha'], 'shift': options['shift'],
            'interference': options['interference'], 'mode': result.mode.value,
            'replications': result.replications, 'covered': result.covered, 'coverage': result.coverage,
            'rejections': result.rejections, 'mean_attributable': result.mean_attributable,
            't_tilde': result.t_tilde,
        }
        self.stdout.write(f"coverage={result.coverage:.4f} over {result.replications} replications")
        out = csv_io.write_table([row], COVERAGE_COLUMNS, options['out'])
        self.record(options, [], [out])
