"""Shared plumbing for the randinf management commands."""
import logging
from typing import Dict, List, Sequence

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

import randinf
from core import csv_io, manifest
from core.exceptions import RandInfError
from core.inference import REPORT_COLUMNS, Direction
from core.null_dist import Mode
from core.placement_stat import TrialRecord, WeightScheme, jitter_ties

audit_logger = logging.getLogger('audit')

# Options every Django command receives; they never reach a manifest.
DJANGO_OPTIONS = {
    'verbosity', 'settings', 'pythonpath', 'traceback', 'no_color', 'force_color', 'skip_checks', 'stdout', 'stderr',
}


def parse_list(value, cast, option: str) -> List:
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [part.strip() for part in str(value).split(',') if part.strip()]
    try:
        parsed = [cast(item) for item in items]
    except ValueError as exc:
        raise CommandError(f"--{option}: {exc}") from exc
    if not parsed:
        raise CommandError(f"--{option} needs at least one value")
    return parsed


class RandInfCommand(BaseCommand):
    """Base command: library errors become CommandError and every run leaves a manifest."""

    @property
    def subcommand(self) -> str:
        return self.__module__.rsplit('.', 1)[-1]

    def get_version(self):
        return randinf.__version__

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except (RandInfError, ValidationError) as exc:
            raise CommandError(str(exc)) from exc

    def record(self, options: Dict, inputs: Sequence, outputs: Sequence) -> None:
        parameters = {key: value for key, value in options.items() if key not in DJANGO_OPTIONS}
        run = manifest.build(self.subcommand, parameters, inputs, outputs)
        path = manifest.write(run, outputs[0])
        audit_logger.info(f"{self.subcommand} parameters={run.parameters} outputs={run.outputs}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {', '.join(run.outputs)} (manifest {path})"))


class InferenceCommand(RandInfCommand):
    """Options shared by testeffect, lagtest and adjust."""

    def add_arguments(self, parser):
        parser.add_argument('trials', help='trials.csv with block_id, trial_index, z, response')
        parser.add_argument('--k', default=','.join(str(k) for k in settings.RANDINF_DEFAULT_K),
                            help='comma-separated subset sizes, e.g. 2,5,10')
        parser.add_argument('--alpha', type=float, default=settings.RANDINF_DEFAULT_ALPHA)
        parser.add_argument('--weights', choices=[s.value for s in WeightScheme], default=WeightScheme.EQUAL.value)
        parser.add_argument('--mode', choices=[m.value for m in Mode], default=Mode.AUTO.value)
        parser.add_argument('--direction', choices=[d.value for d in Direction], default=Direction.ELEVATION.value)
        parser.add_argument('--two-sided', action='store_true', help='report a two-sided p-value')
        parser.add_argument('--jitter', type=int, default=None, metavar='SEED',
                            help='break within-block ties with tiny seeded noise')
        parser.add_argument('--out', required=True, help='report.csv to write')

    def load_trials(self, options) -> List[TrialRecord]:
        trials = csv_io.read_trials(options['trials'])
        if options['jitter'] is not None:
            trials, moved = jitter_ties(trials, options['jitter'])
            self.stdout.write(f"Jittered {moved} tied response(s)")
        return trials

    def ks(self, options) -> List[int]:
        return parse_list(options['k'], int, 'k')

    def test_options(self, options) -> Dict:
        return {
            'scheme': WeightScheme(options['weights']),
            'mode': Mode(options['mode']),
            'alpha': options['alpha'],
            'two_sided': options['two_sided'],
            'budget': settings.RANDINF_DP_STATE_BUDGET,
            'normal_min_blocks': settings.RANDINF_NORMAL_MIN_BLOCKS,
        }

    def direction(self, options) -> Direction:
        return Direction(options['direction'])

    def write_report(self, reports, options, inputs, extra_outputs: Sequence = ()) -> None:
        out = csv_io.write_table([r.as_row() for r in reports], REPORT_COLUMNS, options['out'])
        for report in reports:
            self.stdout.write(
                f"k={report.k:<3} T={report.T_obs:.6g} deviate={report.deviate:.3f} "
                f"p={report.p_value:.3g} mode={report.mode.value}"
            )
        self.record(options, inputs, [out, *extra_outputs])
