from pathlib import Path

from django.conf import settings

from core import csv_io
from core.robust_adjust import FIT_COLUMNS, CovariateMatrix, residualize, score_scan_covariates
from core.inference import run_test

from ._common import InferenceCommand


def fits_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + '.fits.csv')


class Command(InferenceCommand):
    help = "Residualize responses on covariates with Huber's M-estimator, then test for no effect."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('covariates',
                            help='covariates.csv keyed by block_id, trial_index (or t_index with --events)')
        parser.add_argument('--per-block', action='store_true', help='fit one regression per block')
        parser.add_argument('--tuning', type=float, default=settings.RANDINF_HUBER_TUNING)
        parser.add_argument('--tol', type=float, default=settings.RANDINF_HUBER_TOL,
                            help='stop once no coefficient moves by this much')
        parser.add_argument('--max-iter', type=int, default=settings.RANDINF_HUBER_MAX_ITER)
        parser.add_argument('--events', default=None,
                            help='events.csv; covariates are then per scan and scored with the HRF weights')
        parser.add_argument('--sample-interval', type=float, default=settings.RANDINF_SAMPLE_INTERVAL)

    def covariates(self, options, trials) -> CovariateMatrix:
        if options['events'] is None:
            return csv_io.read_covariates(options['covariates'], trials)
        scans = csv_io.read_scan_covariates(options['covariates'])
        events = csv_io.read_events(options['events'])
        names, keys, values = score_scan_covariates(scans, events, options['sample_interval'])
        return csv_io.align_covariates(options['covariates'], names, keys, values, trials)

    def report_fits(self, fits, options) -> Path:
        for fit in fits:
            self.stdout.write(
                f"Huber fit {fit.block_id or 'pooled'}: iterations={fit.iterations} scale={fit.scale:.6g} "
                f"converged={fit.converged}"
            )
        unconverged = sum(not fit.converged for fit in fits)
        if unconverged:
            self.stderr.write(
                f"{unconverged} of {len(fits)} Huber fit(s) did not converge within {options['max_iter']} iterations"
            )
        return csv_io.write_table([fit.as_row() for fit in fits], FIT_COLUMNS, fits_path(options['out']))

    def handle(self, *args, **options):
        trials = self.load_trials(options)
        X = self.covariates(options, trials)
        adjusted, fits = residualize(
            trials, X, options['per_block'], options['tuning'], options['tol'], options['max_iter'],
        )
        fits_out = self.report_fits(fits, options)
        reports = [
            run_test(adjusted, k, self.direction(options), **self.test_options(options))
            for k in self.ks(options)
        ]
        inputs = [options['trials'], options['covariates']]
        if options['events'] is not None:
            inputs.append(options['events'])
        self.write_report(reports, options, inputs, [fits_out])
