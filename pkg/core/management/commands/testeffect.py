from core.inference import run_test

from ._common import InferenceCommand


class Command(InferenceCommand):
    help = "Test the null hypothesis of no effect with placement statistics, one row per k."

    def handle(self, *args, **options):
        trials = self.load_trials(options)
        reports = [
            run_test(trials, k, self.direction(options), **self.test_options(options))
            for k in self.ks(options)
        ]
        self.write_report(reports, options, [options['trials']])
