from core.inference import lagged_interference_test

from ._common import InferenceCommand

CURRENT = {'go': 0, 'stop': 1}


class Command(InferenceCommand):
    help = "Test for lingering effects: trials of one kind compared by the previous trial's assignment."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--current', choices=sorted(CURRENT), default='go',
                            help='which current trials to keep (go compares stop-go with go-go)')

    def handle(self, *args, **options):
        trials = self.load_trials(options)
        reports = [
            lagged_interference_test(
                trials, k, direction=self.direction(options), current_z=CURRENT[options['current']],
                **self.test_options(options),
            )
            for k in self.ks(options)
        ]
        if reports[0].dropped_blocks:
            self.stderr.write(f"{reports[0].dropped_blocks} block(s) dropped for lacking both lag classes")
        self.write_report(reports, options, [options['trials']])
