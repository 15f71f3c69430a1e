import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from core.inference import REPORT_COLUMNS
from core.robust_adjust import FIT_COLUMNS
from core.sim_engine import POWER_COLUMNS


def run(*args, **options):
    out = StringIO()
    call_command(*args, stdout=out, stderr=StringIO(), **options)
    return out.getvalue()


class CommandTestCase(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        run('synthesize', blocks=6, trials=30, seed=3, effect=2.0, out_dir=str(cls.dir / 'data'))
        cls.series = cls.dir / 'data' / 'series.csv'
        cls.events = cls.dir / 'data' / 'events.csv'
        cls.covariates = cls.dir / 'data' / 'covariates.csv'
        cls.trials = cls.dir / 'trials.csv'
        run('score', str(cls.series), str(cls.events), filter_cutoff=128.0, out=str(cls.trials))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()


class PipelineTests(CommandTestCase):
    def test_synthesize_outputs(self):
        self.assertTrue(self.covariates.exists())
        self.assertTrue((self.dir / 'data' / 'series.csv.manifest.json').exists())
        self.assertEqual(len(pd.read_csv(self.events)), 180)

    def test_score_writes_trials_and_manifest(self):
        trials = pd.read_csv(self.trials)
        self.assertEqual(list(trials.columns), ['block_id', 'trial_index', 'z', 'response'])
        self.assertEqual(len(trials), 180)
        manifest = json.loads((self.dir / 'trials.csv.manifest.json').read_text())
        self.assertEqual(manifest['subcommand'], 'score')
        self.assertEqual(set(manifest['inputs']), {str(self.series), str(self.events)})
        self.assertNotIn('verbosity', manifest['parameters'])

    def test_testeffect_report(self):
        out = self.dir / 'report.csv'
        run('testeffect', str(self.trials), out=str(out))
        report = pd.read_csv(out)
        self.assertEqual(list(report.columns), REPORT_COLUMNS)
        self.assertEqual(report['k'].tolist(), [2, 5, 10])
        self.assertTrue((report['p_value'] < 0.01).all())

    def test_testeffect_is_reproducible(self):
        first, second = self.dir / 'first.csv', self.dir / 'second.csv'
        run('testeffect', str(self.trials), k='2,5', mode='normal', out=str(first))
        run('testeffect', str(self.trials), k='2,5', mode='normal', out=str(second))
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_suppression_two_sided(self):
        out = self.dir / 'suppress.csv'
        run('testeffect', str(self.trials), k='2', direction='suppress', two_sided=True, out=str(out))
        self.assertEqual(pd.read_csv(out)['direction'].tolist(), ['suppress'])

    def test_lagtest(self):
        out = self.dir / 'lag.csv'
        run('lagtest', str(self.trials), k='2,5', current='stop', out=str(out))
        self.assertEqual(len(pd.read_csv(out)), 2)

    def test_adjust_trial_covariates(self):
        out = self.dir / 'adjusted.csv'
        stdout = run('adjust', str(self.trials), str(self.covariates), per_block=True, out=str(out))
        report = pd.read_csv(out)
        self.assertTrue((report['p_value'] < 0.01).all())
        manifest = json.loads((self.dir / 'adjusted.csv.manifest.json').read_text())
        self.assertIn(str(self.covariates), manifest['inputs'])
        self.assertEqual((manifest['parameters']['tol'], manifest['parameters']['max_iter']), (1e-8, 50))
        fits = pd.read_csv(self.dir / 'adjusted.fits.csv')
        self.assertEqual(list(fits.columns), FIT_COLUMNS)
        self.assertEqual(len(fits), 6)
        self.assertIn(str(self.dir / 'adjusted.fits.csv'), manifest['outputs'])
        self.assertIn('iterations=', stdout)

    def test_adjust_scan_covariates(self):
        series = pd.read_csv(self.series)
        rng = np.random.default_rng(0)
        scans = series[['block_id', 't_index']].assign(motion=rng.normal(size=len(series)))
        scan_path = self.dir / 'scan_covariates.csv'
        scans.to_csv(scan_path, index=False)
        out = self.dir / 'scan_adjusted.csv'
        run('adjust', str(self.trials), str(scan_path), events=str(self.events), k='2', out=str(out))
        self.assertEqual(len(pd.read_csv(out)), 1)


class ErrorTests(CommandTestCase):
    def test_ties_need_jitter(self):
        tied = self.dir / 'tied.csv'
        tied.write_text('block_id,trial_index,z,response\na,0,1,1.0\na,1,0,1.0\na,2,0,0.5\na,3,1,2.0\n')
        with self.assertRaisesMessage(CommandError, '--jitter'):
            run('testeffect', str(tied), k='2', out=str(self.dir / 'tied_report.csv'))
        run('testeffect', str(tied), k='2', jitter=1, out=str(self.dir / 'tied_report.csv'))

    def test_schema_error(self):
        bad = self.dir / 'bad.csv'
        bad.write_text('block_id,trial_index,z,response\na,0,7,1.0\n')
        with self.assertRaisesMessage(CommandError, 'row 2'):
            run('testeffect', str(bad), out=str(self.dir / 'bad_report.csv'))

    def test_score_needs_events_for_every_block(self):
        events = pd.read_csv(self.events)
        partial = self.dir / 'partial_events.csv'
        events[events['block_id'] != 's000'].to_csv(partial, index=False)
        with self.assertRaisesMessage(CommandError, "no events for block 's000'"):
            run('score', str(self.series), str(partial), out=str(self.dir / 'partial_trials.csv'))

    def test_bad_k_list(self):
        with self.assertRaises(CommandError):
            run('testeffect', str(self.trials), k='two', out=str(self.dir / 'k.csv'))


class SimulationCommandTests(SimpleTestCase):
    def test_simulate_is_thread_independent(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            config = tmp / 'small.cfg'
            config.write_text(
                '[DEFAULT]\nN = 60\nlambda = 0.5\nnu = 5\nreplications = 30\ntests = ttest,k2\n\n'
                '[plain]\nseed = 1\n\n[ar]\nseed = 2\nar_noise = yes\ninterference = c\n'
            )
            run('simulate', str(config), threads=1, out=str(tmp / 'one.csv'))
            run('simulate', str(config), threads=3, out=str(tmp / 'three.csv'))
            self.assertEqual((tmp / 'one.csv').read_bytes(), (tmp / 'three.csv').read_bytes())
            power = pd.read_csv(tmp / 'one.csv')
            self.assertEqual(list(power.columns), POWER_COLUMNS)
            self.assertEqual(len(power), 4)

    def test_simulate_replication_override(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / 'power.csv'
            config = Path(settings.RANDINF_CONFIG_DIR) / 'table5.cfg'
            run('simulate', str(config), replications=5, out=str(out))
            power = pd.read_csv(out)
            self.assertEqual(len(power), 96)
            self.assertEqual(set(power['replications']), {5})

    def test_limits_default_grid(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / 'limits.csv'
            run('limits', out=str(out))
            limits = pd.read_csv(out)
            self.assertEqual(len(limits), 24)
            row = limits[(limits['F'] == 'normal') & (limits['delta'] == 1.0) & (limits['k'] == 10)].iloc[0]
            self.assertAlmostEqual(row['probability'], 0.34, delta=0.005)

    def test_limits_from_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / 'limits.csv'
            run('limits', config=str(Path(settings.RANDINF_CONFIG_DIR) / 'table1.cfg'), out=str(out))
            self.assertEqual(len(pd.read_csv(out)), 24)

    def test_coverage(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / 'coverage.csv'
            run('coverage', replications=100, blocks=3, trials=16, treated=8, out=str(out))
            self.assertGreaterEqual(pd.read_csv(out)['coverage'].iloc[0], 0.85)
