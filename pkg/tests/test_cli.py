import unittest
from unittest.mock import patch
import os
import json
import math
import tempfile
from dataclasses import replace

import numpy as np
import pandas as pd

from pyspmi import cli
from pyspmi import clustering_metrics
from pyspmi import io_formats
from pyspmi import noisy_net
from pyspmi import run_pyspmi
from pyspmi import sp_estimator
from pyspmi import utils
from pyspmi.clustering_metrics import BinningSpec
from pyspmi.noisy_net import ActivationSet, LabeledDataset


def toy_config(out_dir, **overrides):
    mapping = {'network': {'kind': 'toy_tanh', 'beta': 0.05},
               'dataset': {'source': 'toy_tanh'},
               'train': {'loss': 'mean_squared', 'learning_rate': 0.01,
                         'epochs': 3},
               'estimator': {'n_mc': 50},
               'binning': {'bin_size': 0.5},
               'checkpoint_epochs': [0, 3],
               'output_dir': out_dir}
    return io_formats.build_experiment_config(mapping, overrides)


def read_manifest(out_dir):
    with open(os.path.join(out_dir, 'manifest.json')) as f:
        return json.load(f)


class CLITestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = self._tmp.name

    def tearDown(self):
        utils.set_default_threads(None)
        self._tmp.cleanup()


class TrainEstimateTestCase(CLITestCase):

    def test_train_outputs(self):
        cfg = toy_config(self.dir)
        cli.cmd_train(cfg)

        for name in ('dataset.bin', 'loss.csv', 'checkpoint_000000.bin',
                     'checkpoint_000003.bin', 'manifest.json'):
            self.assertTrue(os.path.isfile(os.path.join(self.dir, name)),
                            name)

        losses = pd.read_csv(os.path.join(self.dir, 'loss.csv'))
        self.assertEqual(losses['epoch'].tolist(), [1, 2, 3])

        manifest = read_manifest(self.dir)
        self.assertEqual(manifest['command'], 'train')
        self.assertEqual(manifest['config_hash'], cfg.config_hash())
        self.assertIn('loss.csv', manifest['outputs'])
        self.assertIn('train', manifest['phases'])

    def test_estimate(self):
        cfg = toy_config(self.dir)
        cli.cmd_train(cfg)
        cli.cmd_estimate(cfg)

        out = os.path.join(self.dir, 'estimate')
        df = pd.read_csv(os.path.join(out, 'results.csv'))
        self.assertEqual(df['epoch'].tolist(), [0, 3])
        self.assertEqual(df['layer'].tolist(), [1, 1])
        for row in df.itertuples(index=False):
            self.assertTrue(0 <= row.i_sp <= math.log(4) + 0.05)
            self.assertLessEqual(row.lb, row.ub)
            self.assertTrue(math.isfinite(row.binned_entropy))

        # Epoch 0 has no training loss; epoch 3 does.
        self.assertTrue(math.isnan(df['train_loss'].iloc[0]))
        self.assertTrue(math.isfinite(df['train_loss'].iloc[1]))
        self.assertTrue(os.path.isfile(os.path.join(out, 'layer_1.svg')))

    def test_estimate_is_reproducible(self):
        cfg = toy_config(self.dir, **{'estimator.n': 64, 'estimator.n_x': 16})
        cli.cmd_train(cfg)

        results = []
        for threads in (1, 4):
            utils.set_default_threads(threads)
            out = os.path.join(self.dir, 'threads_{}'.format(threads))
            cli.cmd_estimate(cfg, out_dir=out, threads=threads)
            with open(os.path.join(out, 'results.csv'), 'rb') as f:
                results.append(f.read())

        self.assertEqual(results[0], results[1])

    def test_identity_channel(self):
        cfg = io_formats.build_experiment_config(
            {'network': {'kind': 'identity', 'beta': 0.1},
             'dataset': {'source': 'points', 'inputs': [[-10.0], [10.0]],
                         'labels': [0, 1]},
             'train': {'epochs': 0},
             'estimator': {'n': 1000, 'n_x': 1000, 'n_mc': 1000},
             'checkpoint_epochs': [0],
             'output_dir': self.dir})
        data = LabeledDataset(np.array([[-10.0], [10.0]]), np.array([0, 1]))
        io_formats.write_dataset(os.path.join(self.dir, 'dataset.bin'), data)
        io_formats.write_checkpoint(io_formats.checkpoint_path(self.dir, 0),
                                    noisy_net.identity_net(d=1, beta=0.1), 0)
        cli.cmd_estimate(cfg)

        df = pd.read_csv(os.path.join(self.dir, 'estimate', 'results.csv'))
        self.assertEqual(len(df), 1)
        self.assertLess(abs(df['i_sp'].iloc[0] - math.log(2)), 0.02)

    def test_relu_layers_bin_from_zero(self):
        cfg = toy_config(self.dir, **{'network.kind': 'mlp',
                                      'network.dims': [1, 3, 1],
                                      'network.activation': 'relu'})
        cli.cmd_train(cfg)
        with patch('pyspmi.cli.clustering_metrics.binned_entropy',
                   wraps=clustering_metrics.binned_entropy) as spy:
            cli.cmd_estimate(cfg, threads=1)

        specs = {c.args[1].lo for c in spy.call_args_list}
        # Layer 1 is relu, the linear head keeps its observed range.
        self.assertEqual(specs, {0.0, None})

    def test_missing_checkpoint(self):
        cfg = toy_config(self.dir)
        cli.cmd_train(cfg)
        os.remove(io_formats.checkpoint_path(self.dir, 3))

        with self.assertRaises(cli.MissingCheckpointError) as cm:
            cli.cmd_estimate(cfg)
        self.assertEqual(cm.exception.epoch, 3)

    def test_noiseless_layer_is_not_estimated(self):
        cfg = toy_config(self.dir, **{'network.beta': 0.0})
        cli.cmd_train(cfg)
        with self.assertLogs('pyspmi.cli', level='WARNING'):
            cli.cmd_estimate(cfg)

        df = pd.read_csv(os.path.join(self.dir, 'estimate', 'results.csv'))
        self.assertTrue(df['i_sp'].isna().all())
        self.assertTrue(df['binned_entropy'].notna().all())

    def test_dimension_mismatch(self):
        cfg = toy_config(self.dir)
        with self.assertRaisesRegex(io_formats.ConfigError, 'dimension 2'):
            cli.build_network(cfg, 2)


class TheoryCommandTestCase(CLITestCase):

    def test_rows(self):
        _, df = cli.cmd_theory([2, 3], 0.1, 1000, 10, 0.01, 0.1,
                               out_dir=self.dir)
        self.assertEqual(len(df), 4)
        self.assertEqual(sorted(set(df['risk_class'])),
                         ['bounded', 'subgaussian'])
        self.assertTrue((df['risk_bound'] > 0).all())
        self.assertTrue(os.path.isfile(os.path.join(self.dir, 'theory.csv')))
        self.assertEqual(read_manifest(self.dir)['command'], 'theory')


class ToyCommandTestCase(CLITestCase):

    def test_tanh(self):
        _, df = cli.cmd_toy('tanh1', out_dir=self.dir, epochs=2, n_mc=50)
        self.assertEqual(df['epoch'].tolist(), [0, 2])
        self.assertTrue((df['i_sp'] >= 0).all())
        self.assertTrue((df['i_sp'] <= math.log(4) + 0.05).all())
        for name in ('toy_mi.csv', 'densities.csv', 'mi.svg'):
            self.assertTrue(os.path.isfile(os.path.join(self.dir, name)))

        dens = pd.read_csv(os.path.join(self.dir, 'densities.csv'))
        self.assertEqual(sorted(set(dens['epoch'])), [0])

    def test_three_betas(self):
        betas = [0.01, 0.05, 0.1]
        _, df = cli.cmd_toy('tanh1', out_dir=self.dir, betas=betas, epochs=1,
                            n_mc=20)
        self.assertEqual(sorted(set(df['beta'])), betas)
        for _, g in df.groupby('beta'):
            self.assertEqual(g['epoch'].tolist(), [0, 1])

        # Four well separated points at the smallest noise level.
        first = df[(df['beta'] == 0.01) & (df['epoch'] == 0)]
        self.assertLess(abs(first['i_sp'].iloc[0] - math.log(4)), 0.05)

    def test_leaky_relu(self):
        manifest, df = cli.cmd_toy('leaky_relu2', out_dir=self.dir, epochs=2,
                                   n_mc=20)
        self.assertEqual(len(df), 6)
        for epoch, g in df.groupby('epoch'):
            self.assertEqual(g['layer'].tolist(), [1, 2])
        self.assertTrue(df['envelope_ok'].all())
        self.assertEqual(manifest.checks['envelope_violations'], 0)
        self.assertTrue((df['i_sp'] <= math.log(8) + 0.1).all())

    def test_envelope_violations_recorded(self):
        real = sp_estimator.estimate_mi

        def outside(*args, **kwargs):
            mi = real(*args, **kwargs)
            return replace(mi, i_sp=mi.upper_bound + 1.0)

        with patch('pyspmi.cli.sp_estimator.estimate_mi',
                   side_effect=outside):
            with self.assertLogs('pyspmi.cli', level='WARNING'):
                _, df = cli.cmd_toy('tanh1', out_dir=self.dir, epochs=1,
                                    n_mc=20)

        self.assertFalse(df['envelope_ok'].any())
        saved = pd.read_csv(os.path.join(self.dir, 'toy_mi.csv'))
        self.assertFalse(saved['envelope_ok'].any())
        self.assertEqual(read_manifest(self.dir)['checks'],
                         {'envelope_violations': len(df)})

    def test_unknown_toy(self):
        with self.assertRaises(ValueError):
            cli.cmd_toy('sigmoid3', out_dir=self.dir)


class AnalyzeDumpTestCase(CLITestCase):

    def write_dump(self, name, epoch, d=2, seed=0):
        rng = np.random.default_rng(seed)
        acts = ActivationSet(rng.uniform(-1, 1, (20, d)),
                             labels=np.arange(20) % 2, layer_index=2,
                             epoch=epoch)
        path = os.path.join(self.dir, name)
        io_formats.write_activation_dump(path, acts)
        return path

    def test_two_dumps(self):
        paths = [self.write_dump('b.bin', 5, seed=1),
                 self.write_dump('a.bin', 1, seed=2)]
        out = os.path.join(self.dir, 'out')
        _, df = cli.cmd_analyze_dump(paths, BinningSpec(0.5), out_dir=out,
                                     n_bins=10)

        self.assertEqual(df['epoch'].tolist(), [1, 5])
        self.assertTrue(df['within_mode'].notna().all())
        for name in ('clustering.csv', 'per_unit.csv', 'histograms.csv',
                     'slopes.csv'):
            self.assertTrue(os.path.isfile(os.path.join(out, name)), name)

        slopes = pd.read_csv(os.path.join(out, 'slopes.csv'))
        self.assertEqual(slopes['unit'].tolist(), [0, 1])

    def test_single_dump_has_no_slopes(self):
        out = os.path.join(self.dir, 'out')
        cli.cmd_analyze_dump([self.write_dump('a.bin', 0)], BinningSpec(0.5),
                             out_dir=out)
        self.assertFalse(os.path.exists(os.path.join(out, 'slopes.csv')))

    def test_dimension_disagreement(self):
        paths = [self.write_dump('a.bin', 0, d=2),
                 self.write_dump('b.bin', 1, d=3)]
        with self.assertRaisesRegex(ValueError, 'dimension'):
            cli.cmd_analyze_dump(paths, BinningSpec(0.5),
                                 out_dir=self.dir)

    def test_within_class_spread_shrinks(self):
        rng = np.random.default_rng(4)
        labels = np.arange(60) % 2
        centers = np.where(labels[:, None] == 0, -0.5, 0.5)
        paths = []
        for epoch, spread in enumerate((0.6, 0.2, 0.05)):
            acts = ActivationSet(centers + spread * rng.normal(size=(60, 2)),
                                 labels=labels, layer_index=1, epoch=epoch)
            paths.append(os.path.join(self.dir, 'e{}.bin'.format(epoch)))
            io_formats.write_activation_dump(paths[-1], acts)

        _, df = cli.cmd_analyze_dump(paths, BinningSpec(0.5),
                                     out_dir=os.path.join(self.dir, 'out'),
                                     n_bins=25, max_distance=2.5)
        modes = df['within_mode'].tolist()
        self.assertGreater(modes[0], modes[1])
        self.assertGreater(modes[1], modes[2])


class AdviseNCommandTestCase(CLITestCase):

    def test_identity_channel(self):
        cfg = io_formats.build_experiment_config(
            {'network': {'kind': 'identity', 'beta': 0.5},
             'dataset': {'source': 'points',
                         'inputs': [[0.0], [1.0], [2.0], [3.0]],
                         'labels': [0, 0, 1, 1]},
             'estimator': {'n_mc': 50},
             'output_dir': self.dir})
        _, advice = cli.cmd_advise_n(cfg, 1, 5.0)

        self.assertIn(advice.recommended_n, advice.trace['n'].tolist())
        self.assertTrue(os.path.isfile(os.path.join(self.dir,
                                                    'advise.csv')))


class MainTestCase(CLITestCase):

    def test_theory_exit_ok(self):
        code = run_pyspmi.main(['theory', '--d', '2', '--beta', '0.1',
                                '--n', '1000', '--out-dir', self.dir])
        self.assertEqual(code, run_pyspmi.EXIT_OK)

    def test_epsilon_outside_window(self):
        code = run_pyspmi.main(['theory', '--d', '2', '--beta', '0.5',
                                '--n', '1000', '--epsilon', '0.1',
                                '--out-dir', self.dir])
        self.assertEqual(code, run_pyspmi.EXIT_CONFIG)

    def test_bad_config(self):
        code = run_pyspmi.main(['train', '--set', 'train.momentum=0.9',
                                '--out-dir', self.dir])
        self.assertEqual(code, run_pyspmi.EXIT_CONFIG)

    def test_bad_config_file(self):
        path = os.path.join(self.dir, 'cfg.json')
        with open(path, 'w') as f:
            f.write('{"train": ')
        code = run_pyspmi.main(['train', '--config', path])
        self.assertEqual(code, run_pyspmi.EXIT_CONFIG)

    def test_corrupt_dataset(self):
        with open(os.path.join(self.dir, 'dataset.bin'), 'wb') as f:
            f.write(b'garbage\n')
        code = run_pyspmi.main(['estimate', '--checkpoint-dir', self.dir])
        self.assertEqual(code, run_pyspmi.EXIT_IO)

    def test_train_then_estimate(self):
        path = os.path.join(self.dir, 'cfg.json')
        with open(path, 'w') as f:
            json.dump({'network': {'kind': 'toy_tanh', 'beta': 0.05},
                       'dataset': {'source': 'toy_tanh'},
                       'train': {'loss': 'mean_squared'},
                       'estimator': {'n_mc': 20},
                       'binning': {'bin_size': 0.5}}, f)
        common = ['--config', path, '--out-dir', self.dir, '--epochs', '2']
        self.assertEqual(run_pyspmi.main(['train'] + common), 0)
        self.assertEqual(run_pyspmi.main(['estimate'] + common), 0)

        df = pd.read_csv(os.path.join(self.dir, 'results.csv'))
        self.assertEqual(df['epoch'].tolist(), [0, 2])


if __name__ == '__main__':
    unittest.main()
