"""Experiment commands behind the pyspmi console script.

Every cmd_* function does one job end to end, writes its outputs to a
directory and finishes by writing manifest.json (a RunManifest). The
argument parsing lives in run_pyspmi.py.

Outputs:
    train         checkpoint_<epoch>.bin, dataset.bin, loss.csv
    estimate      results.csv, layer_<l>.svg, optionally per_unit.csv and
                  histograms.csv (by default in <checkpoint dir>/estimate)
    theory        theory.csv
    toy           toy_mi.csv, densities.csv, mi.svg
    analyze-dump  clustering.csv, per_unit.csv, histograms.csv and, with
                  two or more dumps, slopes.csv
    advise-n      advise.csv
"""
import logging
import math
import os
import time
from contextlib import contextmanager

import numpy as np
import pandas as pd

import pyspmi
from pyspmi import utils
from pyspmi import noisy_net
from pyspmi import sp_estimator
from pyspmi import clustering_metrics
from pyspmi import io_formats
from pyspmi import svg

LOG = logging.getLogger(__name__)

CONFIG = utils.read_config()


class Error(Exception):
    """Base class for exceptions in this module."""
    pass


class MissingCheckpointError(Error, FileNotFoundError):
    """Raised when a scheduled checkpoint file does not exist."""

    def __init__(self, epoch, path):
        self.epoch = epoch
        super().__init__('No checkpoint for epoch {} (expected {}).'
                         .format(epoch, path))


class RunManifest:
    """Record of one command run: configuration hash, seeds, version,
    wall-clock time per phase, every file written and the
    outcome of the run's internal checks."""

    def __init__(self, command, config=None, seeds=None):
        self.command = command
        self.config_hash = (None if config is None
                            else utils.config_hash(config))
        self.seeds = dict(seeds or {})
        self.version = pyspmi.__version__
        self.phases = {}
        self.outputs = []
        self.checks = {}
        self.log = logging.getLogger(self.__class__.__name__)

    @contextmanager
    def phase(self, name):
        """Time a phase of the run."""
        self.log.info('Starting phase "{}".'.format(name))
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) \
                                + time.perf_counter() - t0
            self.log.info('Phase "{}" took {:.2f} s.'
                          .format(name, self.phases[name]))

    def add_output(self, path):
        if path not in self.outputs:
            self.outputs.append(path)

    def to_dict(self, out_dir):
        return {'command': self.command, 'config_hash': self.config_hash,
                'seeds': self.seeds, 'version': self.version,
                'phases': self.phases,
                'checks': self.checks,
                'outputs': sorted(os.path.relpath(p, out_dir)
                                  for p in self.outputs)}

    def write(self, out_dir):
        path = os.path.join(out_dir, 'manifest.json')
        io_formats.write_json(path, self.to_dict(out_dir))
        return path


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _experiment_seeds(cfg):
    return {'network': cfg.network['seed'], 'dataset': cfg.dataset['seed'],
            'train': cfg.train['seed'], 'estimator': cfg.estimator['seed'],
            'histograms': cfg.histograms['seed']}


########################################################################
# Building experiments from a configuration
########################################################################
def build_dataset(cfg):
    """Dataset of an ExperimentConfig.

    :returns: (train data, test data or None)
    """
    ds = cfg.dataset
    source = ds['source']
    if source == 'spiral':
        data = noisy_net.spiral_dataset(ds['n_per_class'], ds['noise_std'],
                                        ds['turns'], seed=ds['seed'])
    elif source == 'szt_synthetic':
        data = noisy_net.szt_dataset(seed=ds['seed'])
    elif source == 'file':
        data = noisy_net.load_dataset(ds['path'])
    elif source == 'points':
        data = noisy_net.LabeledDataset(np.array(ds['inputs']),
                                        np.array(ds['labels']),
                                        name='points')
    elif source == 'toy_tanh':
        data = noisy_net.toy_dataset('tanh1')
    else:
        data = noisy_net.toy_dataset('leaky_relu2')

    if ds['test_fraction'] == 0:
        return data, None

    order = utils.substream(ds['seed'], 1).permutation(data.m)
    n_test = int(round(ds['test_fraction'] * data.m))
    if n_test < 1 or n_test >= data.m:
        raise io_formats.ConfigError(['"dataset.test_fraction" leaves an '
                                      'empty train or test set.'])

    test, train = order[:n_test], order[n_test:]

    def subset(idx, tag):
        return noisy_net.LabeledDataset(data.inputs[idx], data.labels[idx],
                                        name='{}[{}]'.format(data.name, tag))

    return subset(np.sort(train), 'train'), subset(np.sort(test), 'test')


def build_network(cfg, d0):
    """Initial network of an ExperimentConfig for inputs of dimension
    d0."""
    nw = cfg.network
    kind = nw['kind']
    if kind == 'spiral':
        net = noisy_net.spiral_net(seed=nw['seed'],
                                   activation=nw['activation'],
                                   beta=nw['beta'])
    elif kind == 'szt':
        net = noisy_net.szt_net(seed=nw['seed'], activation=nw['activation'],
                                beta=nw['beta'])
    elif kind == 'mlp':
        net = noisy_net.build_mlp(nw['dims'], activation=nw['activation'],
                                  beta=nw['beta'], seed=nw['seed'])
    elif kind == 'identity':
        net = noisy_net.identity_net(d0, beta=nw['beta'])
    elif kind == 'toy_tanh':
        net = noisy_net.toy_tanh_net(seed=nw['seed'], beta=nw['beta'])
    else:
        net = noisy_net.toy_leaky_relu_net(seed=nw['seed'], beta=nw['beta'])

    if net.input_dim != d0:
        raise io_formats.ConfigError(
            ['The network takes {} inputs but the dataset has dimension {}.'
             .format(net.input_dim, d0)])

    return net


def _checkpoint_epochs(cfg):
    epochs = sorted(set(cfg.checkpoint_epochs))
    return epochs if epochs else [cfg.train['epochs']]


########################################################################
# Commands
########################################################################
def cmd_train(cfg, out_dir=None):
    """Train the configured network and write its checkpoints, the
    dataset and the loss trace.

    :returns: RunManifest.
    """
    out_dir = _out_dir(out_dir or cfg.output_dir)
    manifest = RunManifest('train', cfg.to_dict(), _experiment_seeds(cfg))

    with manifest.phase('setup'):
        data, test = build_dataset(cfg)
        net = build_network(cfg, data.d0)
        path = os.path.join(out_dir, 'dataset.bin')
        io_formats.write_dataset(path, data)
        manifest.add_output(path)

    with manifest.phase('train'):
        result = noisy_net.train(net, data, cfg.train_config(),
                                 checkpoint_epochs=_checkpoint_epochs(cfg),
                                 test_data=test)

    with manifest.phase('write'):
        for epoch in sorted(result.checkpoints):
            path = io_formats.checkpoint_path(out_dir, epoch)
            io_formats.write_checkpoint(path, result.checkpoints[epoch],
                                        epoch)
            manifest.add_output(path)

        path = os.path.join(out_dir, 'loss.csv')
        io_formats.write_table(path, result.losses)
        manifest.add_output(path)

        if test is not None:
            path = os.path.join(out_dir, 'test_dataset.bin')
            io_formats.write_dataset(path, test)
            manifest.add_output(path)

        if data.label_kind == 'class' and net.layers[-1].d_out > 1:
            LOG.info('Final train accuracy: {:.3f}.'
                     .format(noisy_net.accuracy(net, data)))

    manifest.write(out_dir)
    return manifest


def _read_losses(checkpoint_dir):
    path = os.path.join(checkpoint_dir, 'loss.csv')
    if not os.path.isfile(path):
        return {}

    df = pd.read_csv(path)
    return {int(r.epoch): (r.train_loss, r.test_loss)
            for r in df.itertuples(index=False)}


def _nan_to_none(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) \
        else v


def cmd_estimate(cfg, checkpoint_dir=None, out_dir=None, threads=None):
    """Estimate I_SP and the clustering metrics for every scheduled
    checkpoint and layer.

    Noiseless layers are reported without MI (a warning explains why)
    while their binned metrics are still computed.

    :returns: RunManifest.

    :raises MissingCheckpointError: naming the first missing epoch.
    """
    checkpoint_dir = checkpoint_dir or cfg.output_dir
    out_dir = _out_dir(out_dir or os.path.join(checkpoint_dir, 'estimate'))
    threads = cfg.threads if threads is None else threads
    manifest = RunManifest('estimate', cfg.to_dict(), _experiment_seeds(cfg))
    est = cfg.estimator

    with manifest.phase('load'):
        data = io_formats.read_dataset(os.path.join(checkpoint_dir,
                                                    'dataset.bin'))
        nets = {}
        for epoch in _checkpoint_epochs(cfg):
            path = io_formats.checkpoint_path(checkpoint_dir, epoch)
            if not os.path.isfile(path):
                raise MissingCheckpointError(epoch, path)
            nets[epoch], _ = io_formats.read_checkpoint(path)
        losses = _read_losses(checkpoint_dir)

    rows, unit_rows, hist_rows = [], [], []
    refused = set()
    with manifest.phase('estimate'):
        for epoch, net in nets.items():
            layers = est['layers'] or list(range(1, net.depth + 1))
            for layer in layers:
                row = {'epoch': epoch, 'layer': layer}
                spec = cfg.binning_spec(net.layer(layer).activation)
                try:
                    mi = sp_estimator.estimate_mi(
                        net, data, layer, n=est['n'], n_x=est['n_x'],
                        n_mc=est['n_mc'],
                        seed=utils.derive_seed(est['seed'], epoch, layer),
                        threads=threads, beta=est['beta_override'])
                except sp_estimator.VacuousMIError as e:
                    if layer not in refused:
                        LOG.warning('Not estimating MI: {}'.format(e))
                        refused.add(layer)
                else:
                    row.update(
                        i_sp=mi.i_sp, h_uncond=mi.h_unconditional.value,
                        h_cond_mean=mi.h_conditional_mean,
                        lb=mi.lower_bound, ub=mi.upper_bound,
                        mc_se=mi.combined_std_error)

                acts = noisy_net.collect_activations(
                    net, data, layer, mode='deterministic', epoch=epoch)
                row['binned_entropy'] = clustering_metrics.binned_entropy(
                    acts, spec)
                train_loss, test_loss = losses.get(epoch, (None, None))
                row['train_loss'] = _nan_to_none(train_loss)
                row['test_loss'] = _nan_to_none(test_loss)
                rows.append(row)

                if est['per_unit']:
                    ent = clustering_metrics.per_unit_binned_entropy(acts,
                                                                     spec)
                    unit_rows.extend({'epoch': epoch, 'layer': layer,
                                      'unit': k, 'entropy': v}
                                     for k, v in enumerate(ent))

                if est['histograms'] and data.label_kind == 'class':
                    hist_rows.extend(_histogram_rows(
                        acts, cfg.histograms, epoch=epoch, layer=layer))

    with manifest.phase('write'):
        path = os.path.join(out_dir, 'results.csv')
        io_formats.write_results_csv(path, rows)
        manifest.add_output(path)

        if unit_rows:
            path = os.path.join(out_dir, 'per_unit.csv')
            io_formats.write_table(path, pd.DataFrame(unit_rows))
            manifest.add_output(path)

        if hist_rows:
            path = os.path.join(out_dir, 'histograms.csv')
            io_formats.write_table(path, pd.DataFrame(hist_rows))
            manifest.add_output(path)

        df = pd.DataFrame(rows, columns=io_formats.RESULT_COLUMNS)
        for layer, group in df.groupby('layer', sort=True):
            group = group.sort_values('epoch')
            has_mi = group['i_sp'].notna().all()
            path = os.path.join(out_dir, 'layer_{}.svg'.format(layer))
            svg.mi_and_binning_plot(
                path, group['epoch'].tolist(),
                group['i_sp'].tolist() if has_mi else None,
                group['binned_entropy'].tolist(), layer,
                std_error=group['mc_se'].tolist() if has_mi else None)
            manifest.add_output(path)

    manifest.write(out_dir)
    return manifest


def _histogram_rows(acts, hcfg, **keys):
    hist = clustering_metrics.pairwise_distance_histogram(
        acts, n_bins=hcfg['n_bins'], max_distance=hcfg['max_distance'],
        pair_cap=hcfg['pair_cap'], seed=hcfg['seed'])
    out = []
    for k in range(hist.within_counts.size):
        row = dict(keys)
        row.update(bin_lo=hist.edges[k], bin_hi=hist.edges[k + 1],
                   within=int(hist.within_counts[k]),
                   between=int(hist.between_counts[k]))
        out.append(row)
    return out


def cmd_theory(d_values, beta, n, n_mc, epsilon, delta,
               classes=sp_estimator.RISK_CLASSES, mu=None, k=None, m_c=None,
               out_dir='pyspmi_out'):
    """Evaluate the theory calculators for every d and risk class.

    :returns: (RunManifest, DataFrame of TheoryReport rows)

    :raises EpsilonWindowError: for an epsilon outside the valid window.
    """
    out_dir = _out_dir(out_dir)
    inputs = {'d': list(d_values), 'beta': beta, 'n': n, 'n_mc': n_mc,
              'epsilon': epsilon, 'delta': delta, 'classes': list(classes),
              'mu': mu, 'k': k, 'm_c': m_c}
    manifest = RunManifest('theory', inputs)

    with manifest.phase('theory'):
        rows = [sp_estimator.theory_report(d, beta, n, n_mc, epsilon, delta,
                                           cls=cls, mu=mu, k=k,
                                           m_c=m_c).as_row()
                for d in d_values for cls in classes]
        df = pd.DataFrame(rows)

    path = os.path.join(out_dir, 'theory.csv')
    io_formats.write_table(path, df)
    manifest.add_output(path)
    manifest.write(out_dir)
    return manifest, df


def _toy_density_rows(net, data, epoch, toy_name, beta, seed):
    rows = []
    for layer in range(1, net.depth + 1):
        s = net.forward(data.inputs)[layer - 1][0][:, 0]
        grid = np.linspace(s.min() - 5 * beta, s.max() + 5 * beta, 401)
        snap = sp_estimator.density_snapshot(net, data, layer, grid,
                                             seed=seed)
        for t, p in zip(snap['t'], snap['density']):
            rows.append({'toy': toy_name, 'beta': beta, 'epoch': epoch,
                         'layer': layer, 't': t, 'density': p})
    return rows


def cmd_toy(which, out_dir='pyspmi_out', betas=None, epochs=None, seed=0,
            n_mc=None, threads=None):
    """Train a toy network and follow I(X; T_l) of every layer.

    :param which: 'tanh1' or 'leaky_relu2'.
    :param betas: noise levels to run, one series each. None uses the
        configured value.
    :param epochs: training epochs (0 gives the initial state only).

    :returns: (RunManifest, DataFrame of the MI series)
    """
    if which not in CONFIG['toys']:
        raise ValueError('Unknown toy {}; expected one of {}.'
                         .format(which, utils.list_to_string(
                             sorted(CONFIG['toys']), 'or')))

    toy = CONFIG['toys'][which]
    betas = [toy['beta']] if not betas else list(betas)
    epochs = toy['epochs'] if epochs is None else epochs
    n_mc = toy['n_mc'] if n_mc is None else n_mc
    every = toy['estimate_every']
    out_dir = _out_dir(out_dir)

    inputs = {'which': which, 'betas': betas, 'epochs': epochs, 'seed': seed,
              'n_mc': n_mc}
    manifest = RunManifest('toy', inputs, {'seed': seed})

    schedule = sorted(set(range(0, epochs + 1, every)) | {epochs})
    snapshots = [e for e in toy['density_epochs'] if e <= epochs] or [0]
    data = noisy_net.toy_dataset(which)
    build = (noisy_net.toy_tanh_net if which == 'tanh1'
             else noisy_net.toy_leaky_relu_net)

    mi_rows, density_rows = [], []
    violations = 0
    for b, beta in enumerate(betas):
        net = build(seed=seed, beta=beta)
        cfg = noisy_net.TrainConfig(
            loss='mean_squared', learning_rate=toy['learning_rate'],
            epochs=epochs, seed=utils.derive_seed(seed, b))

        with manifest.phase('train'):
            result = noisy_net.train(net, data, cfg,
                                     checkpoint_epochs=set(schedule)
                                     | set(snapshots))
        losses = dict(zip(result.losses['epoch'],
                          result.losses['train_loss']))

        with manifest.phase('estimate'):
            for epoch in schedule:
                snap = result.checkpoints[epoch]
                for layer in range(1, snap.depth + 1):
                    n_x = toy.get('n_x', data.m)
                    mi = sp_estimator.estimate_mi(
                        snap, data, layer,
                        n=data.m if layer == 1 else data.m * n_x,
                        n_x=n_x, n_mc=n_mc,
                        seed=utils.derive_seed(seed, b, epoch, layer),
                        threads=threads)
                    slack = 5 * mi.combined_std_error
                    inside = (mi.lower_bound - slack <= mi.i_sp
                              <= mi.upper_bound + slack)
                    if not inside:
                        violations += 1
                        LOG.warning('I_SP {:.4f} outside its envelope '
                                    '[{:.4f}, {:.4f}] at epoch {}, layer {}.'
                                    .format(mi.i_sp, mi.lower_bound,
                                            mi.upper_bound, epoch, layer))
                    mi_rows.append({
                        'toy': which, 'beta': beta, 'epoch': epoch,
                        'layer': layer, 'i_sp': mi.i_sp,
                        'lb': mi.lower_bound, 'ub': mi.upper_bound,
                        'mc_se': mi.combined_std_error,
                        'envelope_ok': bool(inside),
                        'train_loss': losses.get(epoch, math.nan)})

            for epoch in snapshots:
                density_rows.extend(_toy_density_rows(
                    result.checkpoints[epoch], data, epoch, which, beta,
                    seed=utils.derive_seed(seed, b, epoch)))

    # Bounds must bracket every estimate, up to MC error.
    manifest.checks['envelope_violations'] = violations
    if violations:
        LOG.error('{} of {} estimates fell outside their bound envelope.'
                  .format(violations, len(mi_rows)))

    df = pd.DataFrame(mi_rows)
    with manifest.phase('write'):
        path = os.path.join(out_dir, 'toy_mi.csv')
        io_formats.write_table(path, df)
        manifest.add_output(path)

        path = os.path.join(out_dir, 'densities.csv')
        io_formats.write_table(path, pd.DataFrame(density_rows))
        manifest.add_output(path)

        series, envelopes = {}, {}
        for (beta, layer), g in df.groupby(['beta', 'layer'], sort=True):
            name = 'beta={:g}, T{}'.format(beta, layer)
            series[name] = (g['epoch'].tolist(), g['i_sp'].tolist())
            envelopes[name] = (g['epoch'].tolist(), g['lb'].tolist(),
                               g['ub'].tolist())
        path = os.path.join(out_dir, 'mi.svg')
        svg.series_plot(path, series, 'epoch', 'I(X;T) [nats]',
                        title=which, envelopes=envelopes)
        manifest.add_output(path)

    manifest.write(out_dir)
    return manifest, df


def cmd_analyze_dump(paths, spec, out_dir='pyspmi_out', n_bins=None,
                     max_distance=None, pair_cap=None, seed=0):
    """Clustering metrics for externally produced activation dumps.

    Dumps are ordered by epoch. Slopes of the per-unit entropies are fit
    when there are at least two dumps.

    :returns: (RunManifest, DataFrame of per-dump metrics)

    :raises ValueError: if the dumps disagree on the dimension.
    """
    out_dir = _out_dir(out_dir)
    inputs = {'dumps': [os.path.basename(p) for p in paths],
              'binning': spec.__dict__, 'n_bins': n_bins,
              'max_distance': max_distance, 'pair_cap': pair_cap,
              'seed': seed}
    manifest = RunManifest('analyze-dump', inputs, {'histograms': seed})

    with manifest.phase('load'):
        dumps = [io_formats.read_activation_dump(p) for p in paths]
        dims = sorted({a.dim for a in dumps})
        if len(dims) > 1:
            raise ValueError('Activation dumps disagree on the dimension: {}.'
                             .format(dims))
        order = sorted(range(len(dumps)), key=lambda i: dumps[i].epoch)
        dumps = [dumps[i] for i in order]

    rows, unit_rows, hist_rows, per_epoch = [], [], [], []
    with manifest.phase('analyze'):
        for acts in dumps:
            row = {'epoch': acts.epoch, 'layer': acts.layer_index,
                   'n': acts.n,
                   'binned_entropy': clustering_metrics.binned_entropy(
                       acts, spec),
                   'within_mode': None, 'between_mode': None}
            ent = clustering_metrics.per_unit_binned_entropy(acts, spec)
            per_epoch.append(ent)
            unit_rows.extend({'epoch': acts.epoch, 'layer': acts.layer_index,
                              'unit': k, 'entropy': v}
                             for k, v in enumerate(ent))

            if acts.labels is not None and acts.n >= 2:
                hist = clustering_metrics.pairwise_distance_histogram(
                    acts, n_bins=n_bins, max_distance=max_distance,
                    pair_cap=pair_cap, seed=seed)
                row['within_mode'] = clustering_metrics.histogram_mode(
                    hist, 'within')
                row['between_mode'] = clustering_metrics.histogram_mode(
                    hist, 'between')
                for k in range(hist.within_counts.size):
                    hist_rows.append({'epoch': acts.epoch,
                                      'bin_lo': hist.edges[k],
                                      'bin_hi': hist.edges[k + 1],
                                      'within': int(hist.within_counts[k]),
                                      'between': int(hist.between_counts[k])})
            rows.append(row)

        slopes = None
        if len(dumps) >= 2:
            mean, std, slopes = clustering_metrics.entropy_slopes(
                per_epoch, [a.epoch for a in dumps])
            LOG.info('Per-unit entropy slope: mean {:.4g}, std {:.4g} '
                     'nats/epoch.'.format(mean, std))
        else:
            LOG.info('A single dump: entropy slopes are not available.')

    df = pd.DataFrame(rows, columns=['epoch', 'layer', 'n', 'binned_entropy',
                                     'within_mode', 'between_mode'])
    with manifest.phase('write'):
        outputs = [('clustering.csv', df),
                   ('per_unit.csv', pd.DataFrame(unit_rows))]
        if hist_rows:
            outputs.append(('histograms.csv', pd.DataFrame(hist_rows)))
        if slopes is not None:
            outputs.append(('slopes.csv', pd.DataFrame(
                {'unit': np.arange(slopes.size), 'slope': slopes})))

        for name, table in outputs:
            path = os.path.join(out_dir, name)
            io_formats.write_table(path, table)
            manifest.add_output(path)

    manifest.write(out_dir)
    return manifest, df


def cmd_advise_n(cfg, layer, target_tol, checkpoint=None, out_dir=None,
                 threads=None):
    """Recommend n for one layer of the configured (or checkpointed)
    network.

    :returns: (RunManifest, sp_estimator.Advice)
    """
    out_dir = _out_dir(out_dir or cfg.output_dir)
    manifest = RunManifest('advise-n', cfg.to_dict(), _experiment_seeds(cfg))
    threads = cfg.threads if threads is None else threads

    with manifest.phase('setup'):
        data, _ = build_dataset(cfg)
        if checkpoint is None:
            net = build_network(cfg, data.d0)
        else:
            net, _ = io_formats.read_checkpoint(checkpoint)

    with manifest.phase('ladder'):
        advice = sp_estimator.advise_n(net, data, layer, target_tol,
                                       seed=cfg.estimator['seed'],
                                       n_mc=cfg.estimator['n_mc'],
                                       threads=threads)

    path = os.path.join(out_dir, 'advise.csv')
    io_formats.write_table(path, advice.trace)
    manifest.add_output(path)
    manifest.write(out_dir)
    LOG.info('Recommended n = {} ({}).'.format(
        advice.recommended_n, 'stable' if advice.stable else 'NOT stable'))
    return manifest, advice
