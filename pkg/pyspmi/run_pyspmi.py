"""Command line entry point (the pyspmi console script).

Subcommands: train, estimate, theory, toy, analyze-dump, advise-n. Run
"pyspmi <subcommand> -h" for the flags of each.

Experiment commands read their settings from the defaults in
pyspmi_config.json, then --config, then individual flags (--set takes
any dotted key, e.g. --set train.epochs=10).

Exit codes: 0 success, 2 configuration or argument error, 3 numerical
failure, 4 I/O or parse error.
"""
import argparse
import logging
import sys

try:
    import simplejson as json
except ModuleNotFoundError:
    import json

from pyspmi import cli
from pyspmi import utils
from pyspmi import gmm_entropy
from pyspmi import noisy_net
from pyspmi import sp_estimator
from pyspmi import io_formats
from pyspmi.clustering_metrics import BinningSpec, OutOfRangeError

# Setup log.
LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _set_log_level(level_name):
    level = getattr(logging, level_name.upper())
    root = logging.getLogger()
    root.setLevel(level)
    for h in root.handlers:
        h.setLevel(level)


def _parse_set(items):
    """--set key=value pairs; values are JSON when they parse as JSON and
    strings otherwise."""
    out = {}
    for item in items or []:
        if '=' not in item:
            raise io_formats.ConfigError(
                ['--set expects key=value, got "{}".'.format(item)])
        key, raw = item.split('=', 1)
        try:
            out[key] = json.loads(raw)
        except ValueError:
            out[key] = raw
    return out


def _experiment_config(opts):
    overrides = _parse_set(opts.set)
    if opts.seed is not None:
        for key in ('network.seed', 'dataset.seed', 'train.seed',
                    'estimator.seed', 'histograms.seed'):
            overrides.setdefault(key, opts.seed)
    if opts.threads is not None:
        overrides['threads'] = opts.threads
    if opts.out_dir is not None:
        overrides['output_dir'] = opts.out_dir

    for flag, key in (('epochs', 'train.epochs'), ('beta', 'network.beta'),
                      ('n', 'estimator.n'), ('n_x', 'estimator.n_x'),
                      ('n_mc', 'estimator.n_mc')):
        value = getattr(opts, flag, None)
        if value is not None:
            overrides[key] = value

    return io_formats.load_experiment_config(opts.config, overrides)


def _add_common(p, experiment=True):
    p.add_argument('--seed', type=int, default=None,
                   help='Seed for every random stream of the command.')
    p.add_argument('--threads', type=int, default=None,
                   help='Worker threads. Results do not depend on it.')
    p.add_argument('--out-dir', dest='out_dir', default=None,
                   help='Directory for the outputs.')
    p.add_argument('--log-level', dest='log_level', default=None,
                   choices=['debug', 'info', 'warning', 'error'])
    if experiment:
        p.add_argument('--config', default=None,
                       help='Experiment configuration file (JSON).')
        p.add_argument('--set', action='append', metavar='KEY=VALUE',
                       help='Override a configuration key, e.g. '
                            'train.epochs=10. May be repeated.')
        p.add_argument('--epochs', type=int, default=None)
        p.add_argument('--beta', type=float, default=None)
        p.add_argument('--n', type=int, default=None)
        p.add_argument('--n-x', dest='n_x', type=int, default=None)
        p.add_argument('--n-mc', dest='n_mc', type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='pyspmi',
        description='Mutual information in noisy neural networks.')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('train', help='Train a network, write checkpoints.')
    _add_common(p)

    p = sub.add_parser('estimate', help='I_SP and clustering metrics for '
                                        'every checkpoint.')
    _add_common(p)
    p.add_argument('--checkpoint-dir', dest='checkpoint_dir', default=None,
                   help='Directory written by "train". Defaults to the '
                        'configured output directory.')

    p = sub.add_parser('theory', help='Evaluate the theory calculators.')
    _add_common(p, experiment=False)
    p.add_argument('--d', type=int, nargs='+', required=True)
    p.add_argument('--beta', type=float, required=True)
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--n-mc', dest='n_mc', type=int, default=1000)
    p.add_argument('--epsilon', type=float, default=0.01)
    p.add_argument('--delta', type=float, default=0.1)
    p.add_argument('--classes', nargs='+', default=['bounded', 'subgaussian'],
                   choices=sp_estimator.RISK_CLASSES)
    p.add_argument('--mu', type=float, default=None)
    p.add_argument('--k', type=float, default=None)
    p.add_argument('--m-c', dest='m_c', type=float, default=None)

    p = sub.add_parser('toy', help='Run a toy network experiment.')
    _add_common(p, experiment=False)
    p.add_argument('which', choices=['tanh1', 'leaky_relu2'])
    p.add_argument('--betas', type=float, nargs='+', default=None)
    p.add_argument('--epochs', type=int, default=None)
    p.add_argument('--n-mc', dest='n_mc', type=int, default=None)

    p = sub.add_parser('analyze-dump', help='Clustering metrics of '
                                            'activation dumps.')
    _add_common(p, experiment=False)
    p.add_argument('dumps', nargs='+')
    p.add_argument('--bin-size', dest='bin_size', type=float, required=True)
    p.add_argument('--lo', type=float, default=None,
                   help='Lower edge of the range (default: observed).')
    p.add_argument('--hi', type=float, default=None,
                   help='Upper edge of the range (default: observed).')
    p.add_argument('--no-clamp', dest='clamp', action='store_false')
    p.add_argument('--overflow', action='store_true',
                   help='Collect values >= hi in one extra bin.')
    p.add_argument('--n-bins', dest='n_bins', type=int, default=None)
    p.add_argument('--max-distance', dest='max_distance', type=float,
                   default=None)
    p.add_argument('--pair-cap', dest='pair_cap', type=int, default=None)

    p = sub.add_parser('advise-n', help='Recommend a sample size.')
    _add_common(p)
    p.add_argument('--layer', type=int, required=True)
    p.add_argument('--target-tol', dest='target_tol', type=float,
                   default=None)
    p.add_argument('--checkpoint', default=None,
                   help='Checkpoint file; default is the initial network.')

    return parser


def _run(opts):
    if opts.threads is not None:
        utils.set_default_threads(opts.threads)

    seed = 0 if opts.seed is None else opts.seed
    out_dir = opts.out_dir or 'pyspmi_out'

    if opts.command == 'train':
        cli.cmd_train(_experiment_config(opts))
    elif opts.command == 'estimate':
        cli.cmd_estimate(_experiment_config(opts),
                         checkpoint_dir=opts.checkpoint_dir,
                         out_dir=opts.out_dir)
    elif opts.command == 'theory':
        _, df = cli.cmd_theory(opts.d, opts.beta, opts.n, opts.n_mc,
                               opts.epsilon, opts.delta, classes=opts.classes,
                               mu=opts.mu, k=opts.k, m_c=opts.m_c,
                               out_dir=out_dir)
        print(df.to_string(index=False))
    elif opts.command == 'toy':
        cli.cmd_toy(opts.which, out_dir=out_dir, betas=opts.betas,
                    epochs=opts.epochs, seed=seed, n_mc=opts.n_mc,
                    threads=opts.threads)
    elif opts.command == 'analyze-dump':
        spec = BinningSpec(opts.bin_size, lo=opts.lo, hi=opts.hi,
                           clamp_out_of_range=opts.clamp,
                           overflow=opts.overflow)
        cli.cmd_analyze_dump(opts.dumps, spec, out_dir=out_dir,
                             n_bins=opts.n_bins,
                             max_distance=opts.max_distance,
                             pair_cap=opts.pair_cap, seed=seed)
    elif opts.command == 'advise-n':
        cfg = _experiment_config(opts)
        tol = (cfg.estimator['target_tol'] if opts.target_tol is None
               else opts.target_tol)
        _, advice = cli.cmd_advise_n(cfg, opts.layer, tol,
                                     checkpoint=opts.checkpoint)
        print('recommended n: {} ({})'.format(
            advice.recommended_n, 'stable' if advice.stable else 'unstable'))


def main(argv=None):
    """Run the command line. Returns the exit code."""
    parser = build_parser()
    opts = parser.parse_args(argv)
    if opts.log_level is not None:
        _set_log_level(opts.log_level)

    try:
        _run(opts)
    except io_formats.ParseError as e:
        LOG.error(str(e))
        return EXIT_IO
    except (io_formats.ConfigError, sp_estimator.EpsilonWindowError,
            OutOfRangeError, noisy_net.NetworkError,
            noisy_net.DimensionError, ValueError, TypeError) as e:
        LOG.error(str(e))
        return EXIT_CONFIG
    except (noisy_net.DivergenceError, sp_estimator.VacuousMIError,
            gmm_entropy.Error, FloatingPointError) as e:
        LOG.error(str(e))
        return EXIT_NUMERICAL
    except OSError as e:
        LOG.error(str(e))
        return EXIT_IO

    return EXIT_OK


def _main():
    sys.exit(main())


if __name__ == '__main__':
    _main()
