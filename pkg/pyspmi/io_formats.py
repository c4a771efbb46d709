"""File formats for pyspmi.

Binary files (activation dumps, datasets, checkpoints) share one layout:
a single newline-terminated JSON header line whose "format" key names
the file type, followed by raw little-endian payload arrays, row-major.
Nothing depends on the platform's byte order. Readers accept headers
without "format"; a header naming another format is rejected.

Activation dump:
    {"format": "pyspmi-activations", "n", "d", "dtype": "f64le",
     "layer", "epoch", "has_labels", "noisy"}
    n*d float64, then n int32 labels when has_labels.

Dataset:
    {"format": "pyspmi-dataset", "m", "d0", "labels": "class"|"scalar",
     "name"}
    m*d0 float64, then m labels (int32 for class, float64 for scalar).

Checkpoint:
    {"format": "pyspmi-checkpoint", "epoch", "dims", "activations",
     "slopes", "betas"}
    then for every layer its weight matrix (d_l x d_{l-1} float64) and
    bias (d_l float64).

Small result tables are CSV, written with pandas using a fixed, locale
independent number format. Experiment configurations are JSON merged
over the defaults in pyspmi_config.json.
"""
import copy
import logging
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

try:
    import simplejson as json
except ModuleNotFoundError:
    import json

from pyspmi import utils
from pyspmi import noisy_net
from pyspmi.clustering_metrics import BinningSpec

LOG = logging.getLogger(__name__)

CONFIG = utils.read_config()

ACTIVATIONS_MAGIC = 'pyspmi-activations'
DATASET_MAGIC = 'pyspmi-dataset'
CHECKPOINT_MAGIC = 'pyspmi-checkpoint'

F64 = np.dtype('<f8')
I32 = np.dtype('<i4')

RESULT_COLUMNS = ['epoch', 'layer', 'i_sp', 'h_uncond', 'h_cond_mean', 'lb',
                  'ub', 'mc_se', 'binned_entropy', 'train_loss', 'test_loss']

# Numbers in CSV output carry 9 significant digits.
FLOAT_FORMAT = '%.9g'


class Error(Exception):
    """Base class for exceptions in this module."""
    pass


class ParseError(Error):
    """Raised for malformed files. offset is the byte position at which
    the problem was found."""

    def __init__(self, message, offset, path=None):
        self.offset = offset
        self.path = path
        where = '' if path is None else '{}: '.format(path)
        super().__init__('{}{} (byte offset {})'.format(where, message,
                                                        offset))


class DatasetParseError(ParseError):
    """Raised for malformed dataset files."""
    pass


class ConfigError(Error):
    """Raised for invalid experiment configurations. problems lists every
    problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__('Invalid configuration:\n  '
                         + '\n  '.join(self.problems))


########################################################################
# Shared binary layout
########################################################################
def _write_binary(path, header, arrays):
    line = (utils.canonical_json(header) + '\n').encode('utf-8')
    with open(path, 'wb') as f:
        f.write(line)
        for a, dtype in arrays:
            f.write(np.ascontiguousarray(a, dtype=dtype).tobytes())


def _read_header(path, magic, required, error=ParseError):
    """Return (header dict, payload bytes, payload offset)."""
    with open(path, 'rb') as f:
        data = f.read()

    end = data.find(b'\n')
    if end < 0:
        raise error('No header line', len(data), path)

    try:
        header = json.loads(data[:end].decode('utf-8'))
    except (ValueError, UnicodeDecodeError) as e:
        raise error('Header is not valid JSON ({})'.format(e), 0,
                    path) from None

    if not isinstance(header, dict):
        raise error('Header must be a JSON object', 0, path)

    # Files written elsewhere may leave "format" out; a wrong one is an
    # error.
    if header.get('format', magic) != magic:
        raise error('Bad magic: expected format "{}"'.format(magic), 0, path)

    missing = [k for k in required if k not in header]
    if missing:
        raise error('Header lacks {}'.format(
            utils.list_to_string(missing, 'and')), 0, path)

    return header, data[end + 1:], end + 1


class _PayloadReader:
    """Sequential reader of fixed-size arrays with offset tracking."""

    def __init__(self, payload, offset, path, error):
        self.payload = payload
        self.start = offset
        self.pos = 0
        self.path = path
        self.error = error

    def take(self, count, dtype, what):
        size = count * dtype.itemsize
        if self.pos + size > len(self.payload):
            raise self.error(
                'Truncated payload: {} needs {} bytes, {} remain'
                .format(what, size, len(self.payload) - self.pos),
                self.start + len(self.payload), self.path)

        out = np.frombuffer(self.payload, dtype=dtype, count=count,
                            offset=self.pos).astype(dtype.newbyteorder('='))
        self.pos += size
        return out

    def finish(self):
        if self.pos != len(self.payload):
            raise self.error('{} unexpected trailing bytes'
                             .format(len(self.payload) - self.pos),
                             self.start + self.pos, self.path)


def _check_count(header, key, path, error, minimum=0):
    v = header[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise error('Header "{}" must be an integer >= {}'
                    .format(key, minimum), 0, path)
    return v


########################################################################
# Activation dumps
########################################################################
def write_activation_dump(path, acts):
    """Write an ActivationSet. Labels, when present, must be integers."""
    labels = acts.labels
    if labels is not None:
        labels = np.asarray(labels)
        if labels.dtype.kind not in 'iub':
            raise TypeError('Dumped labels must be integer class indices.')

    header = {'format': ACTIVATIONS_MAGIC, 'n': acts.n, 'd': acts.dim,
              'dtype': 'f64le', 'layer': int(acts.layer_index),
              'epoch': int(acts.epoch), 'has_labels': labels is not None,
              'noisy': bool(acts.noisy)}
    arrays = [(acts.values, F64)]
    if labels is not None:
        arrays.append((labels, I32))

    _write_binary(path, header, arrays)
    LOG.debug('Wrote {}x{} activations to {}.'.format(acts.n, acts.dim,
                                                        path))


def read_activation_dump(path):
    """Read an activation dump into an ActivationSet.

    :raises ParseError: for a bad header, a truncated payload or
        trailing bytes, with the byte offset of the problem.
    """
    required = ('n', 'd', 'dtype', 'layer', 'epoch', 'has_labels', 'noisy')
    header, payload, offset = _read_header(path, ACTIVATIONS_MAGIC, required)

    if header['dtype'] != 'f64le':
        raise ParseError('Unsupported dtype {}'.format(header['dtype']), 0,
                         path)

    n = _check_count(header, 'n', path, ParseError)
    d = _check_count(header, 'd', path, ParseError, minimum=1)

    reader = _PayloadReader(payload, offset, path, ParseError)
    values = reader.take(n * d, F64, 'values').reshape(n, d)
    labels = None
    if header['has_labels']:
        labels = reader.take(n, I32, 'labels')
    reader.finish()

    return noisy_net.ActivationSet(values=values, labels=labels,
                                   layer_index=header['layer'],
                                   epoch=header['epoch'],
                                   noisy=bool(header['noisy']))


########################################################################
# Datasets
########################################################################
def write_dataset(path, data):
    header = {'format': DATASET_MAGIC, 'm': data.m, 'd0': data.d0,
              'labels': data.label_kind, 'name': data.name}
    label_dtype = I32 if data.label_kind == 'class' else F64
    _write_binary(path, header, [(data.inputs, F64),
                                 (data.labels, label_dtype)])


def read_dataset(path):
    """Read a dataset file into a LabeledDataset.

    :raises DatasetParseError: for malformed files.
    """
    header, payload, offset = _read_header(path, DATASET_MAGIC,
                                           ('m', 'd0', 'labels'),
                                           error=DatasetParseError)
    m = _check_count(header, 'm', path, DatasetParseError, minimum=1)
    d0 = _check_count(header, 'd0', path, DatasetParseError, minimum=1)

    if header['labels'] not in ('class', 'scalar'):
        raise DatasetParseError('labels must be "class" or "scalar"', 0,
                                path)

    reader = _PayloadReader(payload, offset, path, DatasetParseError)
    inputs = reader.take(m * d0, F64, 'inputs').reshape(m, d0)
    labels = reader.take(m, I32 if header['labels'] == 'class' else F64,
                         'labels')
    reader.finish()

    return noisy_net.LabeledDataset(
        inputs=inputs, labels=labels,
        name=header.get('name', os.path.basename(path)))


########################################################################
# Checkpoints
########################################################################
def checkpoint_path(directory, epoch):
    return os.path.join(directory, 'checkpoint_{:06d}.bin'.format(epoch))


def write_checkpoint(path, net, epoch):
    header = {'format': CHECKPOINT_MAGIC, 'epoch': int(epoch),
              'dims': net.dims,
              'activations': [lay.activation for lay in net.layers],
              'slopes': [lay.slope for lay in net.layers],
              'betas': net.betas}
    arrays = []
    for layer in net.layers:
        arrays.append((layer.weights, F64))
        arrays.append((layer.bias, F64))

    _write_binary(path, header, arrays)


def read_checkpoint(path):
    """Read a checkpoint.

    :returns: (NoisyNet, epoch)
    """
    header, payload, offset = _read_header(
        path, CHECKPOINT_MAGIC,
        ('epoch', 'dims', 'activations', 'slopes', 'betas'))
    dims = header['dims']
    depth = len(dims) - 1
    if depth < 1 or any(len(header[k]) != depth
                        for k in ('activations', 'slopes', 'betas')):
        raise ParseError('dims, activations, slopes and betas disagree', 0,
                         path)

    reader = _PayloadReader(payload, offset, path, ParseError)
    layers = []
    for k in range(depth):
        w = reader.take(dims[k + 1] * dims[k], F64, 'weights of layer {}'
                        .format(k + 1)).reshape(dims[k + 1], dims[k])
        b = reader.take(dims[k + 1], F64, 'bias of layer {}'.format(k + 1))
        layers.append(noisy_net.Layer(w, b, header['activations'][k],
                                      beta=header['betas'][k],
                                      slope=header['slopes'][k]))
    reader.finish()

    return noisy_net.NoisyNet(layers), header['epoch']


########################################################################
# CSV tables
########################################################################
def write_table(path, df):
    """Write a DataFrame as CSV with the package's number format."""
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='',
              lineterminator='\n')


def write_results_csv(path, rows):
    """Write per-(epoch, layer) results.

    :param path: output file.
    :param rows: iterable of dicts keyed by RESULT_COLUMNS. Missing
        values are written as empty fields; rows are sorted by
        (epoch, layer).
    """
    df = pd.DataFrame(list(rows), columns=RESULT_COLUMNS)
    if not df.empty:
        df['epoch'] = df['epoch'].astype(np.int64)
        df['layer'] = df['layer'].astype(np.int64)
        df = df.sort_values(['epoch', 'layer'], kind='mergesort')
        for col in RESULT_COLUMNS[2:]:
            df[col] = df[col].astype(np.float64)

    write_table(path, df)
    LOG.info('Wrote {} result rows to {}.'.format(len(df), path))


def write_json(path, obj):
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write('\n')


########################################################################
# Experiment configurations
########################################################################
NETWORK_KINDS = ('spiral', 'szt', 'mlp', 'identity', 'toy_tanh',
                 'toy_leaky_relu')
DATASET_SOURCES = ('spiral', 'szt_synthetic', 'file', 'points', 'toy_tanh',
                   'toy_leaky_relu')

_NUM = (int, float)
_OPT_NUM = (int, float, type(None))
_OPT_INT = (int, type(None))

# section -> key -> (allowed types, allowed values or None)
SCHEMA = {
    'network': {
        'kind': (str, NETWORK_KINDS),
        'dims': ((list, type(None)), None),
        'activation': (str, noisy_net.ACTIVATIONS),
        'beta': (_NUM, None),
        'seed': (int, None),
    },
    'dataset': {
        'source': (str, DATASET_SOURCES),
        'path': ((str, type(None)), None),
        'inputs': ((list, type(None)), None),
        'labels': ((list, type(None)), None),
        'n_per_class': (int, None),
        'noise_std': (_NUM, None),
        'turns': (_NUM, None),
        'test_fraction': (_NUM, None),
        'seed': (int, None),
    },
    'train': {
        'loss': (str, noisy_net.LOSSES),
        'learning_rate': (_NUM, None),
        'epochs': (int, None),
        'batch_size': (_OPT_INT, None),
        'ortho_alpha': (_NUM, None),
        'noise_during_training': (bool, None),
        'seed': (int, None),
        'lr_final': (_OPT_NUM, None),
    },
    'estimator': {
        'layers': ((list, type(None)), None),
        'n': (_OPT_INT, None),
        'n_x': (_OPT_INT, None),
        'n_mc': (int, None),
        'seed': (int, None),
        'beta_override': (_OPT_NUM, None),
        'per_unit': (bool, None),
        'histograms': (bool, None),
        'target_tol': (_NUM, None),
    },
    'binning': {
        'bin_size': (_NUM, None),
        'lo': ((int, float, list, type(None)), None),
        'hi': ((int, float, list, type(None)), None),
        'clamp_out_of_range': (bool, None),
        'overflow': (bool, None),
    },
    'histograms': {
        'n_bins': (int, None),
        'max_distance': (_OPT_NUM, None),
        'pair_cap': (int, None),
        'seed': (int, None),
    },
}
TOP_LEVEL = {
    'checkpoint_epochs': (list, None),
    'output_dir': (str, None),
    'threads': (int, None),
}


def _type_ok(value, types):
    # bool is an int subclass; only accept it where bool is asked for.
    if isinstance(value, bool) and bool not in (
            types if isinstance(types, tuple) else (types,)):
        return False
    return isinstance(value, types)


def _merge(base, update, problems, prefix=''):
    for key, value in update.items():
        name = prefix + key
        if key not in base:
            problems.append('Unknown key "{}".'.format(name))
        elif isinstance(base[key], dict):
            if isinstance(value, dict):
                _merge(base[key], value, problems, name + '.')
            else:
                problems.append('"{}" must be an object.'.format(name))
        else:
            base[key] = value


def _validate(cfg):
    problems = []
    # Names with a bad type. Their value checks are skipped.
    bad = set()

    def check(name, value, types, allowed):
        if not _type_ok(value, types):
            bad.add(name)
            problems.append('"{}" has invalid type {}.'
                            .format(name, type(value).__name__))
        elif allowed is not None and value not in allowed:
            bad.add(name)
            problems.append('"{}" must be one of {}, got "{}".'
                            .format(name, utils.list_to_string(
                                list(allowed), 'or'), value))

    def typed(*names):
        return bad.isdisjoint(names)

    for section, keys in SCHEMA.items():
        for key, (types, allowed) in keys.items():
            check(section + '.' + key, cfg[section][key], types, allowed)

    for key, (types, allowed) in TOP_LEVEL.items():
        check(key, cfg[key], types, allowed)

    # Value checks, reported together with the type problems.
    net, data, train = cfg['network'], cfg['dataset'], cfg['train']
    est, hist = cfg['estimator'], cfg['histograms']
    if typed('network.beta') and net['beta'] < 0:
        problems.append('"network.beta" must be >= 0.')
    if (typed('network.kind', 'network.dims') and net['kind'] == 'mlp'
            and (not net['dims'] or len(net['dims']) < 2)):
        problems.append('"network.dims" needs at least two entries for an '
                        'mlp network.')
    if (typed('dataset.source', 'dataset.path') and data['source'] == 'file'
            and not data['path']):
        problems.append('"dataset.path" is required for a file dataset.')
    if (typed('dataset.source') and data['source'] == 'points'
            and (data['inputs'] is None or data['labels'] is None)):
        problems.append('"dataset.inputs" and "dataset.labels" are required '
                        'for a points dataset.')
    if (typed('dataset.test_fraction')
            and not 0 <= data['test_fraction'] < 1):
        problems.append('"dataset.test_fraction" must be in [0, 1).')
    for key in ('learning_rate', 'epochs', 'ortho_alpha'):
        if typed('train.' + key) and train[key] < 0:
            problems.append('"train.{}" must be >= 0.'.format(key))
    for key in ('n', 'n_x'):
        if (typed('estimator.' + key) and est[key] is not None
                and est[key] < 1):
            problems.append('"estimator.{}" must be >= 1.'.format(key))
    if typed('estimator.n_mc') and est['n_mc'] < 1:
        problems.append('"estimator.n_mc" must be >= 1.')
    if typed('estimator.target_tol') and est['target_tol'] < 0:
        problems.append('"estimator.target_tol" must be >= 0.')
    if (typed('estimator.beta_override') and est['beta_override'] is not None
            and est['beta_override'] <= 0):
        problems.append('"estimator.beta_override" must be > 0.')
    if typed('binning.bin_size') and cfg['binning']['bin_size'] <= 0:
        problems.append('"binning.bin_size" must be > 0.')
    if (typed('histograms.n_bins', 'histograms.pair_cap')
            and (hist['n_bins'] < 1 or hist['pair_cap'] < 1)):
        problems.append('"histograms.n_bins" and "histograms.pair_cap" must '
                        'be >= 1.')
    if typed('checkpoint_epochs'):
        epochs = cfg['checkpoint_epochs']
        if not all(isinstance(e, int) and not isinstance(e, bool) and e >= 0
                   for e in epochs):
            problems.append('"checkpoint_epochs" must be non-negative '
                            'integers.')
        elif typed('train.epochs') and any(e > train['epochs']
                                           for e in epochs):
            problems.append('"checkpoint_epochs" may not exceed train.epochs '
                            '({}).'.format(train['epochs']))
    if typed('threads') and cfg['threads'] < 1:
        problems.append('"threads" must be >= 1.')

    return problems


@dataclass
class ExperimentConfig:
    """A validated experiment configuration."""
    network: dict
    dataset: dict
    train: dict
    estimator: dict
    binning: dict
    histograms: dict
    checkpoint_epochs: list = field(default_factory=list)
    output_dir: str = 'pyspmi_out'
    threads: int = 1

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        return utils.config_hash(self.to_dict())

    def train_config(self):
        return noisy_net.TrainConfig(**self.train)

    def binning_spec(self, activation=None):
        """Binning for a layer. An unset lo or hi follows the layer's
        activation."""
        spec = BinningSpec(**self.binning)
        return spec if activation is None else spec.for_activation(activation)


def default_experiment():
    """A deep copy of the experiment defaults."""
    return copy.deepcopy(CONFIG['experiment'])


def build_experiment_config(mapping=None, overrides=None):
    """Merge mappings over the defaults and validate.

    :param mapping: dict as read from a config file.
    :param overrides: dict of dotted keys (e.g. "train.epochs") to
        values, applied last.

    :raises ConfigError: listing every problem.
    """
    cfg = default_experiment()
    problems = []
    if mapping is not None:
        if not isinstance(mapping, dict):
            raise ConfigError(['The configuration must be a JSON object.'])
        _merge(cfg, mapping, problems)

    for dotted, value in (overrides or {}).items():
        nested = value
        for part in reversed(dotted.split('.')):
            nested = {part: nested}
        _merge(cfg, nested, problems)

    # Default checkpoints follow a shortened training run.
    explicit = ('checkpoint_epochs' in (mapping or {})
                or 'checkpoint_epochs' in (overrides or {}))
    epochs = cfg['train']['epochs']
    if not explicit and _type_ok(epochs, int):
        cfg['checkpoint_epochs'] = sorted(
            {e for e in cfg['checkpoint_epochs'] if e <= epochs} | {epochs})

    problems.extend(_validate(cfg))

    if problems:
        raise ConfigError(problems)

    return ExperimentConfig(**cfg)


def load_experiment_config(path=None, overrides=None):
    """Read an experiment configuration file (JSON) and validate it.

    :raises ConfigError: for invalid JSON or an invalid configuration.
    """
    mapping = None
    if path is not None:
        with open(path, 'r') as f:
            try:
                mapping = json.load(f)
            except ValueError as e:
                raise ConfigError(['{} is not valid JSON: {}'
                                   .format(path, e)]) from None

    return build_experiment_config(mapping, overrides)
