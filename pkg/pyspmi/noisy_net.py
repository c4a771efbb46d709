"""Noisy feedforward networks.

Every layer of a noisy network computes

    S_l = f_l(T_{l-1}) = act(W_l T_{l-1} + b_l),    T_l = S_l + Z_l,

with Z_l ~ N(0, beta_l^2 I) and T_0 = X. The input is never noised. This
module holds the network type, the forward pass, a plain gradient descent
trainer (backprop through the noise, which only shifts activations), the
Parseval orthonormalization step, the samplers the estimator needs and
the dataset generators.

Conventions:
    - Mean squared loss is mean over samples of sum_k (T_L - y)^2,
      without a 1/2 factor.
    - Cross entropy uses a softmax over the output layer, in nats.
    - Layers are numbered 1..L, as in the estimator.
"""
import logging
import copy as copy_module
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit, log_softmax, softmax

from pyspmi import utils

LOG = logging.getLogger(__name__)

CONFIG = utils.read_config()

ACTIVATIONS = ('tanh', 'relu', 'leaky_relu', 'sigmoid', 'linear')
LOSSES = ('cross_entropy', 'mean_squared')
MODES = ('noisy', 'deterministic')

# Default negative slope of leaky_relu, i.e. max(x, x/10).
LEAKY_SLOPE = 0.1


class Error(Exception):
    """Base class for exceptions in this module."""
    pass


class NetworkError(Error):
    """Raised for networks or layers that violate their invariants."""
    pass


class DimensionError(Error):
    """Raised when inputs or labels do not fit the network."""
    pass


class DivergenceError(Error):
    """Raised when training produces a non-finite loss."""
    pass


class ConditionalLayerError(Error):
    """Raised when conditional samples of layer 1 are requested. Given
    X = x, T_1 is exactly N(f_1(x), beta^2 I), so there is nothing to
    sample."""
    pass


########################################################################
# Activations
########################################################################
def _activate(name, a, slope):
    if name == 'tanh':
        return np.tanh(a)
    elif name == 'relu':
        return np.maximum(a, 0.0)
    elif name == 'leaky_relu':
        return np.where(a > 0, a, slope * a)
    elif name == 'sigmoid':
        return expit(a)
    elif name == 'linear':
        return a.copy()

    raise NetworkError('Unknown activation {}.'.format(name))


def _activate_grad(name, a, s, slope):
    """Derivative of the activation, given pre-activation a and output
    s."""
    if name == 'tanh':
        return 1.0 - s ** 2
    elif name == 'relu':
        return (a > 0).astype(np.float64)
    elif name == 'leaky_relu':
        return np.where(a > 0, 1.0, slope)
    elif name == 'sigmoid':
        return s * (1.0 - s)
    elif name == 'linear':
        return np.ones_like(a)

    raise NetworkError('Unknown activation {}.'.format(name))


########################################################################
# Types
########################################################################
class Layer:
    """One noisy layer: S = act(T_prev W^T + b), T = S + Z."""

    def __init__(self, weights, bias, activation='tanh', beta=0.0,
                 slope=LEAKY_SLOPE):
        """
        :param weights: array, shape (d_out, d_in).
        :param bias: array, shape (d_out,).
        :param activation: one of ACTIVATIONS.
        :param beta: noise standard deviation, >= 0.
        :param slope: negative slope, only used by leaky_relu.
        """
        weights = np.array(weights, dtype=np.float64, ndmin=2)
        bias = np.array(bias, dtype=np.float64).reshape(-1)

        if weights.ndim != 2:
            raise NetworkError('weights must be a matrix.')

        if bias.shape != (weights.shape[0],):
            raise NetworkError('bias has shape {}, expected ({},).'
                               .format(bias.shape, weights.shape[0]))

        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise NetworkError('Layer parameters must be finite.')

        if activation not in ACTIVATIONS:
            raise NetworkError('activation must be one of {}, got {}.'
                               .format(ACTIVATIONS, activation))

        beta = float(beta)
        if not (np.isfinite(beta) and beta >= 0):
            raise NetworkError('beta must be finite and >= 0.')

        self.weights = weights
        self.bias = bias
        self.activation = activation
        self.beta = beta
        self.slope = float(slope)

    def __repr__(self):
        return 'Layer({}->{}, {}, beta={:.4g})'.format(
            self.d_in, self.d_out, self.activation, self.beta)

    @property
    def d_in(self):
        return self.weights.shape[1]

    @property
    def d_out(self):
        return self.weights.shape[0]

    def pre_activation(self, t_prev):
        return t_prev @ self.weights.T + self.bias

    def apply(self, t_prev):
        """f_l(T_{l-1}), the noiseless part of the layer."""
        return _activate(self.activation, self.pre_activation(t_prev),
                         self.slope)


class NoisyNet:
    """An ordered stack of noisy layers."""

    def __init__(self, layers):
        """
        :param layers: non-empty list of Layer objects with compatible
            dimensions.
        """
        layers = list(layers)
        if len(layers) == 0:
            raise NetworkError('A network needs at least one layer.')

        for k in range(1, len(layers)):
            if layers[k].d_in != layers[k - 1].d_out:
                raise NetworkError(
                    'Layer {} expects {} inputs but layer {} has {} '
                    'outputs.'.format(k + 1, layers[k].d_in, k,
                                      layers[k - 1].d_out))

        self.layers = layers
        self.log = logging.getLogger(self.__class__.__name__)

    def __repr__(self):
        return 'NoisyNet(dims={}, betas={})'.format(self.dims, self.betas)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def input_dim(self):
        return self.layers[0].d_in

    @property
    def dims(self):
        """[d_0, d_1, ..., d_L]"""
        return [self.input_dim] + [layer.d_out for layer in self.layers]

    @property
    def betas(self):
        return [layer.beta for layer in self.layers]

    def layer(self, index):
        """Layer by its 1-based index."""
        self._check_layer_index(index)
        return self.layers[index - 1]

    def _check_layer_index(self, index):
        if not isinstance(index, (int, np.integer)) or isinstance(index, bool):
            raise TypeError('Layer index must be an integer.')

        if index < 1 or index > self.depth:
            raise ValueError('Layer index must be in 1..{}, got {}.'
                             .format(self.depth, index))

    def copy(self):
        """Deep copy. Checkpoints are copies, so later training never
        changes them."""
        return NoisyNet([copy_module.deepcopy(layer) for layer in self.layers])

    def with_betas(self, betas):
        """Copy of the network with new per-layer noise levels."""
        betas = list(betas)
        if len(betas) != self.depth:
            raise ValueError('Expected {} betas, got {}.'
                             .format(self.depth, len(betas)))

        net = self.copy()
        for layer, beta in zip(net.layers, betas):
            if beta < 0:
                raise NetworkError('beta must be >= 0.')
            layer.beta = float(beta)

        return net

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim <= 1:
            x = x.reshape(1, -1)

        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError('Inputs must have dimension {}, got shape {}.'
                                 .format(self.input_dim, x.shape))

        return x

    def _forward_cache(self, x, noise, up_to=None):
        """Forward pass keeping what backprop needs.

        :param x: inputs, shape (m, d_0).
        :param noise: list with one (m, d_l) array (or None for no noise)
            per layer.
        :param up_to: last layer to evaluate (1-based). None means all.

        :returns: (pre, s, t) lists of per-layer arrays, with t[0] = x.
        """
        up_to = self.depth if up_to is None else up_to
        pre, s, t = [], [], [x]
        for k in range(up_to):
            layer = self.layers[k]
            a = layer.pre_activation(t[-1])
            s_k = _activate(layer.activation, a, layer.slope)
            z = noise[k]
            pre.append(a)
            s.append(s_k)
            t.append(s_k if z is None else s_k + z)

        return pre, s, t

    def draw_noise(self, m, rng, up_to=None):
        """Noise for m samples: one array per layer, None where beta is
        zero."""
        up_to = self.depth if up_to is None else up_to
        noise = []
        for layer in self.layers[:up_to]:
            if layer.beta > 0:
                noise.append(rng.standard_normal((m, layer.d_out))
                             * layer.beta)
            else:
                noise.append(None)

        return noise

    def forward(self, x, noisy=False, rng=None, noise=None, up_to=None):
        """Propagate inputs.

        :param x: a single input (d_0,) or a batch (m, d_0).
        :param noisy: add fresh noise drawn from rng.
        :param rng: numpy Generator, required when noisy is True and
            noise is None.
        :param noise: optional frozen noise, one array (or None) per
            layer. Takes precedence over noisy.
        :param up_to: last layer to evaluate (1-based).

        :returns: list of (S_l, T_l) pairs for l = 1..up_to.
        """
        x = self._as_batch(x)
        up_to = self.depth if up_to is None else up_to
        self._check_layer_index(up_to)

        if noise is None:
            if noisy:
                if rng is None:
                    raise ValueError('A random number generator is needed '
                                     'for a noisy forward pass.')
                noise = self.draw_noise(x.shape[0], rng, up_to=up_to)
            else:
                noise = [None] * up_to

        _, s, t = self._forward_cache(x, noise, up_to=up_to)
        return list(zip(s, t[1:]))


@dataclass
class LabeledDataset:
    """m inputs with class indices or scalar targets."""
    inputs: np.ndarray
    labels: np.ndarray
    name: str = 'dataset'

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1)

        labels = np.asarray(self.labels)
        if labels.dtype.kind in 'iub':
            labels = labels.astype(np.int32)
        else:
            labels = labels.astype(np.float64)

        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise DimensionError('inputs must have shape (m, d0) with m >= 1.')

        if labels.shape[0] != inputs.shape[0]:
            raise DimensionError('Got {} labels for {} inputs.'
                                 .format(labels.shape[0], inputs.shape[0]))

        if np.any(np.isnan(inputs)) or (labels.dtype.kind == 'f'
                                        and np.any(np.isnan(labels))):
            raise ValueError('Datasets may not contain NaN.')

        self.inputs = inputs
        self.labels = labels

    @property
    def m(self):
        return self.inputs.shape[0]

    @property
    def d0(self):
        return self.inputs.shape[1]

    @property
    def label_kind(self):
        return 'class' if self.labels.dtype.kind == 'i' else 'scalar'


@dataclass
class ActivationSet:
    """n samples of one layer's output."""
    values: np.ndarray
    labels: np.ndarray = None
    layer_index: int = 0
    epoch: int = 0
    noisy: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)

        if values.ndim != 2:
            raise DimensionError('values must be a matrix.')

        if not np.all(np.isfinite(values)):
            raise ValueError('Activation values must be finite.')

        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (values.shape[0],):
                raise DimensionError('Got {} labels for {} rows.'
                                     .format(labels.shape[0],
                                             values.shape[0]))
            self.labels = labels

        self.values = values

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass
class TrainConfig:
    """Settings for train().

    learning_rate may be 0 (parameters then never change); negative
    rates are rejected. batch_size None means full batch. lr_final, when
    given, decays the learning rate geometrically to that value at the
    last epoch.
    """
    loss: str = 'mean_squared'
    learning_rate: float = 0.01
    epochs: int = 1
    batch_size: int = None
    ortho_alpha: float = 0.0
    noise_during_training: bool = True
    seed: int = 0
    lr_final: float = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError('loss must be one of {}.'.format(LOSSES))

        if self.learning_rate < 0:
            raise ValueError('learning_rate must be >= 0.')

        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 0:
            raise ValueError('epochs must be a non-negative integer.')

        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError('batch_size must be positive or None.')

        if self.ortho_alpha < 0:
            raise ValueError('ortho_alpha must be >= 0.')

        if self.lr_final is not None and (self.lr_final <= 0
                                          or self.learning_rate <= 0):
            raise ValueError('lr_final needs positive learning rates.')


@dataclass
class TrainResult:
    """Loss trace (one row per epoch) and the checkpointed networks,
    keyed by epoch."""
    losses: pd.DataFrame
    checkpoints: dict = field(default_factory=dict)


########################################################################
# Forward sampling
########################################################################
def forward(net, x, mode='deterministic', seed=0):
    """Module-level forward pass.

    :param net: NoisyNet.
    :param x: input (d_0,) or batch (m, d_0).
    :param mode: 'noisy' or 'deterministic'.
    :param seed: seed for the noise in 'noisy' mode.

    :returns: list of (S_l, T_l) for l = 1..L.
    """
    if mode not in MODES:
        raise ValueError('mode must be one of {}.'.format(MODES))

    if mode == 'noisy':
        return net.forward(x, noisy=True, rng=utils.substream(seed))

    return net.forward(x)


def collect_activations(net, data, layer, mode='noisy', seed=0, epoch=0,
                        add_noise=False):
    """Push every input of data through the network and return the
    samples of S_l = f_l(T_{l-1}).

    :param net: NoisyNet.
    :param data: LabeledDataset.
    :param layer: 1-based layer index.
    :param mode: 'noisy' draws upstream noise, 'deterministic' does not.
    :param seed: seed for the upstream noise.
    :param epoch: recorded on the result.
    :param add_noise: return T_l = S_l + Z_l instead of S_l (noisy mode
        only).

    :returns: ActivationSet.
    """
    if mode not in MODES:
        raise ValueError('mode must be one of {}.'.format(MODES))

    noisy = mode == 'noisy'
    out = net.forward(data.inputs, noisy=noisy,
                      rng=utils.substream(seed) if noisy else None,
                      up_to=layer)
    s, t = out[-1]
    use_t = add_noise and noisy
    return ActivationSet(values=t if use_t else s, labels=data.labels,
                         layer_index=layer, epoch=epoch, noisy=use_t)


def conditional_activations(net, x, layer, n_x, seed=0):
    """n_x draws of S_l given X = x, each from an independent noise
    realization of layers 1..l-1.

    :raises ConditionalLayerError: for layer 1.
    """
    net._check_layer_index(layer)
    if layer == 1:
        raise ConditionalLayerError(
            'Layer 1 has no upstream noise; h(T_1 | X) is the Gaussian '
            'entropy (d_1/2) log(2 pi e beta^2).')

    if not isinstance(n_x, (int, np.integer)) or n_x < 1:
        raise ValueError('n_x must be a positive integer.')

    x = net._as_batch(x)
    if x.shape[0] != 1:
        raise DimensionError('conditional_activations takes a single input.')

    batch = np.repeat(x, n_x, axis=0)
    out = net.forward(batch, noisy=True, rng=utils.substream(seed),
                      up_to=layer)
    return ActivationSet(values=out[-1][0], labels=None, layer_index=layer,
                         noisy=False)


########################################################################
# Training
########################################################################
def _targets(net, data, loss):
    d_out = net.layers[-1].d_out
    if loss == 'cross_entropy':
        if data.label_kind != 'class':
            raise DimensionError('cross_entropy needs class labels.')

        if d_out < 2 or data.labels.min() < 0 or data.labels.max() >= d_out:
            raise DimensionError('Class labels must index the {} outputs.'
                                 .format(d_out))

        return data.labels.astype(np.int64)

    y = np.asarray(data.labels, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(-1, 1)

    if y.shape[1] != d_out:
        raise DimensionError('Targets have dimension {}, the output layer '
                             'has {}.'.format(y.shape[1], d_out))
    return y


def _loss_value(out, y, loss):
    if loss == 'mean_squared':
        return float(np.mean(np.sum((out - y) ** 2, axis=1)))

    logp = log_softmax(out, axis=1)
    return float(-np.mean(logp[np.arange(out.shape[0]), y]))


def loss_and_gradients(net, x, y, loss, noise=None):
    """Loss and its gradients for a batch.

    Noise enters additively, so dT_l/dS_l = I and gradients pass through
    it unchanged.

    :param net: NoisyNet.
    :param x: inputs, shape (m, d_0).
    :param y: targets as returned for the loss (float matrix for
        mean_squared, int vector for cross_entropy).
    :param loss: 'mean_squared' or 'cross_entropy'.
    :param noise: frozen noise (one array or None per layer). None means
        no noise.

    :returns: (loss value, list of (dW, db) per layer).
    """
    if noise is None:
        noise = [None] * net.depth

    m = x.shape[0]
    pre, s, t = net._forward_cache(x, noise)
    out = t[-1]

    if loss == 'mean_squared':
        value = float(np.mean(np.sum((out - y) ** 2, axis=1)))
        grad_t = 2.0 * (out - y) / m
    else:
        logp = log_softmax(out, axis=1)
        value = float(-np.mean(logp[np.arange(m), y]))
        grad_t = softmax(out, axis=1)
        grad_t[np.arange(m), y] -= 1.0
        grad_t /= m

    grads = [None] * net.depth
    for k in range(net.depth - 1, -1, -1):
        layer = net.layers[k]
        grad_a = grad_t * _activate_grad(layer.activation, pre[k], s[k],
                                         layer.slope)
        grads[k] = (grad_a.T @ t[k], grad_a.sum(axis=0))
        grad_t = grad_a @ layer.weights

    return value, grads


def evaluate_loss(net, data, loss):
    """Loss of the network on data with the noise turned off."""
    y = _targets(net, data, loss)
    return _loss_value(net.forward(data.inputs)[-1][1], y, loss)


def orthonormal_step(w, alpha):
    """Parseval step W - alpha (W W^T - I) W, pulling the rows of W
    toward an orthonormal set."""
    if alpha < 0:
        raise ValueError('alpha must be >= 0.')

    w = np.asarray(w, dtype=np.float64)
    gram = w @ w.T - np.eye(w.shape[0])
    return w - alpha * (gram @ w)


def _learning_rate(cfg, epoch):
    if cfg.lr_final is None or cfg.epochs <= 1:
        return cfg.learning_rate

    frac = (epoch - 1) / (cfg.epochs - 1)
    return cfg.learning_rate * (cfg.lr_final / cfg.learning_rate) ** frac


def train(net, data, cfg, checkpoint_epochs=None, test_data=None):
    """Train a network in place with (minibatch) gradient descent.

    Each step draws fresh noise when cfg.noise_during_training is set,
    computes the backprop gradients, updates every W_l and b_l and then,
    when cfg.ortho_alpha > 0, applies orthonormal_step to every weight
    matrix.

    :param net: NoisyNet, modified in place.
    :param data: LabeledDataset used for training.
    :param cfg: TrainConfig.
    :param checkpoint_epochs: epochs (0 is the initial state) at which a
        copy of the network is stored.
    :param test_data: optional LabeledDataset; its loss is recorded each
        epoch.

    :returns: TrainResult. The losses frame has columns epoch,
        train_loss and test_loss. train_loss is the mean of the batch
        losses seen during the epoch.

    :raises DivergenceError: if a loss or parameter becomes non-finite.
    """
    y = _targets(net, data, cfg.loss)
    schedule = set() if checkpoint_epochs is None else set(checkpoint_epochs)
    checkpoints = {}
    if 0 in schedule:
        checkpoints[0] = net.copy()

    m = data.m
    batch = m if cfg.batch_size is None else min(cfg.batch_size, m)
    rng = utils.substream(cfg.seed, 0)
    rows = []

    LOG.info('Training {} on {} ({} samples) for {} epochs.'
             .format(net, data.name, m, cfg.epochs))

    for epoch in range(1, cfg.epochs + 1):
        lr = _learning_rate(cfg, epoch)
        order = np.arange(m) if batch == m else rng.permutation(m)
        batch_losses = []

        for start in range(0, m, batch):
            idx = order[start:start + batch]
            noise = None
            if cfg.noise_during_training:
                noise = net.draw_noise(idx.size, rng)

            value, grads = loss_and_gradients(net, data.inputs[idx], y[idx],
                                              cfg.loss, noise=noise)
            if not np.isfinite(value):
                raise DivergenceError(
                    'Loss became {} at epoch {} (learning rate {:.4g}).'
                    .format(value, epoch, lr))

            batch_losses.append(value)

            for layer, (d_w, d_b) in zip(net.layers, grads):
                layer.weights = layer.weights - lr * d_w
                layer.bias = layer.bias - lr * d_b
                if cfg.ortho_alpha > 0:
                    layer.weights = orthonormal_step(layer.weights,
                                                     cfg.ortho_alpha)

        for k, layer in enumerate(net.layers):
            if not (np.all(np.isfinite(layer.weights))
                    and np.all(np.isfinite(layer.bias))):
                raise DivergenceError('Parameters of layer {} became '
                                      'non-finite at epoch {}.'
                                      .format(k + 1, epoch))

        test_loss = np.nan
        if test_data is not None:
            test_loss = evaluate_loss(net, test_data, cfg.loss)

        rows.append({'epoch': epoch,
                     'train_loss': float(np.mean(batch_losses)),
                     'test_loss': test_loss})

        if epoch in schedule:
            checkpoints[epoch] = net.copy()

        LOG.debug('Epoch {}: train loss {:.6g}.'
                  .format(epoch, rows[-1]['train_loss']))

    losses = pd.DataFrame(rows, columns=['epoch', 'train_loss', 'test_loss'])
    LOG.info('Training done.')
    return TrainResult(losses=losses, checkpoints=checkpoints)


def accuracy(net, data):
    """Fraction of inputs whose class is predicted correctly by the
    noiseless network (argmax over outputs, or sign for a single
    output)."""
    out = net.forward(data.inputs)[-1][1]
    if out.shape[1] == 1:
        pred = (out[:, 0] > 0).astype(np.int32)
    else:
        pred = np.argmax(out, axis=1)

    return float(np.mean(pred == data.labels))


########################################################################
# Datasets
########################################################################
def spiral_dataset(n_per_class, noise_std, turns, seed=0, scale=None):
    """Two interleaved Archimedean spiral arms in the plane.

    Arm 0 is r = theta * scale with theta evenly spaced over
    [0, turns * 2 pi]; arm 1 is arm 0 rotated by pi. Both get Gaussian
    jitter with standard deviation noise_std. Labels are 0 and 1.

    :param scale: radius growth per radian. None puts the outer end of
        each arm at radius 1.
    """
    if n_per_class < 1:
        raise ValueError('n_per_class must be >= 1.')

    if noise_std < 0 or turns <= 0:
        raise ValueError('noise_std must be >= 0 and turns > 0.')

    span = turns * 2 * np.pi
    if scale is None:
        scale = 1.0 / span

    theta = np.linspace(0.0, span, n_per_class)
    r = theta * scale
    arm = np.column_stack((r * np.cos(theta), r * np.sin(theta)))
    inputs = np.vstack((arm, -arm))

    if noise_std > 0:
        inputs = inputs + utils.substream(seed).normal(0.0, noise_std,
                                                       inputs.shape)

    labels = np.repeat(np.array([0, 1], dtype=np.int32), n_per_class)
    return LabeledDataset(inputs=inputs, labels=labels,
                          name='spiral(seed={})'.format(seed))


def szt_dataset(seed=0, d0=12):
    """Synthetic stand-in for 12-bit binary inputs.

    Every one of the 2^d0 patterns in {-1, +1}^d0 appears once. Labels
    split the patterns in half by a random quadratic score
    x^T J x + h^T x, with J and h drawn from the seed.
    """
    bits = (np.arange(2 ** d0)[:, None] >> np.arange(d0)[None, :]) & 1
    inputs = 2.0 * bits - 1.0
    rng = utils.substream(seed)
    j = rng.standard_normal((d0, d0))
    j = (j + j.T) / 2
    h = rng.standard_normal(d0)
    score = np.einsum('ij,jk,ik->i', inputs, j, inputs) + inputs @ h
    labels = np.zeros(inputs.shape[0], dtype=np.int32)
    labels[np.argsort(score, kind='stable')[inputs.shape[0] // 2:]] = 1
    return LabeledDataset(inputs=inputs, labels=labels,
                          name='szt-synthetic(seed={})'.format(seed))


def load_dataset(path):
    """Read a dataset file written by io_formats.write_dataset."""
    from pyspmi import io_formats
    return io_formats.read_dataset(path)


########################################################################
# Builders
########################################################################
def build_mlp(dims, activation='tanh', beta=0.0, seed=0, head='linear'):
    """Fully connected network with weights drawn uniformly from
    [-1/sqrt(fan_in), 1/sqrt(fan_in)] and zero biases.

    :param dims: [d_0, d_1, ..., d_L].
    :param activation: activation of the hidden layers.
    :param beta: noise of the hidden layers.
    :param seed: initialization seed.
    :param head: activation of the output layer, which is noiseless.
    """
    if len(dims) < 2:
        raise NetworkError('dims needs at least an input and an output.')

    rng = utils.substream(seed)
    layers = []
    for k in range(1, len(dims)):
        bound = 1.0 / np.sqrt(dims[k - 1])
        w = rng.uniform(-bound, bound, (dims[k], dims[k - 1]))
        last = k == len(dims) - 1
        layers.append(Layer(w, np.zeros(dims[k]),
                            activation=head if last else activation,
                            beta=0.0 if last else beta))

    return NoisyNet(layers)


def szt_net(seed=0, activation='tanh', beta=None):
    """The 12-10-7-5-4-3-2 network with a 2-logit softmax head."""
    if beta is None:
        beta = CONFIG['networks']['szt_beta']

    return build_mlp(CONFIG['networks']['szt_dims'], activation=activation,
                     beta=beta, seed=seed)


def spiral_net(seed=0, activation='tanh', beta=0.0, width=None, depth=None):
    """Narrow deep network for the spiral data: depth hidden layers of
    the given width and a 2-logit head."""
    width = CONFIG['networks']['spiral_width'] if width is None else width
    depth = CONFIG['networks']['spiral_depth'] if depth is None else depth
    return build_mlp([2] + [width] * depth + [2], activation=activation,
                     beta=beta, seed=seed)


def toy_tanh_net(seed=0, beta=None):
    """Single noisy tanh neuron, T = tanh(w x + b) + Z. The
    initialization comes from the configuration; seed is only used when
    it leaves w or b unset."""
    toy = CONFIG['toys']['tanh1']
    rng = utils.substream(seed)
    w = toy['w'] if toy['w'] is not None else rng.uniform(-1, 1)
    b = toy['b'] if toy['b'] is not None else rng.uniform(-1, 1)
    beta = toy['beta'] if beta is None else beta
    return NoisyNet([Layer([[w]], [b], 'tanh', beta=beta)])


def toy_leaky_relu_net(seed=0, beta=None):
    """Two noisy leaky-ReLU neurons in series, R(x) = max(x, x/10)."""
    toy = CONFIG['toys']['leaky_relu2']
    rng = utils.substream(seed)
    params = [toy[k] if toy[k] is not None else rng.uniform(-1, 1)
              for k in ('w1', 'b1', 'w2', 'b2')]
    beta = toy['beta'] if beta is None else beta
    slope = toy['slope']
    return NoisyNet([
        Layer([[params[0]]], [params[1]], 'leaky_relu', beta=beta,
              slope=slope),
        Layer([[params[2]]], [params[3]], 'leaky_relu', beta=beta,
              slope=slope)])


def toy_dataset(which):
    """Training set of a toy network: 'tanh1' or 'leaky_relu2'."""
    toy = CONFIG['toys'][which]
    return LabeledDataset(inputs=np.array(toy['inputs']),
                          labels=np.array(toy['labels'], dtype=np.float64),
                          name=which)


def identity_net(d=1, beta=0.1):
    """Single linear layer with W = I and b = 0, so T = X + Z."""
    return NoisyNet([Layer(np.eye(d), np.zeros(d), 'linear', beta=beta)])
