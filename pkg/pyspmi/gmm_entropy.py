"""
Differential entropy of isotropic Gaussian mixtures.

Everything the sample-propagation estimator computes reduces to the
entropy of a mixture

.. math::

    g(t) = \\sum_{i=1}^{n} c_i \\varphi_\\beta(t - \\mu_i),

    \\varphi_\\beta = \\text{density of } \\mathcal{N}(0, \\beta^2 I_d)

with known centers :math:`\\mu_i`, weights :math:`c_i` and noise scale
:math:`\\beta`. There is no closed form for :math:`h(g)`, so this module
computes it by Monte Carlo integration (mc_entropy): draw from each
component, evaluate :math:`-\\log g` at the draws, and average with the
component weights. The estimate is bracketed by six analytic bounds
(entropy_bounds) and its mean squared error is bounded by mc_mse_bound.

All entropies are in nats.

Numerical conventions:

    - Log-densities always go through log-sum-exp, so centers separated
      by many multiples of beta neither overflow nor underflow.
    - Squared distances use the expansion
      :math:`\\|a\\|^2 - 2 a \\cdot b + \\|b\\|^2`, evaluated in blocks
      and clamped at zero.
    - Draws for component i come from the substream (seed, i), and the
      per-component partial results are summed in index order, so results
      do not depend on the number of worker threads.
"""
# Standard library
import logging
import math
from dataclasses import dataclass, field

# Installed packages
import numpy as np
from scipy.special import logsumexp
from scipy.stats import entropy as discrete_entropy
from sklearn.metrics import pairwise_distances_chunked

# pyspmi
from pyspmi import utils

# Set up a log.
LOG = logging.getLogger(__name__)

CONFIG = utils.read_config()

# Largest number of float64 elements a single (draws x centers) block
# may hold.
BLOCK_ELEMENTS = int(CONFIG['gmm_entropy']['block_elements'])

# A component may only be skipped (cutoff_radius) if the mass it could
# contribute is below this fraction of the nearest component's term.
CUTOFF_CERTIFICATE = float(CONFIG['gmm_entropy']['cutoff_certificate'])

# Tolerance on the weight normalization.
WEIGHT_TOL = 1e-12

# Options for mc_mse_bound.
SUPPORTS = ('bounded_unit_cube', 'second_moment')
MSE_CONSTANTS = ('proof', 'theorem')

LOG_2PI = math.log(2 * math.pi)


class Error(Exception):
    """Base class for exceptions in this module."""
    pass


class MixtureError(Error):
    """Raised when a mixture violates its invariants."""
    pass


class DimensionError(Error):
    """Raised when a point does not live in the mixture's space."""
    pass


class NonFiniteError(Error):
    """Raised when an input contains NaN or infinity."""
    pass


class GaussianMixture:
    """Weighted isotropic Gaussian mixture with a shared noise scale."""

    def __init__(self, centers, beta, weights=None):
        """
        :param centers: array-like, shape (n, d). A 1-D array is read as
            n scalar centers (d = 1).
        :param beta: positive float, per-coordinate noise standard
            deviation.
        :param weights: array-like of n non-negative weights summing to
            1. None means uniform weights.
        """
        centers = np.array(centers, dtype=np.float64)
        if centers.ndim == 1:
            centers = centers.reshape(-1, 1)

        if centers.ndim != 2 or centers.shape[0] < 1 or centers.shape[1] < 1:
            raise MixtureError('centers must have shape (n, d) with n >= 1 '
                               'and d >= 1, got {}.'.format(centers.shape))

        if not np.all(np.isfinite(centers)):
            raise MixtureError('All centers must be finite.')

        try:
            beta = float(beta)
        except (TypeError, ValueError):
            raise MixtureError('beta must be a real number.') from None

        if not (np.isfinite(beta) and beta > 0):
            raise MixtureError('beta must be positive and finite, got {}.'
                               .format(beta))

        n = centers.shape[0]
        if weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.array(weights, dtype=np.float64).reshape(-1)

        if weights.shape != (n,):
            raise MixtureError('Expected {} weights, got {}.'
                               .format(n, weights.shape[0]))

        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise MixtureError('Weights must be finite and non-negative.')

        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise MixtureError('Weights must sum to 1 (within {}), sum is {}.'
                               .format(WEIGHT_TOL, weights.sum()))

        centers.setflags(write=False)
        weights.setflags(write=False)
        self._centers = centers
        self._weights = weights
        self._beta = beta

    @classmethod
    def from_samples(cls, samples, beta):
        """Build the mixture p_hat * phi_beta of an empirical sample set.

        Repeated samples are merged into a single center whose weight is
        its empirical frequency.

        :param samples: array-like, shape (n, d).
        :param beta: noise standard deviation.
        """
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples.reshape(-1, 1)

        if samples.shape[0] < 1:
            raise MixtureError('At least one sample is needed.')

        centers, counts = np.unique(samples, axis=0, return_counts=True)
        return cls(centers=centers, beta=beta,
                   weights=counts / samples.shape[0])

    def __repr__(self):
        return ('gmm_entropy.GaussianMixture, n: {}, d: {}, beta: {:.4g}'
                .format(self.n, self.dim, self.beta))

    @property
    def centers(self):
        return self._centers

    @property
    def weights(self):
        return self._weights

    @property
    def beta(self):
        return self._beta

    @property
    def n(self):
        return self._centers.shape[0]

    @property
    def dim(self):
        return self._centers.shape[1]


@dataclass(frozen=True)
class EntropyEstimate:
    """Monte Carlo entropy estimate of a mixture, in nats, together with
    the analytic bracket."""
    value: float
    std_error: float
    n_mc: int
    lower_bound: float
    upper_bound: float
    seed: int
    lower_bounds: tuple = field(default=(), compare=False)
    upper_bounds: tuple = field(default=(), compare=False)


def gaussian_entropy(d, beta):
    """Entropy of N(0, beta^2 I_d): (d/2) log(2 pi e beta^2)."""
    return 0.5 * d * (LOG_2PI + 1.0 + 2.0 * math.log(beta))


def _log_normalizer(d, beta):
    """log of (2 pi beta^2)^(-d/2)."""
    return -0.5 * d * (LOG_2PI + 2.0 * math.log(beta))


def _log_weights(g):
    with np.errstate(divide='ignore'):
        return np.log(g.weights)


def mixture_log_density(g, t):
    """Evaluate log g(t).

    Computed as LSE_i(log c_i - ||t - mu_i||^2 / (2 beta^2))
    - (d/2) log(2 pi beta^2).

    :param g: GaussianMixture.
    :param t: point in R^d (shape (d,)), or a stack of points with shape
        (k, d).

    :returns: float for a single point, numpy array of shape (k,) for a
        stack.
    """
    t = np.asarray(t, dtype=np.float64)
    single = t.ndim <= 1
    rows = t.reshape(1, -1) if single else t

    if rows.ndim != 2 or rows.shape[1] != g.dim:
        raise DimensionError('Expected point(s) of dimension {}, got shape {}.'
                             .format(g.dim, t.shape))

    if not np.all(np.isfinite(rows)):
        raise NonFiniteError('Points must be finite.')

    log_w = _log_weights(g)
    out = np.empty(rows.shape[0])
    # Direct differences, in blocks of rows.
    step = max(1, BLOCK_ELEMENTS // max(1, g.n * g.dim))
    for s in range(0, rows.shape[0], step):
        diff = rows[s:s + step, None, :] - g.centers[None, :, :]
        sq = np.einsum('ijk,ijk->ij', diff, diff)
        out[s:s + step] = logsumexp(log_w[None, :] - sq / (2 * g.beta ** 2),
                                    axis=1)

    out += _log_normalizer(g.dim, g.beta)

    if single:
        return float(out[0])

    return out


def _component_neg_log_density(g, i, z, log_w, skip=None,
                               control_variate=False):
    """-log g(mu_i + z) for every row of z.

    Uses the differences mu_i - mu_j directly, so a common shift of all
    centers leaves the computation unchanged.

    With control_variate, the term -log phi_beta(z) of the own component
    is replaced by its expectation, the Gaussian entropy. The mean over
    draws is unchanged; the variance only keeps the mixing part.

    :param g: GaussianMixture.
    :param i: index of the component the draws belong to.
    :param z: noise draws, shape (k, d).
    :param log_w: log weights of g.
    :param skip: optional boolean mask of components to leave out.
    :param control_variate: see above.
    """
    diff = g.centers[i] - g.centers
    if skip is not None:
        diff = diff[~skip]
        log_w = log_w[~skip]

    diff_sq = np.einsum('ij,ij->i', diff, diff)
    z_sq = np.einsum('ij,ij->i', z, z)
    two_beta_sq = 2.0 * g.beta ** 2
    if control_variate:
        offset = gaussian_entropy(g.dim, g.beta)
    else:
        offset = -_log_normalizer(g.dim, g.beta)

    out = np.empty(z.shape[0])
    step = max(1, BLOCK_ELEMENTS // max(1, diff.shape[0]))
    for s in range(0, z.shape[0], step):
        zb = z[s:s + step]
        sq = diff_sq[None, :] + 2.0 * (zb @ diff.T)
        if not control_variate:
            sq += z_sq[s:s + step, None]
            np.maximum(sq, 0.0, out=sq)
        out[s:s + step] = offset - logsumexp(log_w[None, :]
                                             - sq / two_beta_sq, axis=1)

    return out


def _cutoff_mask(g, i, z, log_w, cutoff_radius):
    """Components of g that may be skipped for the draws z of component
    i, or None when skipping cannot be certified.

    A component j further than cutoff_radius * beta from mu_i is skipped
    only if, for every draw, the total mass of the skipped components is
    provably below CUTOFF_CERTIFICATE times the term of component i.
    """
    diff = g.centers[i] - g.centers
    dist = np.sqrt(np.einsum('ij,ij->i', diff, diff))
    far = dist > cutoff_radius * g.beta
    if not far.any():
        return None

    z_max = float(np.sqrt(np.einsum('ij,ij->i', z, z)).max())
    gap = np.maximum(dist[far] - z_max, 0.0)
    log_ratio = logsumexp(log_w[far] - (gap ** 2 - z_max ** 2)
                          / (2 * g.beta ** 2)) - log_w[i]

    if log_ratio < math.log(CUTOFF_CERTIFICATE):
        return far

    LOG.debug('Cutoff for component {} not certified (log ratio {:.3g}); '
              'evaluating all components.'.format(i, log_ratio))
    return None


def _bounded_pair(lower, upper):
    """Collapse a bracket that crossed by rounding."""
    lo = max(lower)
    hi = min(upper)
    if lo > hi:
        if lo - hi > 1e-9 * max(1.0, abs(hi)):
            LOG.warning('Entropy bounds crossed by {:.3g} nats: {} > {}.'
                        .format(lo - hi, lo, hi))
        lo = hi
    return lo, hi


def mc_entropy(g, n_mc=None, seed=0, threads=None, cutoff_radius=None,
               control_variate=None):
    """Monte Carlo estimate of h(g).

    h_MC = -sum_i c_i (1/n_mc) sum_j log g(mu_i + Z_j^(i)) with
    Z_j^(i) iid N(0, beta^2 I_d).

    The standard error comes from the per-draw sample variances,
    SE^2 = sum_i c_i^2 var_i / n_mc. With a single draw per component
    the within-component variance is replaced by the weighted spread of
    the per-component values (which over-states it); with a single
    component and a single draw the error is unknown and reported as
    infinity.

    :param g: GaussianMixture.
    :param n_mc: draws per component. None uses the configured default.
    :param seed: non-negative integer seed.
    :param threads: worker threads. The result does not depend on it.
    :param cutoff_radius: optional, in units of beta. Components further
        than this from a component's center are skipped when their
        contribution is certified negligible.
    :param control_variate: replace the Gaussian part of every draw by
        its expectation. Same mean, smaller variance. None uses the
        configured default.

    :returns: EntropyEstimate.
    """
    if n_mc is None:
        n_mc = int(CONFIG['gmm_entropy']['n_mc'])

    if not isinstance(n_mc, (int, np.integer)) or n_mc < 1:
        raise ValueError('n_mc must be a positive integer.')

    if control_variate is None:
        control_variate = bool(CONFIG['gmm_entropy']['control_variate'])

    log_w = _log_weights(g)
    active = np.flatnonzero(g.weights > 0)

    def component(i):
        rng = utils.substream(seed, i)
        z = rng.standard_normal((n_mc, g.dim)) * g.beta
        skip = None
        if cutoff_radius is not None:
            skip = _cutoff_mask(g, i, z, log_w, cutoff_radius)

        vals = _component_neg_log_density(
            g, i, z, log_w, skip=skip, control_variate=control_variate)
        var = vals.var(ddof=1) if n_mc > 1 else np.nan
        return vals.mean(), var

    parts = utils.thread_map(component, active, threads=threads)
    means = np.array([p[0] for p in parts])
    variances = np.array([p[1] for p in parts])
    c = g.weights[active]

    value = float(np.dot(c, means))

    if n_mc > 1:
        std_error = math.sqrt(float(np.dot(c ** 2, variances)) / n_mc)
    elif active.size > 1:
        pooled = float(np.dot(c, (means - value) ** 2))
        std_error = math.sqrt(float(np.sum(c ** 2)) * pooled)
    else:
        std_error = math.inf

    lower, upper = entropy_bounds(g)
    lo, hi = _bounded_pair(lower, upper)

    LOG.debug('mc_entropy: n={}, d={}, n_mc={}, h={:.6f} +/- {:.2g}'
              .format(g.n, g.dim, n_mc, value, std_error))

    return EntropyEstimate(value=value, std_error=std_error, n_mc=int(n_mc),
                           lower_bound=lo, upper_bound=hi, seed=seed,
                           lower_bounds=tuple(lower),
                           upper_bounds=tuple(upper))


def mc_entropy_subsampled(g, n_outer, n_mc=None, seed=0, threads=None,
                          control_variate=None):
    """Monte Carlo estimate of h(g) that samples components instead of
    enumerating them.

    n_outer components are drawn with replacement according to the
    weights, each receives n_mc noise draws, and the estimate is the
    mean of the per-draw-component averages. It is unbiased for the same
    expectation as mc_entropy. Its standard error is the spread of the
    outer averages, which accounts for both sampling levels.

    A mixture with a single component has nothing to subsample and is
    handed to mc_entropy unchanged.

    :param g: GaussianMixture.
    :param n_outer: number of components to draw.
    :param n_mc: draws per drawn component.
    :param seed: non-negative integer seed.
    :param threads: worker threads. The result does not depend on it.
    :param control_variate: as for mc_entropy.

    :returns: EntropyEstimate.
    """
    if not isinstance(n_outer, (int, np.integer)) or n_outer < 1:
        raise ValueError('n_outer must be a positive integer.')

    if n_mc is None:
        n_mc = int(CONFIG['gmm_entropy']['n_mc'])

    if not isinstance(n_mc, (int, np.integer)) or n_mc < 1:
        raise ValueError('n_mc must be a positive integer.')

    if np.count_nonzero(g.weights) == 1:
        return mc_entropy(g, n_mc=n_mc, seed=seed, threads=threads,
                          control_variate=control_variate)

    if control_variate is None:
        control_variate = bool(CONFIG['gmm_entropy']['control_variate'])

    log_w = _log_weights(g)
    picks = utils.substream(seed, 0, 0).choice(g.n, size=n_outer,
                                               p=g.weights)

    def outer(k):
        rng = utils.substream(seed, 1, k)
        z = rng.standard_normal((n_mc, g.dim)) * g.beta
        vals = _component_neg_log_density(g, picks[k], z, log_w,
                                          control_variate=control_variate)
        var = vals.var(ddof=1) if n_mc > 1 else np.nan
        return vals.mean(), var

    parts = utils.thread_map(outer, range(n_outer), threads=threads)
    means = np.array([p[0] for p in parts])
    value = float(means.mean())

    if n_outer > 1:
        std_error = float(means.std(ddof=1) / math.sqrt(n_outer))
    elif n_mc > 1:
        std_error = math.sqrt(parts[0][1] / n_mc)
    else:
        std_error = math.inf

    lower, upper = entropy_bounds(g)
    lo, hi = _bounded_pair(lower, upper)

    return EntropyEstimate(value=value, std_error=std_error, n_mc=int(n_mc),
                           lower_bound=lo, upper_bound=hi, seed=seed,
                           lower_bounds=tuple(lower),
                           upper_bounds=tuple(upper))


def pairwise_sq_distances(a, b=None):
    """Squared Euclidean distances between the rows of a and b, computed
    blockwise and clamped at zero. The diagonal is exactly zero when b
    is None.

    :param a: array, shape (n, d).
    :param b: array, shape (k, d), or None for a against itself.

    :returns: numpy array, shape (n, k).
    """
    blocks = list(pairwise_distances_chunked(a, b, metric='euclidean'))
    return np.vstack(blocks) ** 2


def _pairwise_lse(g, scale):
    """sum_i c_i log sum_j c_j exp(-||mu_i - mu_j||^2 / scale), one row
    block of distances at a time."""
    log_w = _log_weights(g)
    active = g.weights > 0

    def reduce_block(dist, start):
        sq = dist ** 2
        return logsumexp(log_w[None, :] - sq / scale, axis=1)

    rows = np.concatenate(list(pairwise_distances_chunked(
        g.centers, metric='euclidean', reduce_func=reduce_block)))

    return float(np.dot(g.weights[active], rows[active]))


def entropy_bounds(g):
    """Analytic lower and upper bounds on h(g), in nats.

    Lower bounds:
        L1 = (d/2) log(2 pi e beta^2)                      (h(g) >= h(Z))
        L2 = (d/2) log(4 pi beta^2)
             - sum_i c_i log sum_j c_j exp(-||mu_i-mu_j||^2/(4 beta^2))
        L3 = (d/2) log(2 pi e beta^2)
             - sum_i c_i log sum_j c_j exp(-||mu_i-mu_j||^2/(8 beta^2))

    Upper bounds:
        U1 = (d/2) log(2 pi e beta^2) + H(c)
        U2 = (d/2) log(2 pi e beta^2)
             - sum_i c_i log sum_j c_j exp(-||mu_i-mu_j||^2/(2 beta^2))
        U3 = 1/2 logdet(2 pi e Sigma),
             Sigma = sum_i c_i mu_i mu_i^T - mu mu^T + beta^2 I

    U3 is +inf (with a warning) when Sigma is not numerically positive
    definite; U1 and U2 remain valid.

    :param g: GaussianMixture.

    :returns: (lower, upper), each a numpy array of three floats in the
        order above.
    """
    d = g.dim
    beta_sq = g.beta ** 2
    h_noise = gaussian_entropy(d, g.beta)

    l1 = h_noise
    l2 = 0.5 * d * math.log(4 * math.pi * beta_sq) \
        - _pairwise_lse(g, 4 * beta_sq)
    l3 = h_noise - _pairwise_lse(g, 8 * beta_sq)

    u1 = h_noise + float(discrete_entropy(g.weights))
    u2 = h_noise - _pairwise_lse(g, 2 * beta_sq)

    # Gaussian with the mixture's covariance. Written relative to
    # beta^2 I so a degenerate (single point) mixture gives exactly
    # h_noise.
    mu = g.weights @ g.centers
    centered = g.centers - mu
    cov = (centered * g.weights[:, None]).T @ centered
    sign, logdet = np.linalg.slogdet(np.eye(d) + cov / beta_sq)
    if sign > 0 and np.isfinite(logdet):
        u3 = h_noise + 0.5 * logdet
    else:
        LOG.warning('Mixture covariance is not positive definite; the '
                    'Gaussian upper bound is set to infinity.')
        u3 = math.inf

    return np.array([l1, l2, l3]), np.array([u1, u2, u3])


def mc_mse_bound(d, beta, n, n_mc, support='bounded_unit_cube', m_c=None,
                 constant=None):
    """Bound on the mean squared error of mc_entropy, in nats^2.

    bounded_unit_cube (centers in [-1, 1]^d, e.g. tanh layers):
        2 d (k + beta^2) / beta^2 / (n n_mc), with k = 4 for the
        'proof' constant and k = 2 for the 'theorem' constant.
    second_moment (E||C||^2 <= m_c, e.g. ReLU layers):
        (9 d beta^2 + 8 (2 + beta sqrt(d)) m_c
         + 3 (11 beta sqrt(d) + 1) sqrt(m_c)) / beta^2 / (n n_mc)

    :param d: dimension.
    :param beta: noise standard deviation.
    :param n: number of mixture centers.
    :param n_mc: draws per center.
    :param support: 'bounded_unit_cube' or 'second_moment'.
    :param m_c: second moment bound, required for 'second_moment'.
    :param constant: 'proof' or 'theorem'. None uses the configured
        default ('proof', the larger of the two).
    """
    if support not in SUPPORTS:
        raise ValueError('support must be one of {}.'.format(SUPPORTS))

    if constant is None:
        constant = CONFIG['gmm_entropy']['mse_constant']

    if constant not in MSE_CONSTANTS:
        raise ValueError('constant must be one of {}.'.format(MSE_CONSTANTS))

    if d <= 0 or beta <= 0 or n <= 0 or n_mc <= 0:
        raise ValueError('d, beta, n and n_mc must be positive.')

    scale = 1.0 / (n * n_mc)
    beta_sq = beta ** 2

    if support == 'bounded_unit_cube':
        k = 4.0 if constant == 'proof' else 2.0
        return 2.0 * d * (k + beta_sq) / beta_sq * scale

    if m_c is None or m_c < 0:
        raise ValueError('m_c >= 0 is required for the second_moment '
                         'support.')

    root_d = math.sqrt(d)
    num = (9.0 * d * beta_sq + 8.0 * (2.0 + beta * root_d) * m_c
           + 3.0 * (11.0 * beta * root_d + 1.0) * math.sqrt(m_c))
    return num / beta_sq * scale
