"""
The sample-propagation (SP) estimator of I(X; T_l) and the calculators
that say how far it can be trusted.

For a noisy network and a dataset X = {x_1..x_m} (X uniform over it):

    I_SP = h(p_hat(S_l) * phi_beta) - (1/m) sum_x h(p_hat(S_l | x) * phi_beta)

The first term uses n samples of S_l obtained by pushing the dataset
through the network; the second uses, for every x, n_x samples of S_l
obtained by pushing x through the network n_x times with fresh noise.
For l = 1 there is no upstream noise, and h(T_1 | X = x) is exactly the
Gaussian entropy (d_1/2) log(2 pi e beta^2).

Both terms are Gaussian mixture entropies and are computed with
gmm_entropy. Monte Carlo standard errors of the m + 1 entropies combine
in quadrature. The analytic mixture bounds give an envelope for I_SP but
are never substituted into it, and I_SP is never clamped.

Theory calculators (all in nats):
    risk_bound      bound on the expected absolute error of I_SP.
    min_n_for_risk  n at which risk_bound reaches a tolerance.
    k_star          resolution in the lower bound on the SP bias.
    bias_floor      that lower bound for a given n.
    min_n_for_bias  n below which the bias cannot be less than delta.
    theory_report   all of the above plus the Monte Carlo MSE bound.
"""
# Standard library
import decimal
import logging
import math
from dataclasses import dataclass, field

# Installed packages
import numpy as np
import pandas as pd
from scipy.special import erfc, erfcinv
from scipy.stats import entropy as discrete_entropy

# pyspmi
from pyspmi import utils
from pyspmi import gmm_entropy
from pyspmi import noisy_net

LOG = logging.getLogger(__name__)

CONFIG = utils.read_config()

RISK_CLASSES = ('bounded', 'subgaussian')


class Error(Exception):
    """Base class for exceptions in this module."""
    pass


class VacuousMIError(Error):
    """Raised when MI is requested for a noiseless layer."""
    pass


class EpsilonWindowError(Error):
    """Raised when epsilon is outside the interval in which the bias
    bound holds."""

    def __init__(self, epsilon, eps_min, d, beta):
        self.epsilon = epsilon
        self.eps_min = eps_min
        super().__init__(
            'epsilon = {} is outside the valid window ({:.6g}, 1) for '
            'd = {}, beta = {}.'.format(epsilon, eps_min, d, beta))


@dataclass
class MIEstimate:
    """I_SP for one layer.

    i_sp equals h_unconditional.value - h_conditional_mean exactly.
    lower_bound and upper_bound are the analytic envelope, from the
    mixture bounds of every entropy term.
    """
    layer_index: int
    i_sp: float
    h_unconditional: gmm_entropy.EntropyEstimate
    h_conditional_mean: float
    n: int
    n_x: int
    combined_std_error: float
    lower_bound: float
    upper_bound: float
    beta: float
    h_conditional_per_x: list = None


@dataclass
class TheoryReport:
    """Evaluated calculators with their inputs echoed."""
    d: int
    beta: float
    n: int
    n_mc: int
    epsilon: float
    delta: float
    risk_class: str
    mu: float
    k: float
    m_c: float
    risk_bound: float
    bias_floor: float
    k_star: int
    min_n_unbiased: int
    mc_mse: float

    def as_row(self):
        return dict(self.__dict__)


@dataclass
class Advice:
    """Result of advise_n. stable is False when the first halving of the
    ladder already changed I_SP by more than the tolerance."""
    recommended_n: int
    stable: bool
    trace: pd.DataFrame = field(repr=False, default=None)


########################################################################
# Estimator
########################################################################
def _unconditional_inputs(data, n, seed):
    """n inputs with X uniform over the dataset: every input n // m
    times, plus a seeded sample without replacement for the rest."""
    m = data.m
    reps, rest = divmod(n, m)
    idx = np.tile(np.arange(m), reps)
    if rest:
        extra = utils.substream(seed, 0, 0).choice(m, size=rest,
                                                   replace=False)
        idx = np.concatenate((idx, np.sort(extra)))

    return data.inputs[idx]


def _estimation_net(net, layer, beta):
    """The network used for estimation, honoring a beta override."""
    trained = net.layer(layer).beta
    if beta is None or beta == trained:
        return net

    if CONFIG['estimator']['noise_beta_warning']:
        LOG.warning('Estimating with beta = {} while the network was built '
                    'with beta = {}.'.format(beta, trained))

    betas = [beta if k < layer else b for k, b in enumerate(net.betas)]
    return net.with_betas(betas)


def mi_bounds(h_unconditional, h_conditional):
    """Analytic envelope of I_SP.

    :param h_unconditional: EntropyEstimate of the unconditional mixture.
    :param h_conditional: list of EntropyEstimate, one per input.

    :returns: (lower, upper)
    """
    cond_lo = np.mean([h.lower_bound for h in h_conditional])
    cond_hi = np.mean([h.upper_bound for h in h_conditional])
    return (float(h_unconditional.lower_bound - cond_hi),
            float(h_unconditional.upper_bound - cond_lo))


def estimate_mi(net, data, layer, n=None, n_x=None, n_mc=None, seed=0,
                threads=None, keep_per_x=False, beta=None,
                control_variate=None):
    """Estimate I(X; T_l) with the sample-propagation estimator.

    :param net: NoisyNet.
    :param data: LabeledDataset; X is uniform over its inputs.
    :param layer: 1-based layer index.
    :param n: unconditional samples. None means one per input.
    :param n_x: conditional samples per input. None means n.
    :param n_mc: Monte Carlo draws per mixture center.
    :param seed: non-negative integer seed.
    :param threads: worker threads for the per-input jobs.
    :param keep_per_x: keep the per-input conditional entropies.
    :param beta: optional noise level overriding the network's (with a
        warning).
    :param control_variate: passed to the Monte Carlo entropy estimates.
        None uses the configured default.

    :returns: MIEstimate.

    :raises VacuousMIError: if layer l has no noise.
    """
    net = _estimation_net(net, layer, beta)
    beta_l = net.layer(layer).beta
    if beta_l == 0:
        raise VacuousMIError(
            'Layer {} is deterministic (beta = 0). I(X; T) is vacuous in '
            'deterministic networks: it is infinite for continuous inputs '
            'or a constant H(X) for discrete ones.'.format(layer))

    n = data.m if n is None else n
    n_x = n if n_x is None else n_x
    if n_mc is None:
        n_mc = int(CONFIG['estimator']['n_mc'])
    if control_variate is None:
        control_variate = bool(CONFIG['estimator']['control_variate'])

    for name, v in (('n', n), ('n_x', n_x), ('n_mc', n_mc)):
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise ValueError('{} must be a positive integer.'.format(name))

    LOG.info('Estimating I(X;T_{}) with n={}, n_x={}, n_mc={}.'
             .format(layer, n, n_x, n_mc))

    # Unconditional term.
    inputs = _unconditional_inputs(data, n, seed)
    out = net.forward(inputs, noisy=True, rng=utils.substream(seed, 0, 1),
                      up_to=layer)
    g_u = gmm_entropy.GaussianMixture.from_samples(out[-1][0], beta_l)
    h_u = gmm_entropy.mc_entropy(g_u, n_mc=n_mc,
                                 seed=utils.derive_seed(seed, 1),
                                 threads=threads,
                                 control_variate=control_variate)

    # Conditional terms.
    d_l = net.layer(layer).d_out
    if layer == 1:
        h_gauss = gmm_entropy.gaussian_entropy(d_l, beta_l)
        exact = gmm_entropy.EntropyEstimate(
            value=h_gauss, std_error=0.0, n_mc=0, lower_bound=h_gauss,
            upper_bound=h_gauss, seed=seed)
        h_cond = [exact] * data.m
    else:
        def conditional(i):
            acts = noisy_net.conditional_activations(
                net, data.inputs[i], layer, n_x,
                seed=utils.derive_seed(seed, 2, i))
            g = gmm_entropy.GaussianMixture.from_samples(acts.values, beta_l)
            return gmm_entropy.mc_entropy(g, n_mc=n_mc,
                                          seed=utils.derive_seed(seed, 3, i),
                                          threads=1,
                                          control_variate=control_variate)

        h_cond = utils.thread_map(conditional, range(data.m),
                                  threads=threads)

    cond_values = np.array([h.value for h in h_cond])
    cond_se = np.array([h.std_error for h in h_cond])
    if layer == 1:
        h_cond_mean = h_gauss
    else:
        h_cond_mean = float(np.mean(cond_values))
    combined = math.sqrt(h_u.std_error ** 2
                         + float(np.sum(cond_se ** 2)) / data.m ** 2)
    lower, upper = mi_bounds(h_u, h_cond)

    estimate = MIEstimate(
        layer_index=layer, i_sp=h_u.value - h_cond_mean, h_unconditional=h_u,
        h_conditional_mean=h_cond_mean, n=int(n), n_x=int(n_x),
        combined_std_error=combined, lower_bound=lower, upper_bound=upper,
        beta=beta_l,
        h_conditional_per_x=list(cond_values) if keep_per_x else None)

    LOG.info('I(X;T_{}) = {:.5f} +/- {:.2g} nats, envelope [{:.4f}, {:.4f}].'
             .format(layer, estimate.i_sp, combined, lower, upper))
    return estimate


def density_snapshot(net, data, layer, grid, seed=0, n=None):
    """Density of T_l on a grid, for one-dimensional layers.

    p_T is the SP mixture of the propagated samples, so the snapshot is
    exactly the distribution the estimator integrates.

    :returns: DataFrame with columns t and density.
    """
    beta_l = net.layer(layer).beta
    if beta_l == 0:
        raise VacuousMIError('Layer {} has no noise, T has no density.'
                             .format(layer))

    if net.layer(layer).d_out != 1:
        raise ValueError('Density snapshots need a one-dimensional layer.')

    n = data.m if n is None else n
    inputs = _unconditional_inputs(data, n, seed)
    out = net.forward(inputs, noisy=True, rng=utils.substream(seed, 0, 1),
                      up_to=layer)
    g = gmm_entropy.GaussianMixture.from_samples(out[-1][0], beta_l)
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    density = np.exp(gmm_entropy.mixture_log_density(g, grid.reshape(-1, 1)))
    return pd.DataFrame({'t': grid, 'density': density})


########################################################################
# Theory
########################################################################
def _check_positive(**kwargs):
    for name, v in kwargs.items():
        if v is None or not v > 0 or not np.isfinite(v):
            raise ValueError('{} must be positive and finite.'.format(name))


def _log_plugin_risk(d, beta, cls, mu, k):
    """log of sqrt(n) * Delta_{beta,d}(n), the plug-in entropy risk."""
    if cls == 'bounded':
        return (max(0.0, -d * math.log(beta)) + (d + 2) * math.log(2)
                + 0.5 * math.log(d))

    s = k + beta / math.sqrt(2)
    inner = 8 * (2 * mu ** 4 + 32 * d ** 2 * k ** 4
                 + d * (d + 2) * s ** 4) / beta ** 4
    return (0.5 * d * math.log(1 / math.sqrt(2) + k / beta)
            + 0.5 * math.log(inner)
            + 3 * d / 16 + mu ** 2 / (4 * s ** 2))


def _risk_numerator(d, beta, cls, mu, k):
    """sqrt(n) times the MI risk bound."""
    if cls not in RISK_CLASSES:
        raise ValueError('cls must be one of {}.'.format(RISK_CLASSES))

    if cls == 'subgaussian':
        mu = CONFIG['theory']['subgaussian_mu'] if mu is None else mu
        k = CONFIG['theory']['subgaussian_k'] if k is None else k
        _check_positive(k=k)

    return (2 * math.exp(_log_plugin_risk(d, beta, cls, mu, k))
            + d * math.log1p(1 / beta ** 2) / 4)


def risk_bound(d, beta, n, cls='bounded', mu=None, k=None):
    """Bound on the expected absolute error of I_SP, in nats.

    2 Delta + d log(1 + 1/beta^2) / (4 sqrt(n)), where Delta is the
    plug-in risk of the entropy estimates:

    bounded (||f_l|| <= 1):
        Delta = max(1, beta^-d) 2^(d+2) sqrt(d / n)
    subgaussian(mu, K):
        Delta = (1/sqrt(2) + K/beta)^(d/2)
                sqrt(8 (2 mu^4 + 32 d^2 K^4 + d (d+2) (K + beta/sqrt(2))^4)
                     / beta^4)
                exp(3d/16 + mu^2 / (4 (K + beta/sqrt(2))^2)) / sqrt(n)

    :param d: layer width.
    :param beta: noise standard deviation.
    :param n: samples.
    :param cls: 'bounded' or 'subgaussian'.
    :param mu: subgaussian mean parameter (config default).
    :param k: subgaussian scale parameter (config default).
    """
    _check_positive(d=d, beta=beta, n=n)
    return _risk_numerator(d, beta, cls, mu, k) / math.sqrt(n)


def _ceil_exp(log_value):
    """ceil(exp(log_value)) as an int, exact for huge values."""
    if log_value < 700:
        return max(1, int(math.ceil(math.exp(log_value))))

    with decimal.localcontext() as ctx:
        ctx.prec = 50
        return int(decimal.Decimal(log_value).exp().to_integral_value(
            rounding=decimal.ROUND_CEILING))


def min_n_for_risk(d, beta, tol, cls='bounded', mu=None, k=None):
    """Smallest n with risk_bound(d, beta, n) <= tol.

    Both terms of the bound scale as 1/sqrt(n), so
    n = ceil((sqrt(n) risk / tol)^2).
    """
    _check_positive(d=d, beta=beta)
    if not tol > 0:
        raise ValueError('tol must be positive.')

    if math.isinf(tol):
        return 1

    return _ceil_exp(2 * (math.log(_risk_numerator(d, beta, cls, mu, k))
                          - math.log(tol)))


def q_function(x):
    """Gaussian tail probability P(N(0, 1) > x)."""
    return 0.5 * erfc(x / math.sqrt(2))


def q_inverse(p):
    """Inverse of q_function."""
    return math.sqrt(2) * erfcinv(2 * p)


def epsilon_window(d, beta):
    """Lower end of the open interval (eps_min, 1) of valid epsilon."""
    return -math.expm1(d * math.log1p(-2 * q_function(1 / (2 * beta))))


def k_star(d, beta, epsilon):
    """Quantizer resolution of the SP bias bound,
    floor(1 / (beta Q^-1((1 - (1 - eps)^(1/d)) / 2))).

    :raises EpsilonWindowError: outside (epsilon_window(d, beta), 1).
    """
    _check_positive(d=d, beta=beta)
    eps_min = epsilon_window(d, beta)
    if not eps_min < epsilon < 1:
        raise EpsilonWindowError(epsilon, eps_min, d, beta)

    p = -math.expm1(math.log1p(-epsilon) / d) / 2
    return int(math.floor(1 / (beta * q_inverse(p))))


def binary_entropy(epsilon):
    """H_b(epsilon) in nats."""
    return float(discrete_entropy([epsilon, 1 - epsilon]))


def _log_bias_scale(d, beta, epsilon):
    """log(k_star^(d (1 - eps))) - H_b(eps)."""
    ks = k_star(d, beta, epsilon)
    return d * (1 - epsilon) * math.log(ks) - binary_entropy(epsilon)


def bias_floor(d, beta, epsilon, n):
    """Lower bound on the bias of I_SP with n samples,
    max(0, log(k_star^(d (1 - eps)) / n) - H_b(eps))."""
    _check_positive(n=n)
    return max(0.0, _log_bias_scale(d, beta, epsilon) - math.log(n))


def min_n_for_bias(d, beta, epsilon, delta):
    """ceil(k_star^(d (1 - eps)) exp(-(delta + H_b(eps)))): for n up to
    this value the bias is at least delta. Computed in log space."""
    if delta < 0:
        raise ValueError('delta must be >= 0.')

    return _ceil_exp(_log_bias_scale(d, beta, epsilon) - delta)


def theory_report(d, beta, n, n_mc, epsilon, delta, cls='bounded', mu=None,
                  k=None, m_c=None):
    """Evaluate every calculator for one set of inputs.

    The Monte Carlo MSE bound uses the bounded-cube support for the
    bounded class and the second-moment support (m_c) otherwise.
    """
    if cls == 'subgaussian':
        mu = CONFIG['theory']['subgaussian_mu'] if mu is None else mu
        k = CONFIG['theory']['subgaussian_k'] if k is None else k
        m_c = CONFIG['theory']['second_moment'] if m_c is None else m_c
        mse = gmm_entropy.mc_mse_bound(d, beta, n, n_mc,
                                       support='second_moment', m_c=m_c)
    else:
        mse = gmm_entropy.mc_mse_bound(d, beta, n, n_mc,
                                       support='bounded_unit_cube')

    return TheoryReport(
        d=d, beta=beta, n=n, n_mc=n_mc, epsilon=epsilon, delta=delta,
        risk_class=cls, mu=mu, k=k, m_c=m_c,
        risk_bound=risk_bound(d, beta, n, cls=cls, mu=mu, k=k),
        bias_floor=bias_floor(d, beta, epsilon, n),
        k_star=k_star(d, beta, epsilon),
        min_n_unbiased=min_n_for_bias(d, beta, epsilon, delta),
        mc_mse=mse)


########################################################################
# Sample size advice
########################################################################
def advise_n(net, data, layer, target_tol, seed=0, cap=None, min_rung=None,
             n_mc=None, threads=None, cls='bounded'):
    """Recommend a sample size by a halving ladder.

    The ladder starts at min(min_n_for_risk(target_tol), cap) and halves
    down to min_rung. Adjacent rungs are estimated with independent
    seeds; the recommendation moves down the ladder while
    |I(n) - I(n/2)| <= target_tol and stops at the first failure. If the
    very first comparison fails, the starting rung is returned with
    stable False.

    :returns: Advice, with the per-rung trace (columns n, i_sp,
        combined_std_error, delta, within_tol).
    """
    cap = int(CONFIG['estimator']['advise_cap']) if cap is None else cap
    if min_rung is None:
        min_rung = int(CONFIG['estimator']['advise_min_rung'])

    if target_tol < 0:
        raise ValueError('target_tol must be >= 0.')

    d_l = net.layer(layer).d_out
    beta_l = net.layer(layer).beta
    if beta_l == 0:
        raise VacuousMIError('Layer {} is deterministic (beta = 0).'
                             .format(layer))

    if target_tol == 0:
        start = cap
    else:
        start = min(min_n_for_risk(d_l, beta_l, target_tol, cls=cls), cap)
    start = max(start, min_rung)

    rungs = [start]
    while rungs[-1] // 2 >= min_rung:
        rungs.append(rungs[-1] // 2)

    LOG.info('advise_n ladder for layer {}: {}.'.format(layer, rungs))

    rows = []
    recommended = start
    stable = True
    previous = None
    for r, n in enumerate(rungs):
        est = estimate_mi(net, data, layer, n=n, n_x=n, n_mc=n_mc,
                          seed=utils.derive_seed(seed, r), threads=threads)
        delta = math.nan if previous is None else abs(est.i_sp - previous)
        ok = previous is None or delta <= target_tol
        rows.append({'n': n, 'i_sp': est.i_sp,
                     'combined_std_error': est.combined_std_error,
                     'delta': delta, 'within_tol': ok})
        if not ok:
            if r == 1:
                stable = False
            break

        recommended = n
        previous = est.i_sp

    if not stable:
        LOG.warning('I_SP changed by {:.4g} > {} at the first halving; '
                    'returning n = {} without stability evidence.'
                    .format(rows[-1]['delta'], target_tol, recommended))

    trace = pd.DataFrame(rows, columns=['n', 'i_sp', 'combined_std_error',
                                        'delta', 'within_tol'])
    return Advice(recommended_n=int(recommended), stable=stable, trace=trace)
