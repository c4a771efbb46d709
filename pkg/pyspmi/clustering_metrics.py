"""Clustering diagnostics for activation sets.

Binned entropy H(Bin(T)) quantizes every coordinate into equal-width
bins anchored at the lower edge of the range and takes the Shannon
entropy (nats) of the resulting d-dimensional symbols. Symbols are the
exact tuples of bin indices, found with numpy.unique, so the B^d grid is
never built.

Pairwise distance histograms split the Euclidean distances between all
unordered pairs of samples by whether the two samples share a label.
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import entropy as discrete_entropy
from sklearn.metrics.pairwise import paired_euclidean_distances

from pyspmi import utils

LOG = logging.getLogger(__name__)

CONFIG = utils.read_config()
PAIR_CAP = int(CONFIG['clustering']['pair_cap'])
N_BINS = int(CONFIG['clustering']['n_bins'])

# Pairs per block when enumerating all pairs.
PAIR_BLOCK = 2 ** 18

# Default binning range per activation. None is the observed extreme.
ACTIVATION_RANGES = {'tanh': (-1.0, 1.0), 'sigmoid': (0.0, 1.0),
                     'relu': (0.0, None)}


class Error(Exception):
    """Base class for exceptions in this module."""
    pass


class OutOfRangeError(Error):
    """Raised when a value falls outside the binning range and clamping
    is off."""

    def __init__(self, row, coordinate, value, lo, hi):
        self.row = row
        self.coordinate = coordinate
        self.value = value
        super().__init__(
            'Value {} at row {}, coordinate {} is outside [{}, {}].'
            .format(value, row, coordinate, lo, hi))


class SlopeError(Error):
    """Raised when slopes cannot be fit."""
    pass


@dataclass
class BinningSpec:
    """How activations are quantized.

    bin_size is a bin WIDTH. lo and hi may be scalars or per-dimension
    sequences; None takes the observed per-dimension minimum (maximum).
    With overflow set, values >= hi go to one extra bin, so an unbounded
    (ReLU) range can be summarized as [lo, hi) plus "hi and above".
    """
    bin_size: float
    lo: object = -1.0
    hi: object = 1.0
    clamp_out_of_range: bool = True
    overflow: bool = False

    def __post_init__(self):
        if not (self.bin_size > 0 and np.isfinite(self.bin_size)):
            raise ValueError('bin_size must be positive and finite.')

        if self.lo is not None and self.hi is not None:
            lo = np.asarray(self.lo, dtype=np.float64)
            hi = np.asarray(self.hi, dtype=np.float64)
            if np.any(hi <= lo):
                raise ValueError('hi must be greater than lo.')

            if np.any(self.bin_size > hi - lo):
                raise ValueError('bin_size may not exceed hi - lo.')

    def for_activation(self, activation):
        """Fill an unset lo or hi with the natural range of an activation.

        tanh is [-1, 1] and sigmoid [0, 1]. relu starts at 0 and keeps the
        observed maximum. Other activations keep the observed range.
        """
        lo, hi = ACTIVATION_RANGES.get(activation, (None, None))
        return replace(self, lo=lo if self.lo is None else self.lo,
                       hi=hi if self.hi is None else self.hi)

    def range_for(self, values):
        """Per-dimension (lo, hi) arrays for a value matrix."""
        d = values.shape[1]
        lo = values.min(axis=0) if self.lo is None else self.lo
        hi = values.max(axis=0) if self.hi is None else self.hi
        lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (d,)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (d,)).copy()
        # An observed range may be a single point.
        hi = np.maximum(hi, lo + self.bin_size)
        return lo, hi

    def n_cells(self, lo, hi):
        """Bins per dimension over [lo, hi], without the overflow bin."""
        return np.maximum(np.ceil(np.round((hi - lo) / self.bin_size, 9)),
                          1).astype(np.int64)


def _values(acts):
    return acts.values if hasattr(acts, 'values') else np.asarray(acts)


def bin_indices(values, spec):
    """Integer bin index of every entry of a value matrix.

    Index = floor((v - lo) / B). v == hi lands in the last bin; with
    overflow set every v >= hi lands in the extra bin n_cells.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape(-1, 1)

    lo, hi = spec.range_for(values)
    cells = spec.n_cells(lo, hi)

    below = values < lo
    above = values > hi
    if spec.overflow:
        above = np.zeros_like(above)

    bad = below | above
    if bad.any() and not spec.clamp_out_of_range:
        row, col = (int(k) for k in np.argwhere(bad)[0])
        raise OutOfRangeError(row, col, values[row, col], lo[col], hi[col])

    idx = np.floor((values - lo) / spec.bin_size).astype(np.int64)
    idx = np.clip(idx, 0, cells - 1)
    if spec.overflow:
        idx = np.where(values >= hi, cells, idx)

    return idx


def binned_entropy(acts, spec):
    """Empirical entropy H(Bin(T)) of the joint bin symbols, in nats.

    :param acts: ActivationSet (or a value matrix).
    :param spec: BinningSpec.

    :raises OutOfRangeError: for out-of-range values when clamping is
        off.
    """
    idx = bin_indices(_values(acts), spec)
    _, counts = np.unique(idx, axis=0, return_counts=True)
    return float(discrete_entropy(counts))


def per_unit_binned_entropy(acts, spec):
    """H(Bin(T(k))) of every coordinate k, as a numpy array of d
    entropies."""
    idx = bin_indices(_values(acts), spec)
    out = np.empty(idx.shape[1])
    for k in range(idx.shape[1]):
        _, counts = np.unique(idx[:, k], return_counts=True)
        out[k] = discrete_entropy(counts)

    return out


def entropy_slopes(per_epoch, epochs):
    """Ordinary least squares slope of every unit's entropy against the
    epoch.

    :param per_epoch: sequence of per-unit entropy vectors, one per
        epoch.
    :param epochs: the matching epoch numbers.

    :returns: (mean slope, population std of the slopes, per-unit slopes)
        in nats per epoch.
    """
    try:
        y = np.array([np.asarray(v, dtype=np.float64) for v in per_epoch])
    except ValueError:
        raise SlopeError('Entropy vectors do not share a dimension.') \
            from None

    x = np.asarray(epochs, dtype=np.float64)

    if y.ndim != 2:
        raise SlopeError('Entropy vectors do not share a dimension.')

    if y.shape[0] < 2 or x.size != y.shape[0]:
        raise SlopeError('Need at least two epochs with one entropy vector '
                         'each, got {} epochs and {} vectors.'
                         .format(x.size, y.shape[0]))

    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise SlopeError('All epochs are equal; slopes are undefined.')

    slopes = xc @ (y - y.mean(axis=0)) / sxx
    return float(slopes.mean()), float(slopes.std()), slopes


@dataclass
class DistanceHistogram:
    """Within- and between-class pairwise distance counts over shared
    bin edges."""
    edges: np.ndarray
    within_counts: np.ndarray
    between_counts: np.ndarray
    n_within_pairs: int
    n_between_pairs: int
    subsampled: bool = False
    pair_cap: int = None

    @property
    def centers(self):
        return (self.edges[:-1] + self.edges[1:]) / 2


def _triu_pairs(k, n):
    """Map linear indices of the strict upper triangle to (i, j)."""
    k = np.asarray(k, dtype=np.float64)
    i = n - 2 - np.floor(np.sqrt(-8 * k + 4 * n * (n - 1) - 7) / 2 - 0.5)
    i = i.astype(np.int64)
    j = (k + i + 1 - n * (n - 1) // 2 + (n - i) * (n - i - 1) // 2)
    return i, j.astype(np.int64)


def _pair_distances(values, labels, k):
    """Distances of the pairs with linear upper-triangle indices k, from
    the row differences so identical rows are exactly 0 apart."""
    i, j = _triu_pairs(k, values.shape[0])
    dist = paired_euclidean_distances(values[i], values[j])
    same = labels[i] == labels[j]
    return dist[same], dist[~same]


def _all_pair_distances(values, labels):
    """Distances of every unordered pair, block by block."""
    n = values.shape[0]
    total = n * (n - 1) // 2
    within, between = [], []
    for start in range(0, total, PAIR_BLOCK):
        w, b = _pair_distances(values, labels,
                               np.arange(start, min(start + PAIR_BLOCK,
                                                    total)))
        within.append(w)
        between.append(b)

    return np.concatenate(within), np.concatenate(between)


def pairwise_distance_histogram(acts, n_bins=None, max_distance=None,
                                pair_cap=None, seed=0):
    """Histograms of within-class and between-class pairwise distances.

    :param acts: ActivationSet with labels.
    :param n_bins: number of equal-width bins over [0, max_distance].
    :param max_distance: upper edge. None uses the largest observed
        distance. Larger distances are counted in the last bin.
    :param pair_cap: when there are more unordered pairs than this,
        pair_cap pairs are drawn uniformly without replacement.
    :param seed: seed of the pair subsample.

    :returns: DistanceHistogram.
    """
    n_bins = N_BINS if n_bins is None else int(n_bins)
    pair_cap = PAIR_CAP if pair_cap is None else int(pair_cap)

    if acts.labels is None:
        raise ValueError('Pairwise distance histograms need labels.')

    values = acts.values
    labels = np.asarray(acts.labels)
    n = values.shape[0]
    if n < 2:
        raise ValueError('At least two samples are needed.')

    if n_bins < 1:
        raise ValueError('n_bins must be positive.')

    total = n * (n - 1) // 2
    subsampled = total > pair_cap
    if subsampled:
        LOG.warning('{} pairs exceed the cap of {}; subsampling pairs.'
                    .format(total, pair_cap))
        k = utils.substream(seed).choice(total, size=pair_cap, replace=False)
        within, between = _pair_distances(values, labels, np.sort(k))
    else:
        within, between = _all_pair_distances(values, labels)

    if max_distance is None:
        top = max(within.max(initial=0.0), between.max(initial=0.0))
        if top <= 0:
            top = 1.0
    else:
        top = float(max_distance)
        if top <= 0:
            raise ValueError('max_distance must be positive.')

    edges = np.linspace(0.0, top, n_bins + 1)
    within_counts, _ = np.histogram(np.minimum(within, top), bins=edges)
    between_counts, _ = np.histogram(np.minimum(between, top), bins=edges)

    return DistanceHistogram(edges=edges, within_counts=within_counts,
                             between_counts=between_counts,
                             n_within_pairs=int(within.size),
                             n_between_pairs=int(between.size),
                             subsampled=subsampled,
                             pair_cap=pair_cap if subsampled else None)


def histogram_mode(hist, which='within'):
    """Center of the fullest bin of one of the two histograms, or NaN if
    it is empty."""
    counts = {'within': hist.within_counts,
              'between': hist.between_counts}[which]
    if counts.sum() == 0:
        return math.nan

    return float(hist.centers[int(np.argmax(counts))])
