"""SVG line plots for the command line tools.

Plots are drawn with matplotlib's Agg backend. The creation date is left
out and the element id salt is fixed, so identical data give identical
files.
"""
import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

LOG = logging.getLogger(__name__)

matplotlib.rcParams['svg.hashsalt'] = 'pyspmi'
matplotlib.rcParams['svg.fonttype'] = 'none'


def _save(fig, path):
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    LOG.debug('Wrote plot {}.'.format(path))


def mi_and_binning_plot(path, epochs, i_sp, binned, layer, std_error=None):
    """I_SP and H(Bin(T)) of one layer against epoch, on twin y axes.

    Missing I_SP values (e.g. a noiseless layer) are left out.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    if i_sp is not None:
        ax.plot(epochs, i_sp, color='tab:blue', label='I_SP')
        if std_error is not None:
            lo = [v - 2 * s for v, s in zip(i_sp, std_error)]
            hi = [v + 2 * s for v, s in zip(i_sp, std_error)]
            ax.fill_between(epochs, lo, hi, color='tab:blue', alpha=0.2)
    ax.set_xlabel('epoch')
    ax.set_ylabel('I(X;T) [nats]', color='tab:blue')

    ax2 = ax.twinx()
    ax2.plot(epochs, binned, color='tab:red', linestyle='--',
             label='H(Bin(T))')
    ax2.set_ylabel('H(Bin(T)) [nats]', color='tab:red')
    ax.set_title('Layer {}'.format(layer))
    fig.tight_layout()
    _save(fig, path)


def series_plot(path, series, xlabel, ylabel, title=None, envelopes=None):
    """Several named curves on one axis.

    :param series: dict name -> (x, y).
    :param envelopes: optional dict name -> (x, lower, upper), drawn as
        shaded bands.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(envelopes or {}):
        x, lo, hi = envelopes[name]
        ax.fill_between(x, lo, hi, alpha=0.15, label='{} bounds'.format(name))

    for name in sorted(series):
        x, y = series[name]
        ax.plot(x, y, label=name)

    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)

    ax.legend(loc='best', fontsize='small')
    fig.tight_layout()
    _save(fig, path)
