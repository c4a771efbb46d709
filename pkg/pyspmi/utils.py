"""Miscellaneous utility functions for pyspmi"""
import logging
import os
import hashlib
from multiprocessing.pool import ThreadPool

import numpy as np
try:
    import simplejson as json
except ModuleNotFoundError:
    import json

# Setup log.
LOG = logging.getLogger(__name__)

# Define directory
THIS_DIR = os.path.dirname(os.path.abspath(__file__))

# Number of worker threads used by thread_map when the caller does not
# say. The command line --threads flag sets this.
_DEFAULT_THREADS = None


class Error(Exception):
    """Top level exception for utils."""
    pass


def read_config():
    """Simpler helper to read the pyspmi configuration file."""
    with open(os.path.join(THIS_DIR, 'pyspmi_config.json'), 'r') as f:
        config = json.load(f)

    return config


def set_default_threads(threads):
    """Set the number of worker threads thread_map uses by default.

    :param threads: positive integer, or None to fall back on the
        configuration file.
    """
    global _DEFAULT_THREADS
    if threads is not None and (not isinstance(threads, (int, np.integer))
                                or threads < 1):
        raise ValueError('threads must be a positive integer or None.')

    _DEFAULT_THREADS = threads


def get_default_threads():
    """Return the number of worker threads in effect."""
    if _DEFAULT_THREADS is not None:
        return _DEFAULT_THREADS

    return int(read_config()['threads'])


def _check_seed(seed):
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise TypeError('seed must be an integer.')

    if seed < 0:
        raise ValueError('seed must be >= 0.')


def substream(seed, *counters):
    """Get an independent random number generator for a (seed, counter)
    pair.

    Substreams are derived through numpy's SeedSequence, so the draws a
    piece of work sees depend only on the seed and its counters, never
    on which thread ran it or in what order.

    :param seed: non-negative integer seed.
    :param counters: non-negative integers identifying the piece of
        work (e.g. the index of a mixture component).

    :returns: numpy.random.Generator
    """
    _check_seed(seed)
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed)]
                                               + [int(c) for c in counters])))


def derive_seed(seed, *counters):
    """Derive a new non-negative integer seed from a seed and counters.

    Used to hand an independent seed to a function that takes an integer
    seed rather than a Generator.
    """
    _check_seed(seed)
    state = np.random.SeedSequence(
        [int(seed)] + [int(c) for c in counters]).generate_state(1)
    return int(state[0])


def thread_map(func, items, threads=None):
    """Apply func to every item, possibly in parallel, returning results
    in the order of items.

    numpy releases the GIL inside its kernels, so a thread pool is
    enough to keep several cores busy. Results are always returned in
    input order, so reductions over them are independent of the number
    of threads.

    :param func: callable taking a single item.
    :param items: iterable of items.
    :param threads: number of worker threads. None means
        get_default_threads().

    :returns: list of func(item) for item in items.
    """
    items = list(items)

    if threads is None:
        threads = get_default_threads()

    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    with ThreadPool(processes=min(threads, len(items))) as pool:
        return pool.map(func, items)


def canonical_json(obj):
    """Serialize obj to JSON with sorted keys and no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def config_hash(obj):
    """SHA-256 of the canonical JSON form of a configuration mapping.
    The hash is stable across machines and Python versions.
    """
    return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()


def list_to_string(in_list, conjunction):
    """Simple helper for formatting lists contaings strings as strings.

    This is intended for simple lists that contain strings. Input will
    not be checked.

    :param in_list: List to be converted to a string.
    :param conjunction: String - conjunction to be used (e.g. and, or).
    """
    if len(in_list) == 1:
        return str(in_list[0])

    return ", ".join(in_list[:-1]) + ", {} {}".format(conjunction, in_list[-1])
