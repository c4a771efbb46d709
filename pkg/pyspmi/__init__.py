"""pyspmi estimates the mutual information I(X;T) between the input of a
noisy feedforward network and each of its hidden layers.

Every hidden layer of a noisy network adds isotropic Gaussian noise to
its activations, T = S + Z. The sample-propagation (SP) estimator pushes
the dataset through the network, treats the resulting samples of S as
the centers of a Gaussian mixture, and reduces both the unconditional
entropy h(T) and the conditional entropies h(T|X=x) to the entropy of
a known Gaussian mixture. Those entropies are computed by Monte Carlo
integration and bracketed by analytic bounds (gmm_entropy.py).

The remaining modules train the networks (noisy_net.py), assemble the
estimator and its theory calculators (sp_estimator.py), measure the
clustering of representations (clustering_metrics.py), read and write
the on-disk formats (io_formats.py) and orchestrate experiments from the
command line (cli.py, run_pyspmi.py).

This file (__init__.py) does some application-wide logging
configuration. It uses log_config.json. The PYSPMI_LOG_LEVEL and
PYSPMI_LOG_FILE environment variables override the level and the log
file name.
"""
import logging
import logging.handlers

try:
    import simplejson as json
except ModuleNotFoundError:
    import json

import os
from logging.config import dictConfig

__version__ = '0.1.0'

# Load the logging configuration file.
config_file = os.path.join(os.path.dirname(__file__), "log_config.json")
with open(config_file, 'r') as f:
    config_dict = json.load(f)

# Grab the level - we'll use the same level for all logs and handlers.
level_name = os.environ.get('PYSPMI_LOG_LEVEL', config_dict.pop('level'))
log_level = getattr(logging, level_name.upper())

# Allow the log file to be relocated (e.g. into an output directory).
log_file = os.environ.get('PYSPMI_LOG_FILE')

# Set the handlers to the appropriate level, determine if we need to
# rotate any logs.
need_rotate = []
for h_name, h in config_dict['handlers'].items():
    # Set level.
    h['level'] = log_level
    # Not all handlers have a filename.
    if 'filename' not in h:
        continue

    if log_file is not None:
        h['filename'] = log_file

    # Check if we need to perform a log rotation.
    if os.path.isfile(h['filename']):
        need_rotate.append(h_name)

# Set root logger level.
config_dict['loggers']['']['level'] = log_level

# Configure logging.
dictConfig(config_dict)

# Get Logger.
log = logging.getLogger()
log.debug('Root logger configured in {}.'.format(__file__))

# Loop through handlers, and rotate any that are RotatingFileHandlers.
if len(need_rotate) > 0:
    for h in log.handlers:
        if isinstance(h, logging.handlers.RotatingFileHandler) \
                and (h.name in need_rotate):
            h.doRollover()
            log.debug('Old log, {}, rotated.'.format(h.baseFilename))
