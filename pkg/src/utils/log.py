"""Logging setup for the command line and library modules"""
import logging
import sys

LOG_FORMAT = '%(asctime)s %(levelname)-7s %(name)s: %(message)s'

_configured = False


def configure_logging(level='INFO', stream=None):
    """Configure the root 'expanderbench' logger once; later calls only change the level"""
    global _configured
    root = logging.getLogger('expanderbench')
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    root.setLevel(level)

    if not _configured:
        handler = logging.StreamHandler(stream or sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    return root


def get_logger(name):
    """Get a logger under the 'expanderbench' namespace"""
    if name.startswith('src.'):
        name = name[len('src.'):]
    return logging.getLogger(f'expanderbench.{name}')
