"""
Loggers for the command line runners.

Library modules log through `logging.getLogger(__name__)`; the runners attach
handlers to the package logger with `get_logger` so those records reach the
console and the run's log file.
"""

import logging
import os
from pathlib import Path
from typing import Dict, Optional, Tuple

from isacdesign.errors import ConfigurationError

LOG_LEVEL_ENV = "ISACDESIGN_LOG_LEVEL"

# Cache this so the logger object isn't recreated,
# and we get accurate "relativeCreated" times.
_name_path_to_logger: Dict[Tuple[str, Optional[Path]], logging.Logger] = {}


def log_level() -> int:
    name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        raise ConfigurationError(f"{LOG_LEVEL_ENV}={name} is not a logging level")
    return level


def get_logger(name: str = "isacdesign", log_path: Optional[Path] = None):
    """Returns a run level logger"""
    global _name_path_to_logger
    if (name, log_path) not in _name_path_to_logger:
        level = log_level()
        logger = logging.getLogger(name)
        logger.setLevel(level)
        # create formatter and add it to the handlers
        formatter = logging.Formatter(
            "isacdesign - %(name)s - %(asctime)s - %(msecs)d - %(levelname)s - "
            "%(message)s"
        )
        if not any(type(h) is logging.StreamHandler for h in logger.handlers):
            ch = logging.StreamHandler()
            ch.setLevel(level)
            ch.setFormatter(formatter)
            logger.addHandler(ch)
        if log_path is not None:
            fh = logging.FileHandler(log_path)
            fh.setLevel(level)
            fh.setFormatter(formatter)
            logger.addHandler(fh)
        _name_path_to_logger[(name, log_path)] = logger
    return _name_path_to_logger[(name, log_path)]
