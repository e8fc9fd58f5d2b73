import logging
import logging.handlers
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from src.config import config

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Libraries that log at INFO/DEBUG on every figure render or import
NOISY_LOGGERS = ('matplotlib', 'PIL')


def setup_logger(name: str = __name__, log_config: Optional[Dict[str, Any]] = None) -> logging.Logger:
    """
    Attach console (stderr) and rotating file handlers to ``name`` from the [LOGGING] settings.

    An empty ``file`` setting disables the file handler. Calling again for the same logger is a no-op.
    """
    logger = logging.getLogger(name)

    # Avoid duplicate handlers
    if logger.handlers:
        return logger

    log_config = log_config or config.logging_config
    log_level = getattr(logging, str(log_config['level']).upper(), logging.INFO)
    logger.setLevel(log_level)
    formatter = logging.Formatter(LOG_FORMAT)

    # stdout stays free for command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_config.get('file'):
        log_file = Path(log_config['file'])
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=log_config['max_size_mb'] * 1024 * 1024,
            backupCount=log_config['backup_count'],
            encoding='utf-8'
        )
        file_handler.setLevel(log_level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    for noisy in NOISY_LOGGERS:
        logging.getLogger(noisy).setLevel(logging.WARNING)

    return logger
