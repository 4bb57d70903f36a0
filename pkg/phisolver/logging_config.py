import logging
import os
import sys
from logging.handlers import RotatingFileHandler

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"


def setup_logging(path: str | None = None, verbose: bool = False) -> None:
    path = path or os.environ.get("PHISOLVER_LOG", "phisolver.log")
    logger = logging.getLogger()
    logger.setLevel(logging.INFO)

    # повторный вызов (CLI + API в одном процессе) не должен дублировать хендлеры
    if not any(isinstance(h, RotatingFileHandler) for h in logger.handlers):
        handler = RotatingFileHandler(path, maxBytes=5 * 1024 * 1024, backupCount=3)  # 5 MB на файл
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)

    if verbose:
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(console)
        logger.setLevel(logging.DEBUG)
