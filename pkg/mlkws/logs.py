import os
import logging.config
import logging
from pathlib import Path
from typing import Optional
import yaml
import mlkws

LOG_LEVELS = {"error": "ERROR", "info": "INFO", "debug": "DEBUG"}


def setup_logging(
    custom_yaml_path: str = None, log_dir: str = None, level: Optional[str] = None
):
    """Initialise and configure logging.

    Should be called at the beginning of code to initialise and configure the
    desired logging level. The console level is taken from ``level`` or, failing
    that, from the ``MLOOK_LOG`` environment variable (one of error, info, debug).

    Args:
        custom_yaml_path (string): Complete pathname of desired yaml logging
            configuration. If empty will provide default logging config.

        log_dir (string): Directory receiving the info/debug/critical log files of the
            default configuration. Defaults to the working directory.

        level (string): Console level in {"error", "info", "debug"}.

    Raises:
        ValueError: Raised if the yaml configuration does not exist.

        ValueError: Raised if the console level is not recognised.

    """
    if "LOG_CFG" in os.environ:
        path = Path(os.environ["LOG_CFG"])
    elif custom_yaml_path is None:
        path = Path(mlkws.__file__).parent / "default-logging-config.yaml"
    else:
        path = Path(custom_yaml_path)
    if not path.exists():
        raise ValueError(f"Logging config path {path} does not exist.")
    if level is None:
        level = os.environ.get("MLOOK_LOG", "info")
    if level.lower() not in LOG_LEVELS:
        raise ValueError(
            f"Log level {level} not recognised. Should be one of error, info, debug."
        )
    with open(path, "rt") as f:
        config = yaml.safe_load(f.read())
    if custom_yaml_path is None:
        root = Path(".") if log_dir is None else Path(log_dir)
        root.mkdir(parents=True, exist_ok=True)
        for name in ("info", "debug", "critical"):
            config["handlers"][f"{name}_file_handler"]["filename"] = str(
                root / f"{name}.log"
            )
    config["handlers"]["console"]["level"] = LOG_LEVELS[level.lower()]
    logging.config.dictConfig(config)


def debug_log(message: str):
    """Log a debug message (e.g. per-batch losses).

    Args:
        message (str): Message to log.

    """
    logger = logging.getLogger("mlkws")
    logger.debug(message)


def warning_log(message: str):
    """Log a warning (e.g. empty evaluation buckets, clipped absorption).

    Args:
        message (str): Warning to log.

    """
    logger = logging.getLogger("mlkws")
    logger.warning(message)


def critical_log(message: str):
    """Log a critical message (e.g. diverged training).

    Args:
        message (str): Message to log.

    """
    logger = logging.getLogger("mlkws")
    logger.critical(message)


def info_log(message: str):
    """Log an information message (e.g. epoch summaries, run completion).

    Args:
        message (str): Message to log.

    """
    logger = logging.getLogger("mlkws")
    logger.info(message)
