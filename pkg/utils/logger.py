import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional, Union

LOG_FILE = "deepboost.log"
CONSOLE_FORMAT = '%(levelname)s: %(message)s'
FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
MAX_LOG_BYTES = 10 * 1024 * 1024
LOG_BACKUPS = 5


class Logger:
    """Process-wide logging setup: console at INFO, rotating file at DEBUG.

    Library modules only call get_logger(__name__); the entry point creates the
    singleton once it knows the output directory.
    """
    _instance: Optional['Logger'] = None

    def __init__(self, log_dir: Union[str, Path] = "logs", console_level: int = logging.INFO):
        if Logger._instance is not None:
            raise RuntimeError("Logger is a singleton! Use Logger.get_instance()")

        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.root = logging.getLogger()
        self.root.setLevel(logging.DEBUG)

        console = logging.StreamHandler(sys.stdout)
        console.setLevel(console_level)
        console.setFormatter(logging.Formatter(CONSOLE_FORMAT))

        log_file = RotatingFileHandler(
            self.log_dir / LOG_FILE, maxBytes=MAX_LOG_BYTES, backupCount=LOG_BACKUPS
        )
        log_file.setLevel(logging.DEBUG)
        log_file.setFormatter(logging.Formatter(FILE_FORMAT))

        self.handlers: List[logging.Handler] = [console, log_file]
        for handler in self.handlers:
            self.root.addHandler(handler)
        Logger._instance = self

    @staticmethod
    def get_instance(log_dir: Union[str, Path] = "logs") -> logging.Logger:
        """Root logger, attaching the handlers on first call"""
        if Logger._instance is None:
            Logger(log_dir)
        return Logger._instance.root

    @staticmethod
    def get_logger(name: str) -> logging.Logger:
        return logging.getLogger(name)

    @staticmethod
    def shutdown():
        """Detach and close the handlers so the next run can log elsewhere"""
        instance = Logger._instance
        if instance is None:
            return
        for handler in instance.handlers:
            instance.root.removeHandler(handler)
            handler.close()
        Logger._instance = None
