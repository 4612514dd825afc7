import logging
import sys
import os
from typing import Optional
from delayhjb.config.config import Config

class DelayHJBLogger:
    _instance: Optional['DelayHJBLogger'] = None
    _logger: Optional[logging.Logger] = None
    _is_setup = False

    def __new__(cls, *args, **kwargs):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if not self._is_setup:
            self._setup_logger()
            DelayHJBLogger._is_setup = True

    def _setup_logger(self):
        self._logger = logging.getLogger('delayhjb')
        log_level = getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO)
        self._logger.setLevel(log_level)
        self._logger.propagate = False

        for handler in list(self._logger.handlers):
            self._logger.removeHandler(handler)

        formatter = logging.Formatter(Config.LOG_FORMAT)

        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(log_level)
        console_handler.setFormatter(formatter)
        self._logger.addHandler(console_handler)

        if not Config.LOG_TO_FILE:
            return
        try:
            os.makedirs(Config.LOG_FOLDER, exist_ok=True)
            log_file_path = os.path.join(Config.LOG_FOLDER, 'delayhjb_audit.log')

            file_handler = logging.FileHandler(log_file_path, mode='a', encoding='utf-8')
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(formatter)
            self._logger.addHandler(file_handler)
        except Exception as e:
            self._logger.warning(f"Could not setup file logging: {e}")

    def get_logger(self, name: Optional[str] = None) -> logging.Logger:
        if name:
            if name.startswith('delayhjb.'):
                name = name[len('delayhjb.'):]
            return logging.getLogger(f'delayhjb.{name}')
        return self._logger

    def set_level(self, level: str) -> None:
        self._logger.setLevel(getattr(logging, level.upper(), logging.INFO))
        for handler in self._logger.handlers:
            if isinstance(handler, logging.StreamHandler) and not isinstance(handler, logging.FileHandler):
                handler.setLevel(self._logger.level)

    def log_run_event(self, event_type: str, details: str, severity: str = 'low'):
        logger = self.get_logger('runs')
        log_message = f"RUN EVENT [{event_type.upper()}]: {details}"
        if severity == 'high':
            logger.error(log_message)
        elif severity == 'medium':
            logger.warning(log_message)
        else:
            logger.info(log_message)

delayhjb_logger_instance = DelayHJBLogger()

def get_logger(name: Optional[str] = None) -> logging.Logger:
    return delayhjb_logger_instance.get_logger(name)

DelayHJBLogger = delayhjb_logger_instance
