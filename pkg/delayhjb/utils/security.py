import os
import re
from pathlib import Path
from typing import Optional, Tuple

from delayhjb.config.config import Config
from delayhjb.utils.logger import DelayHJBLogger, get_logger

logger = get_logger(__name__)
security_logger = DelayHJBLogger.get_logger('security')


class PathValidator:

    @staticmethod
    def sanitize_run_name(name: str) -> str:
        if not name:
            return "unnamed_run"
        name = os.path.basename(name)
        name = re.sub(r'[^A-Za-z0-9._-]', '_', name)
        max_len = getattr(Config, 'MAX_RUN_NAME_LENGTH', 100)
        if len(name) > max_len:
            name = name[:max_len]
        if not name.strip('.'):
            return "sanitized_run"
        return name

    @staticmethod
    def validate_run_name(name: str) -> Tuple[bool, str]:
        if not name:
            return False, "Run name cannot be empty"
        max_len = getattr(Config, 'MAX_RUN_NAME_LENGTH', 100)
        if len(name) > max_len:
            return False, f"Run name too long (max {max_len} characters)"
        if '..' in name or name.startswith('/') or '\\' in name:
            security_logger.warning(f"Path traversal attempt in run name: {name}")
            return False, "Run name contains traversal attempts"
        if re.search(r'[<>:"/|?*\x00]', name):
            return False, "Run name contains invalid characters"
        return True, "Valid"

    @staticmethod
    def is_safe_path(target_path: str, base_path: Optional[str] = None) -> bool:
        if not isinstance(target_path, str) or not target_path.strip():
            security_logger.warning("Empty or invalid path provided to is_safe_path")
            return False
        if '\x00' in target_path:
            security_logger.warning("Null byte in output path blocked")
            return False
        try:
            target = Path(os.path.abspath(target_path)).resolve()
            if base_path:
                base = Path(os.path.abspath(base_path)).resolve()
                if target != base and base not in target.parents:
                    security_logger.warning(f"Output path {target} escapes {base}")
                    return False
        except (OSError, ValueError) as e:
            security_logger.error(f"Failed to resolve path '{target_path}': {e}")
            return False
        return True

    @staticmethod
    def safe_join(base_path: str, *parts: str) -> str:
        """Join under base_path; raises ValueError when the result would leave it."""
        candidate = os.path.join(base_path, *parts)
        if not PathValidator.is_safe_path(candidate, base_path):
            raise ValueError(f"path {candidate!r} leaves the output folder {base_path!r}")
        return candidate
