import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, List, Optional

import numpy as np
import pandas as pd

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)


def _json_safe(value: Any) -> Any:
    """Replace NaN/inf with None and numpy scalars with Python ones"""
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class FileHandler:
    """Input checks and deterministic artifact writing for one output directory"""

    def __init__(self, output_dir: str, allowed_extensions: Optional[List[str]] = None, max_size_mb: int = 200):
        self.output_dir = Path(output_dir)
        self.allowed_extensions = [ext.lower() for ext in (allowed_extensions or ['.csv'])]
        self.max_size_bytes = max_size_mb * 1024 * 1024

        # Create output directory if it doesn't exist
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def validate_file(self, file_path: Path) -> bool:
        """Validate file extension and size"""
        file_path = Path(file_path)
        if not file_path.exists():
            logger.error(f"File does not exist: {file_path}")
            return False

        if file_path.suffix.lower() not in self.allowed_extensions:
            logger.error(f"File extension not allowed: {file_path.suffix}")
            return False

        file_size = file_path.stat().st_size
        if file_size > self.max_size_bytes:
            logger.error(f"File too large: {file_size} bytes (max: {self.max_size_bytes})")
            return False

        return True

    def require_input(self, file_path: Optional[Path], label: str) -> Path:
        """Return ``file_path`` if it is a readable input, else raise a config error naming ``label``"""
        if file_path is None or str(file_path).strip() == "":
            raise ConfigError(f"No {label} configured")
        file_path = Path(file_path)
        if not self.validate_file(file_path):
            raise ConfigError(f"{label} {file_path} is missing, too large, or not a CSV file")
        return file_path

    def get_file_hash(self, file_path: Path) -> str:
        """Generate SHA256 hash of file"""
        hash_sha256 = hashlib.sha256()
        with open(file_path, "rb") as f:
            for chunk in iter(lambda: f.read(4096), b""):
                hash_sha256.update(chunk)
        return hash_sha256.hexdigest()

    def write_json(self, filename: str, payload: Any) -> Path:
        """Write sorted-key, indented UTF-8 JSON with a trailing newline"""
        path = self.output_dir / filename
        text = json.dumps(_json_safe(payload), indent=2, sort_keys=True, ensure_ascii=False)
        path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"Wrote {path}")
        return path

    def write_csv(self, filename: str, frame: pd.DataFrame) -> Path:
        path = self.output_dir / filename
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n", float_format="%.12g")
        logger.info(f"Wrote {path}")
        return path

    def path(self, filename: str) -> Path:
        return self.output_dir / filename

    def get_file_info(self, file_path: Path) -> dict:
        """Name, size and sha256 of an input file, recorded next to the results it produced"""
        stat = Path(file_path).stat()
        return {
            'name': Path(file_path).name,
            'size': stat.st_size,
            'extension': Path(file_path).suffix,
            'sha256': self.get_file_hash(file_path)
        }
