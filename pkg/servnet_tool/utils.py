import json
import logging
import os
from pathlib import Path
from typing import Any, Optional, Union

DEFAULT_OUT_DIR = "data/runs"
OUT_DIR_ENV = "SERVNET_OUT_DIR"
LOG_LEVEL_ENV = "SERVNET_LOG_LEVEL"


def resolve_out_dir(out: Optional[str]) -> Path:
    """--out wins, then SERVNET_OUT_DIR, then data/runs."""
    return Path(out or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)


def configure_logging(level: Optional[str] = None) -> None:
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    logging.basicConfig(level=getattr(logging, name, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def save_json(data: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # Write to a temp file first, then move into place
    temp_file = path.with_suffix(path.suffix + ".tmp")
    with open(temp_file, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    temp_file.replace(path)
    return path
