import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import depthsr


def setup_logging(path: Optional[Path] = None, filemode: str = "w", level: int = logging.INFO) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(path, mode=filemode))
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


class RecordLog:
    """Append-only JSON-lines log, one record per epoch."""

    def __init__(self, path: Optional[Path] = None, append: bool = True):
        self.path: Optional[Path] = Path(path) if path is not None else None
        self.records: List[Dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not append:
                self.path.write_text("")

    def append(self, record: Dict[str, Any]) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    @staticmethod
    def read(path: Path) -> List[Dict[str, Any]]:
        with open(path) as f:
            return [json.loads(line) for line in f if line.strip()]


def write_run_manifest(directory: Path, command: str, config_digest: str, seed: Optional[int], extra: Optional[Dict[str, Any]] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_sha256": config_digest,
        "seed": seed,
        "version": depthsr.__version__,
    }
    manifest.update(extra or {})
    path = directory / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path
