import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping

import pandas as pd


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config: Mapping[str, Any]) -> str:
    """Short sha256 of the canonical JSON form of a config dict."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()[:16]


def metadata_line(config_hash_value: str, seeds: Mapping[str, int]) -> str:
    seed_text = " ".join(f"{k}={seeds[k]}" for k in sorted(seeds))
    return f"# config_hash={config_hash_value} seeds: {seed_text}"


def write_json(path, data: Any) -> Path:
    """Write `data` as indented JSON with a trailing newline, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def write_jsonl(path, records: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, allow_nan=False) + "\n")
    return path


def write_commented_csv(path, frame: pd.DataFrame, header: str) -> Path:
    """CSV preceded by one `#` metadata line; read back with ``pd.read_csv(path, comment="#")``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header.rstrip("\n") + "\n")
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
    return path
