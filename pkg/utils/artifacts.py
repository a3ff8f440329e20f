"""
Đọc/ghi artifact (CSV, JSON, manifest) có nhúng config hash.

CSV: dòng đầu `# config_hash=<hex>`; JSON: trường `config_hash`. Đọc artifact
với hash khác hash đang chạy là lỗi, không tái sử dụng âm thầm.
"""

import hashlib
import json
import platform
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import loguru
import numpy as np
import pandas as pd
import scipy

from utils.errors import EXIT_ARTIFACT, EXIT_IO, PipelineError

HASH_PREFIX = "# config_hash="


class ArtifactMismatchError(PipelineError):
    """Artifact được tạo với config khác config hiện tại."""

    code = "artifact_mismatch"
    exit_code = EXIT_ARTIFACT


class ArtifactIOError(PipelineError):
    """Không đọc được artifact."""

    code = "artifact_io"
    exit_code = EXIT_IO


def config_hash(payload: Dict[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_fingerprint(path: Optional[str]) -> Optional[str]:
    if not path or not Path(path).exists():
        return None
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _check_hash(path: str, found: Optional[str], expected: Optional[str]) -> None:
    if expected is not None and found != expected:
        raise ArtifactMismatchError(f"{path}: config_hash {found} khác config hiện tại {expected}")


def write_csv(frame: pd.DataFrame, path: str, config_hash: Optional[str] = None) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        if config_hash:
            f.write(f"{HASH_PREFIX}{config_hash}\n")
        frame.to_csv(f, index=False, float_format="%.10g", lineterminator="\n")
    return path


def read_csv(path: str, expected_hash: Optional[str] = None) -> pd.DataFrame:
    if not Path(path).exists():
        raise ArtifactIOError(f"Không tìm thấy artifact: {path}")
    with open(path) as f:
        first = f.readline().strip()
    found = first[len(HASH_PREFIX):] if first.startswith(HASH_PREFIX) else None
    _check_hash(path, found, expected_hash)
    return pd.read_csv(path, comment="#")


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    return value


def write_json(payload: Dict[str, Any], path: str, config_hash: Optional[str] = None) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    document = _to_jsonable(dict(payload))
    if config_hash:
        document["config_hash"] = config_hash
    with open(path, "w") as f:
        json.dump(document, f, indent=1, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: str, expected_hash: Optional[str] = None) -> Dict[str, Any]:
    if not Path(path).exists():
        raise ArtifactIOError(f"Không tìm thấy artifact: {path}")
    with open(path) as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as ex:
            raise ArtifactIOError(f"{path}: JSON không hợp lệ ({ex})") from ex
    _check_hash(path, document.get("config_hash"), expected_hash)
    return document


def write_manifest(
    out_dir: str,
    command: str,
    config: Dict[str, Any],
    config_hash_value: str,
    seeds: Dict[str, int],
    data_files: Iterable[Optional[str]],
    artifacts: Iterable[str],
) -> str:
    """Ghi manifest_<command>.json mô tả một lần chạy lệnh."""
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "data_fingerprints": {str(p): file_fingerprint(p) for p in data_files if p},
        "artifacts": sorted(str(a) for a in artifacts),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "scipy": scipy.__version__,
            "loguru": loguru.__version__,
        },
    }
    return write_json(manifest, str(Path(out_dir) / f"manifest_{command}.json"), config_hash=config_hash_value)
