"""Config-file reading and digest helpers."""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def load_config(path: str | Path) -> dict:
    """Read a ``.toml`` or ``.json`` config file into a dict."""
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def data_path(name: str) -> Path:
    """Path of a file bundled in the package's ``data`` directory."""
    return Path(str(resources.files("dxcoverage") / "data" / name))


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
