"""Run manifests: everything needed to redo a CLI run bit for bit.

A manifest records the command, its options, the fully resolved config
(defaults included), the seeds, input and output sha256 digests and library
versions. It holds no timestamps or output paths, so two identical runs
produce identical manifests.
"""

from __future__ import annotations

import hashlib
import json
import platform
from importlib import metadata
from pathlib import Path

from .gridio import atomic_write_text

MANIFEST_NAME = "manifest.json"
_PACKAGES = ("numpy", "scipy", "pydantic", "PyYAML", "Pillow", "matplotlib")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    from . import __version__

    out = {"python": platform.python_version(), "swicam": __version__}
    for name in _PACKAGES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = None
    return out


def seeds_of(config: dict) -> dict:
    """Every ``seed`` entry of a config dump, keyed by its section."""
    return {k: v["seed"] for k, v in config.items() if isinstance(v, dict) and "seed" in v}


def hash_tree(root) -> dict:
    """sha256 of every file under ``root`` except manifests.

    Subdirectories holding their own manifest belong to another run and
    are skipped.
    """
    root = Path(root)
    out = {}
    for p in sorted(root.iterdir()):
        if p.is_dir():
            if not (p / MANIFEST_NAME).exists():
                out.update({f"{p.name}/{k}": v for k, v in hash_tree(p).items()})
        elif p.is_file() and p.name != MANIFEST_NAME and not p.name.endswith(".tmp"):
            out[p.name] = sha256_file(p)
    return out


def build_manifest(command: str, options: dict, inputs: dict, config: dict, out_dir) -> dict:
    return {
        "tool": "swicam",
        "command": command,
        "options": options,
        "inputs": {k: {"path": str(Path(p).resolve()), "sha256": sha256_file(p)} for k, p in inputs.items()},
        "config": config,
        "seeds": seeds_of(config),
        "versions": versions(),
        "outputs": hash_tree(out_dir),
    }


def write_manifest(manifest: dict, out_dir) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path) as f:
        return json.load(f)
