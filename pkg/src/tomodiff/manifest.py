"""Run manifests: resolved config, seed, versions, and input checksums.

Manifests are deterministic (sorted keys, no timestamps) so a stage re-run
from its manifest produces identical outputs byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    path: str | Path,
    *,
    command: str,
    config: dict,
    inputs: dict[str, str | Path],
    outputs: list[str],
    extra: dict | None = None,
) -> dict:
    """Write the JSON manifest beside a stage's outputs and return it."""
    from . import __version__

    manifest = {
        "tool": "tomodiff",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {
            name: {"path": str(p), "sha256": file_sha256(p)} for name, p in inputs.items()
        },
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
