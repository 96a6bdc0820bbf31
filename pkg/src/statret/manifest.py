"""Run manifests: enough provenance to replay any artifact-producing command.

A manifest records the resolved arguments, the digests of every input and
output, the seed, and wall time.  Timings make manifests non-reproducible
byte for byte; replays are compared on the primary outputs instead.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

MANIFEST_FORMAT_VERSION = 1


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ManifestWriter:
    """Collects inputs/outputs during one command, then writes the manifest."""

    def __init__(self, command: str, resolved_args: dict, seed=None):
        self.command = command
        self.resolved_args = resolved_args
        self.seed = seed
        self.inputs: dict = {}
        self.outputs: list = []
        self._start = time.monotonic()

    def add_input(self, label: str, path) -> None:
        self.inputs[label] = {"path": str(path), "sha256": file_sha256(path)}

    def add_output(self, path, role: str) -> None:
        self.outputs.append({
            "path": str(path),
            "role": role,
            "sha256": file_sha256(path),
        })

    def write(self, path) -> None:
        from . import __version__

        payload = {
            "format_version": MANIFEST_FORMAT_VERSION,
            "kind": "run-manifest",
            "tool": "statret",
            "tool_version": __version__,
            "command": self.command,
            "resolved_args": _plain(self.resolved_args),
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs, key=lambda o: o["path"]),
            "elapsed_seconds": round(time.monotonic() - self._start, 3),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")


def manifest_path_for(artifact_path) -> Path:
    """Manifest sits next to the artifact it describes."""
    artifact_path = Path(artifact_path)
    return artifact_path.with_name(artifact_path.name + ".manifest.json")


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("kind") != "run-manifest":
        raise ValueError(f"{path}: not a run manifest")
    if payload.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported manifest version")
    return payload


def _plain(value):
    """JSON-safe copy (paths become strings)."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value
