"""Run manifests: resolved config, seed, and output digests.

A manifest makes a batch run reproducible from one JSON file: it
records the command, every config value after defaults are applied,
the seed pair, and a sha256 per output file.  The config hash that
stamps CSV headers excludes location and scheduling keys (output
directory, thread count, figure toggle), which change where and how
fast outputs appear but never their bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import OutputError, ValidationError
from .rng import RngSeed

_VOLATILE_KEYS = ("out_dir", "threads", "figures")


def config_hash(config: dict) -> str:
    """Short stable digest of the run-defining part of a config."""
    trimmed = {k: v for k, v in config.items() if k not in _VOLATILE_KEYS}
    blob = json.dumps(trimmed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class ExperimentManifest:
    command: str
    version: str
    seed: RngSeed
    config: dict
    started: str
    finished: str
    outputs: dict = field(default_factory=dict)  # file name -> sha256

    @property
    def config_digest(self) -> str:
        return config_hash(self.config)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "seed": {"seed": self.seed.seed, "stream": self.seed.stream},
            "config": self.config,
            "config_hash": self.config_digest,
            "started": self.started,
            "finished": self.finished,
            "outputs": dict(sorted(self.outputs.items())),
        }


def now_utc() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, manifest: ExperimentManifest) -> Path:
    path = Path(out_dir) / "manifest.json"
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise OutputError(f"cannot write manifest {path}: {e}") from e
    return path


def load_manifest(path) -> ExperimentManifest:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise OutputError(f"cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"manifest {path} is not valid JSON: {e}") from e
    try:
        return ExperimentManifest(
            command=raw["command"],
            version=raw["version"],
            seed=RngSeed(raw["seed"]["seed"], raw["seed"]["stream"]),
            config=raw["config"],
            started=raw["started"],
            finished=raw["finished"],
            outputs=raw["outputs"],
        )
    except KeyError as e:
        raise ValidationError(f"manifest {path} is missing field {e}") from e
