"""Run manifests: every command records its inputs, outputs and their hashes.

``verify`` recomputes the sha256 of each listed artifact, so any byte flipped
after the run is caught.  Timestamps honor SOURCE_DATE_EPOCH for reproducible
reruns; with it set, two identical runs produce byte-identical manifests.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["RunManifest", "sha256_file", "verify_manifest", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.json"


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    sde = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(sde) if sde else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


@dataclass
class RunManifest:
    command: str
    seed: int | None
    config_path: str | None
    config_hash: str | None
    artifacts: dict = field(default_factory=dict)  # name -> relative path
    hashes: dict = field(default_factory=dict)  # relative path -> sha256
    started: str = field(default_factory=_now)
    finished: str = ""

    def add_artifact(self, name: str, path: Path, run_dir: Path) -> None:
        rel = str(Path(path).relative_to(run_dir))
        self.artifacts[name] = rel
        self.hashes[rel] = sha256_file(path)

    def save(self, run_dir: str | Path) -> Path:
        self.finished = _now()
        doc = {
            "command": self.command,
            "seed": self.seed,
            "config_path": self.config_path,
            "config_hash": self.config_hash,
            "artifacts": self.artifacts,
            "hashes": self.hashes,
            "timestamps": {"started": self.started, "finished": self.finished},
        }
        out = Path(run_dir) / MANIFEST_NAME
        with open(out, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        return out


def verify_manifest(run_dir: str | Path) -> list[str]:
    """Recompute artifact hashes; returns a list of problems (empty means intact)."""
    run_dir = Path(run_dir)
    problems = []
    try:
        with open(run_dir / MANIFEST_NAME) as f:
            doc = json.load(f)
    except FileNotFoundError:
        return [f"missing {MANIFEST_NAME} in {run_dir}"]
    except json.JSONDecodeError as e:
        return [f"unreadable manifest: {e}"]
    for rel, expected in doc.get("hashes", {}).items():
        p = run_dir / rel
        if not p.exists():
            problems.append(f"missing artifact {rel}")
        elif sha256_file(p) != expected:
            problems.append(f"hash mismatch for {rel}")
    return problems
