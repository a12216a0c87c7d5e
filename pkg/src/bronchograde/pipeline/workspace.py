"""Workspace layout, content hashing and per-stage manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable

from .. import __version__

LAYOUT = ("data", "augmented", "generated", "models", "eval", "interpret", "report", "manifests")


class MissingInput(RuntimeError):
    """A stage input artifact is absent; the CLI maps it to exit status 2."""

    def __init__(self, stage: str, path: Path):
        super().__init__(f"{stage}: missing input artifact {path} (run the producing stage first)")
        self.path = path


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def rel(self, p: Path) -> str:
        return Path(p).resolve().relative_to(self.root.resolve()).as_posix()

    def require(self, stage: str, *rels: str) -> None:
        for r in rels:
            if not self.path(r).exists():
                raise MissingInput(stage, self.path(r))

    def manifest_path(self, stage: str) -> Path:
        return self.path("manifests", f"{stage}.json")

    def read_manifest(self, stage: str) -> dict | None:
        p = self.manifest_path(stage)
        return json.loads(p.read_text()) if p.is_file() else None

    def hash_tree(self, rels: Iterable[str]) -> dict[str, str]:
        """sha256 of every file under the given workspace-relative files or directories."""
        out: dict[str, str] = {}
        for r in rels:
            p = self.path(r)
            files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
            for f in files:
                if f.is_file():
                    out[self.rel(f)] = file_sha256(f)
        return dict(sorted(out.items()))

    def write_manifest(
        self, stage: str, inputs: Iterable[str], outputs: Iterable[str], config_hash: str, seed: int, extra=None
    ) -> dict:
        m = {
            "stage": stage,
            "tool_version": __version__,
            "config_hash": config_hash,
            "seed": seed,
            "inputs": self.hash_tree(inputs),
            "outputs": self.hash_tree(outputs),
        }
        if extra:
            m["extra"] = extra
        p = self.manifest_path(stage)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(m, indent=1, sort_keys=True) + "\n")
        return m
