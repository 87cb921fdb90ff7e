"""Result manifests: config hash, code version and output checksums."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def code_version() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        from .. import __version__

        return __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ResultManifest:
    kind: str
    config: dict
    config_hash: str
    code_version: str
    files: dict = field(default_factory=dict)  # relative path -> sha256
    wall_clock_s: float = 0.0
    workers: int = 1
    cache: dict = field(default_factory=dict)

    def add_file(self, out_dir, path):
        rel = str(Path(path).relative_to(out_dir))
        self.files[rel] = sha256_file(path)

    def write(self, out_dir) -> Path:
        p = Path(out_dir) / MANIFEST_NAME
        d = asdict(self)
        d["files"] = dict(sorted(self.files.items()))
        p.write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
        return p

    @classmethod
    def read(cls, out_dir) -> "ResultManifest":
        return cls(**json.loads((Path(out_dir) / MANIFEST_NAME).read_text()))

    def verify(self, out_dir) -> list:
        """Relative paths whose current checksum differs from the recorded one."""
        bad = []
        for rel, digest in self.files.items():
            p = Path(out_dir) / rel
            if not p.exists() or sha256_file(p) != digest:
                bad.append(rel)
        return bad
