"""Dataset manifests: JSON provenance for every pipeline product.

A manifest records the phantom recipe, wavelet and solver parameters,
acquisition geometry, perturbation/noise/subsampling specs, seeds, and
references (path + SHA-256) to every tensor it produced.  Re-running a
command against the same manifest and seed regenerates byte-identical
tensors; loading verifies the checksums so tampered or stale files are
caught immediately.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

SCHEMA_VERSION = 1


class ManifestError(Exception):
    pass


def file_checksum(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class DatasetManifest:
    """Mutable provenance document bound to a directory."""

    def __init__(self, directory, data: dict | None = None):
        self.directory = os.path.abspath(os.fspath(directory))
        self.data = data or {"schema_version": SCHEMA_VERSION, "files": {}}
        if self.data.get("schema_version") != SCHEMA_VERSION:
            raise ManifestError(
                f"unsupported manifest schema {self.data.get('schema_version')}"
            )
        self.data.setdefault("files", {})

    # -- section accessors ------------------------------------------------
    def get(self, key, default=None):
        return self.data.get(key, default)

    def set(self, key, value):
        self.data[key] = value

    # -- file registry -----------------------------------------------------
    def register_file(self, name: str, path) -> None:
        """Record a product file (path stored relative to the manifest)."""
        rel = os.path.relpath(os.path.abspath(os.fspath(path)), self.directory)
        self.data["files"][name] = {
            "path": rel.replace(os.sep, "/"),
            "sha256": file_checksum(path),
        }

    def path_of(self, name: str) -> str:
        try:
            entry = self.data["files"][name]
        except KeyError:
            raise ManifestError(f"manifest has no file entry {name!r}") from None
        return os.path.normpath(os.path.join(self.directory, entry["path"]))

    def has_file(self, name: str) -> bool:
        return name in self.data["files"]

    def verify(self) -> None:
        """Every referenced file must exist and hash-match."""
        for name, entry in self.data["files"].items():
            path = os.path.normpath(os.path.join(self.directory, entry["path"]))
            if not os.path.exists(path):
                raise ManifestError(f"file {name!r} missing: {path}")
            actual = file_checksum(path)
            if actual != entry["sha256"]:
                raise ManifestError(
                    f"checksum mismatch for {name!r} ({path}): manifest "
                    f"{entry['sha256'][:12]}..., file {actual[:12]}..."
                )

    # -- persistence ---------------------------------------------------------
    @property
    def path(self) -> str:
        return os.path.join(self.directory, "manifest.json")

    def save(self) -> str:
        os.makedirs(self.directory, exist_ok=True)
        payload = json.dumps(self.data, indent=2, sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".manifest-")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(payload)
                fh.write("\n")
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return self.path

    @classmethod
    def load(cls, path, verify: bool = True) -> "DatasetManifest":
        path = os.fspath(path)
        if os.path.isdir(path):
            path = os.path.join(path, "manifest.json")
        with open(path) as fh:
            data = json.load(fh)
        manifest = cls(os.path.dirname(os.path.abspath(path)), data)
        if verify:
            manifest.verify()
        return manifest
