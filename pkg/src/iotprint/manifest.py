"""Key=value manifests with file hashes and tamper-evident parent chaining.

Every pipeline stage writes a manifest describing its outputs.  A manifest
records plain string entries (seed, scheme, device order, hyperparameters),
a sha256 for each output file, and the sha256 of the previous stage's
manifest, so any modification of an intermediate file is detected by the
next stage.  Manifests carry no timestamps: a rerun with the same inputs
and seed produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

from .errors import IoFailure, ManifestMismatch

FILE_PREFIX = "file:"
PARENT_NAME_KEY = "parent.manifest"
PARENT_HASH_KEY = "parent.manifest.sha256"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
    except OSError as exc:
        raise IoFailure(f"cannot hash {path}: {exc}") from exc
    return digest.hexdigest()


def write_manifest(path, entries: dict[str, str], files: list[Path] | None = None,
                   parent: Path | None = None) -> Path:
    """Write a manifest at `path`; `files` are hashed relative to its directory."""
    path = Path(path)
    lines = []
    for key, value in entries.items():
        value = str(value)
        if "\n" in key or "\n" in value or "=" in key:
            raise ValueError(f"manifest entry not representable: {key!r}={value!r}")
        lines.append(f"{key}={value}")
    for file_path in files or []:
        rel = Path(file_path).relative_to(path.parent)
        lines.append(f"{FILE_PREFIX}{rel.as_posix()}={sha256_file(file_path)}")
    if parent is not None:
        parent = Path(parent)
        rel = Path(os.path.relpath(parent, path.parent)).as_posix()
        lines.append(f"{PARENT_NAME_KEY}={rel}")
        lines.append(f"{PARENT_HASH_KEY}={sha256_file(parent)}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc
    return path


def read_manifest(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ManifestMismatch(f"{path}:{lineno}: not a key=value line: {line!r}")
        key, _, value = line.partition("=")
        entries[key] = value
    return entries


def file_hashes(entries: dict[str, str]) -> dict[str, str]:
    """The file-hash subset of a manifest, keyed by relative path."""
    return {key[len(FILE_PREFIX):]: value
            for key, value in entries.items() if key.startswith(FILE_PREFIX)}


def verify_manifest(path, check_parent: bool = True) -> dict[str, str]:
    """Recompute every recorded hash; raise ManifestMismatch on any difference."""
    path = Path(path)
    entries = read_manifest(path)
    for rel, recorded in file_hashes(entries).items():
        target = path.parent / rel
        if not target.exists():
            raise ManifestMismatch(f"{path}: missing file {rel}")
        actual = sha256_file(target)
        if actual != recorded:
            raise ManifestMismatch(
                f"{path}: hash mismatch for {rel}: recorded {recorded}, actual {actual}")
    if check_parent and PARENT_HASH_KEY in entries:
        parent = path.parent / entries[PARENT_NAME_KEY]
        if not parent.exists():
            raise ManifestMismatch(f"{path}: missing parent manifest {parent.name}")
        actual = sha256_file(parent)
        if actual != entries[PARENT_HASH_KEY]:
            raise ManifestMismatch(
                f"{path}: parent manifest {parent.name} was modified "
                f"(recorded {entries[PARENT_HASH_KEY]}, actual {actual})")
    return entries
