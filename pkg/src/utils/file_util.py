"""
Stage directories, content hashes and manifests.

Every pipeline stage writes into `<output_root>/<stage>/` and records a
`manifest.json` with the SHA-256 of each output and the manifest hashes of the
stages it read from. A downstream stage compares those hashes before running.
"""
import hashlib
import json
import os
from collections.abc import Iterable, Mapping
from typing import Any

from src.errors import MissingArtifactError

MANIFEST_FILE: str = "manifest.json"
_CHUNK: int = 1 << 20


def sha256_file(file: str) -> str:
    digest = hashlib.sha256()
    with open(file, "rb") as f:
        for chunk in iter(lambda: f.read(_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def get_stage_directory(output_root: str, stage: str) -> str:
    return os.path.join(output_root, stage)


def create_stage_directory(output_root: str, stage: str) -> str:
    """
    Create `<output_root>/<stage>` and return its path.

    Parameters:
        output_root (str): Base output directory.
        stage (str): Stage name, e.g. "preprocess".

    Returns:
        str: The created directory.
    """
    path = get_stage_directory(output_root, stage)
    os.makedirs(path, exist_ok=True)
    return path


def require_files(directory: str, names: Iterable[str], stage: str) -> list[str]:
    """Paths of `names` under `directory`; raise naming every missing one."""
    paths = [os.path.join(directory, name) for name in names]
    missing = [path for path in paths if not os.path.exists(path)]
    if missing:
        raise MissingArtifactError(f"stage '{stage}' output missing: {', '.join(missing)}")
    return paths


def write_manifest(
    stage_dir: str,
    stage: str,
    outputs: Iterable[str],
    upstream: Mapping[str, str] | None = None,
    extra: Mapping[str, Any] | None = None,
) -> str:
    """
    Write the stage manifest.

    Parameters:
        stage_dir (str): Directory holding the outputs.
        stage (str): Stage name.
        outputs (Iterable[str]): Output file names relative to `stage_dir`.
        upstream (Mapping[str, str]): Upstream stage name to its manifest hash.
        extra (Mapping[str, Any]): Additional JSON-serializable fields.

    Returns:
        str: The manifest path.
    """
    manifest = {
        "stage": stage,
        "outputs": {name: sha256_file(os.path.join(stage_dir, name)) for name in sorted(outputs)},
        "upstream": dict(sorted((upstream or {}).items())),
    }
    if extra:
        manifest["extra"] = dict(extra)
    file = os.path.join(stage_dir, MANIFEST_FILE)
    with open(file, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return file


def read_manifest(stage_dir: str) -> dict[str, Any]:
    file = os.path.join(stage_dir, MANIFEST_FILE)
    if not os.path.exists(file):
        raise MissingArtifactError(f"manifest missing: {file}")
    with open(file, "r", encoding="utf-8") as f:
        return json.load(f)


def manifest_hash(stage_dir: str) -> str:
    """Hash of the manifest itself, recorded by downstream stages."""
    file = os.path.join(stage_dir, MANIFEST_FILE)
    if not os.path.exists(file):
        raise MissingArtifactError(f"manifest missing: {file}")
    return sha256_file(file)


def verify_outputs(stage_dir: str) -> None:
    """Raise when a recorded output is missing or its content changed."""
    manifest = read_manifest(stage_dir)
    for name, expected in manifest["outputs"].items():
        path = os.path.join(stage_dir, name)
        if not os.path.exists(path):
            raise MissingArtifactError(f"output missing: {path}")
        if sha256_file(path) != expected:
            raise MissingArtifactError(f"output changed since manifest was written: {path}")


def verify_upstream(stage_dir: str, upstream_dirs: Mapping[str, str]) -> None:
    """
    Compare recorded upstream manifest hashes with the current ones.

    Raises:
        MissingArtifactError: When an upstream manifest is missing or its hash differs.
    """
    recorded = read_manifest(stage_dir)["upstream"]
    for stage, directory in upstream_dirs.items():
        current = manifest_hash(directory)
        if recorded.get(stage) != current:
            raise MissingArtifactError(
                f"upstream '{stage}' changed since {os.path.basename(stage_dir)} ran "
                f"(recorded {recorded.get(stage)}, current {current})"
            )
