"""Reader for the job-manifest wire format exported by the quadprior pipeline.

Schema (version 1):
    {"version": 1, "master_seed": int, "entries": [
        {"job_id": str, "conditioning_map_path": str, "prompt_text": str,
         "negative_prompt": str, "sampler_seed": int, "output_path": str,
         "annotation_ref": object}, ...]}
Paths are relative to the manifest's directory. This module only reads;
the manifest and every primary-pipeline artifact stay untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

SUPPORTED_VERSION = 1

_REQUIRED_FIELDS = (
    "job_id",
    "conditioning_map_path",
    "prompt_text",
    "negative_prompt",
    "sampler_seed",
    "output_path",
    "annotation_ref",
)


class ManifestError(ValueError):
    """The manifest file does not match the published schema."""


@dataclass(frozen=True)
class ManifestEntry:
    job_id: str
    conditioning_map_path: str
    prompt_text: str
    negative_prompt: str
    sampler_seed: int
    output_path: str
    annotation_ref: object


@dataclass(frozen=True)
class Manifest:
    version: int
    master_seed: int
    entries: tuple[ManifestEntry, ...]
    base_dir: Path

    def conditioning_path(self, entry: ManifestEntry) -> Path:
        return self.base_dir / entry.conditioning_map_path

    def output_path(self, entry: ManifestEntry) -> Path:
        return self.base_dir / entry.output_path


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: not valid JSON: {e}")

    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    if doc.get("version") != SUPPORTED_VERSION:
        raise ManifestError(
            f"{path}: unsupported manifest version {doc.get('version')!r} "
            f"(this runner speaks version {SUPPORTED_VERSION})"
        )
    if not isinstance(doc.get("entries"), list):
        raise ManifestError(f"{path}: 'entries' must be a list")

    entries = []
    for i, raw in enumerate(doc["entries"]):
        missing = [f for f in _REQUIRED_FIELDS if f not in raw]
        if missing:
            raise ManifestError(f"{path}: entry {i} is missing fields {missing}")
        entries.append(
            ManifestEntry(
                job_id=str(raw["job_id"]),
                conditioning_map_path=str(raw["conditioning_map_path"]),
                prompt_text=str(raw["prompt_text"]),
                negative_prompt=str(raw["negative_prompt"]),
                sampler_seed=int(raw["sampler_seed"]),
                output_path=str(raw["output_path"]),
                annotation_ref=raw["annotation_ref"],
            )
        )
    ids = [e.job_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: job_ids are not unique")
    return Manifest(
        version=int(doc["version"]),
        master_seed=int(doc.get("master_seed", 0)),
        entries=tuple(entries),
        base_dir=path.parent,
    )
