"""Pipeline configuration: one JSON file, every key mirrored by a CLI flag.

Unknown keys, type errors and unresolvable paths are collected and reported
together rather than one at a time. Relative paths are resolved against the
config file's directory. Flag overrides win over file values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigFileError(ValueError):
    """One message listing every problem found in the config."""


@dataclass
class PathSettings:
    out_dir: Path = Path("out")
    rig: Path | None = None  # None -> packaged fixture rig
    camera: Path | None = None  # None -> packaged fixture camera
    backgrounds: Path | None = None  # None -> synthesized backgrounds
    model: Path | None = None  # None -> train from scratch
    train_poses: Path | None = None  # None -> FK-generated training set


@dataclass
class TrainSettings:
    learning_rate: float = 0.001
    w1: float = 0.005
    w2: float = 0.01
    epochs: int = 250
    batch_size: int = 128
    n_poses: int = 1000


@dataclass
class SampleSettings:
    count: int = 10
    variance_scale: float = 2.0
    ranges: str = "default"  # "default" or a range-table JSON path
    per_component: bool = False


@dataclass
class AnnotateSettings:
    species: str = "zebra"


@dataclass
class EvalSettings:
    alpha: float = 0.05
    normalizer: str = "bbox-max"


@dataclass
class TsneSettings:
    perplexity: float = 30.0
    iterations: int = 1000


@dataclass
class PipelineConfig:
    master_seed: int
    paths: PathSettings = field(default_factory=PathSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    sample: SampleSettings = field(default_factory=SampleSettings)
    annotate: AnnotateSettings = field(default_factory=AnnotateSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    tsne: TsneSettings = field(default_factory=TsneSettings)


_GROUPS = {
    "paths": PathSettings,
    "train": TrainSettings,
    "sample": SampleSettings,
    "annotate": AnnotateSettings,
    "eval": EvalSettings,
    "tsne": TsneSettings,
}

_PATH_FIELDS = ("rig", "camera", "backgrounds", "model", "train_poses")


def _coerce(value, target_type, where: str, problems: list[str]):
    if target_type is bool:
        if isinstance(value, bool):
            return value
        problems.append(f"{where}: expected a boolean, got {value!r}")
        return None
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            problems.append(f"{where}: expected an integer, got {value!r}")
            return None
        return int(value)
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{where}: expected a number, got {value!r}")
            return None
        return float(value)
    return value


def parse_config(
    path: str | Path | None = None, overrides: dict[str, object] | None = None
) -> PipelineConfig:
    """Build a validated PipelineConfig from a JSON file plus flag overrides.

    ``overrides`` uses dotted keys ("sample.count", "master_seed"); a None
    override means "not given on the command line".
    """
    problems: list[str] = []
    doc: dict = {}
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigFileError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigFileError(f"{path}: not valid JSON: {e}")
        if not isinstance(doc, dict):
            raise ConfigFileError(f"{path}: top level must be an object")
        base_dir = path.parent

    known_top = set(_GROUPS) | {"master_seed"}
    for key in doc:
        if key not in known_top:
            problems.append(f"unknown key {key!r} (expected one of {sorted(known_top)})")

    merged: dict[str, dict] = {g: dict() for g in _GROUPS}
    for group, cls in _GROUPS.items():
        section = doc.get(group, {})
        if not isinstance(section, dict):
            problems.append(f"{group}: expected an object")
            continue
        valid = set(cls.__dataclass_fields__)
        for key, value in section.items():
            if key not in valid:
                problems.append(f"{group}.{key}: unknown key (expected one of {sorted(valid)})")
                continue
            merged[group][key] = value

    master_seed = doc.get("master_seed")

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "master_seed":
            master_seed = value
        else:
            group, _, key = dotted.partition(".")
            if group not in _GROUPS or key not in _GROUPS[group].__dataclass_fields__:
                raise ValueError(f"internal: unknown override {dotted!r}")
            merged[group][key] = value

    if master_seed is None:
        problems.append("master_seed is required (file key or --master-seed)")
    else:
        master_seed = _coerce(master_seed, int, "master_seed", problems)

    groups = {}
    for group, cls in _GROUPS.items():
        kwargs = {}
        for key, fdef in cls.__dataclass_fields__.items():
            if key not in merged[group]:
                continue
            value = merged[group][key]
            if group == "paths":
                if key in _PATH_FIELDS and value is None:
                    continue
                resolved = Path(value)
                if not resolved.is_absolute():
                    resolved = base_dir / resolved
                kwargs[key] = resolved
            else:
                target = type(getattr(cls(), key))
                coerced = _coerce(value, target, f"{group}.{key}", problems)
                if coerced is not None:
                    kwargs[key] = coerced
        try:
            groups[group] = cls(**kwargs)
        except TypeError as e:
            problems.append(f"{group}: {e}")

    paths: PathSettings = groups.get("paths", PathSettings())
    for key in _PATH_FIELDS:
        p = getattr(paths, key, None)
        if p is not None and not Path(p).exists():
            problems.append(f"paths.{key}: {p} does not exist")
    sample: SampleSettings = groups.get("sample", SampleSettings())
    if sample.ranges != "default":
        ranges_path = Path(sample.ranges)
        if not ranges_path.is_absolute():
            ranges_path = base_dir / ranges_path
            sample.ranges = str(ranges_path)
        if not ranges_path.exists():
            problems.append(f"sample.ranges: {ranges_path} does not exist")

    if problems:
        raise ConfigFileError("invalid configuration:\n  " + "\n  ".join(problems))
    return PipelineConfig(master_seed=master_seed, **groups)
