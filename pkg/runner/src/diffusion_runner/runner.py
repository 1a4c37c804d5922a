"""Manifest execution: one result per entry, failures isolated per job."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .manifest import Manifest, ManifestEntry, load_manifest


@dataclass
class RunnerJobResult:
    job_id: str
    output_image_path: str
    model_id: str
    wall_time: float
    status: str  # "ok" | "failed"
    message: str = ""


def _run_entry(manifest: Manifest, entry: ManifestEntry, backend) -> RunnerJobResult:
    t0 = time.perf_counter()
    out_path = manifest.output_path(entry)
    try:
        cond = manifest.conditioning_path(entry)
        if not cond.is_file():
            raise FileNotFoundError(f"conditioning map missing: {cond}")
        backend.generate(
            cond, out_path, entry.prompt_text, entry.negative_prompt, entry.sampler_seed
        )
        if not out_path.is_file():
            raise RuntimeError(f"backend produced no file at {out_path}")
        status, message = "ok", ""
    except Exception as e:  # per-job isolation: record, keep going
        status, message = "failed", str(e)
    return RunnerJobResult(
        job_id=entry.job_id,
        output_image_path=str(out_path),
        model_id=backend.model_id,
        wall_time=time.perf_counter() - t0,
        status=status,
        message=message,
    )


def run_manifest(
    manifest_path: str | Path, backend, max_parallel: int = 1
) -> list[RunnerJobResult]:
    """Process every manifest entry; results come back sorted by job_id.

    A failing job yields a failed result and never aborts the run. The
    manifest itself and all pipeline inputs are read-only here.
    """
    manifest = load_manifest(manifest_path)
    if max_parallel > 1 and len(manifest.entries) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            results = list(
                pool.map(lambda e: _run_entry(manifest, e, backend), manifest.entries)
            )
    else:
        results = [_run_entry(manifest, e, backend) for e in manifest.entries]
    return sorted(results, key=lambda r: r.job_id)


def write_results(path: str | Path, results: list[RunnerJobResult]) -> None:
    doc = {
        "results": [
            {
                "job_id": r.job_id,
                "output_image_path": r.output_image_path,
                "model_id": r.model_id,
                "wall_time": r.wall_time,
                "status": r.status,
                **({"message": r.message} if r.message else {}),
            }
            for r in results
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2))
