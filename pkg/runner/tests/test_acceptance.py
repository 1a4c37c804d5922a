"""Acceptance: the stub-backed runner over real-shaped manifests."""

import json
from contextlib import contextmanager
from pathlib import Path

from diffusion_runner.backends import StubBackend
from diffusion_runner.runner import run_manifest

from test_runner import make_manifest


@contextmanager
def criterion(name):
    try:
        yield
    except Exception:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


def test_five_entry_manifest_all_ok(tmp_path):
    with criterion("Stub backend: 5-entry manifest -> 5 ok results with existing files"):
        path = make_manifest(tmp_path / "jobs", 5)
        results = run_manifest(path, StubBackend())
        assert len(results) == 5
        assert all(r.status == "ok" for r in results)
        assert all(Path(r.output_image_path).is_file() for r in results)


def test_corrupted_entry_fails_alone(tmp_path):
    with criterion("Corrupted entry yields exactly one failed status; run continues"):
        path = make_manifest(tmp_path / "jobs", 5)
        # Corrupt one entry: point it at a conditioning file that is not there.
        doc = json.loads(path.read_text())
        doc["entries"][2]["conditioning_map_path"] = "cond_gone.png"
        path.write_text(json.dumps(doc))
        results = run_manifest(path, StubBackend())
        assert len(results) == 5
        assert sum(1 for r in results if r.status == "failed") == 1
        assert [r.job_id for r in results if r.status == "failed"] == ["job_0002"]
        assert all(Path(r.output_image_path).is_file()
                   for r in results if r.status == "ok")
