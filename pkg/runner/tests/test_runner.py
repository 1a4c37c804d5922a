import json
from pathlib import Path

import pytest

from diffusion_runner.backends import StartupError, StubBackend, make_backend
from diffusion_runner.cli import run as cli_run
from diffusion_runner.manifest import ManifestError, load_manifest
from diffusion_runner.runner import run_manifest, write_results


def make_manifest(base: Path, n: int, missing: tuple[int, ...] = ()) -> Path:
    base.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        name = f"cond_{i:04d}.png"
        if i not in missing:
            (base / name).write_bytes(b"\x89PNG-stand-in-" + bytes([i]))
        entries.append(
            {
                "job_id": f"job_{i:04d}",
                "conditioning_map_path": name,
                "prompt_text": f"a photo of a zebra in grassland, sunny ({i})",
                "negative_prompt": "blurry",
                "sampler_seed": 1000 + i,
                "output_path": f"gen_{i:04d}.png",
                "annotation_ref": {"path": "../annotations.json", "image_id": i},
            }
        )
    path = base / "manifest.json"
    path.write_text(json.dumps({"version": 1, "master_seed": 7, "entries": entries}))
    return path


class TestManifest:
    def test_load_round_trip(self, tmp_path):
        path = make_manifest(tmp_path / "jobs", 3)
        manifest = load_manifest(path)
        assert len(manifest.entries) == 3
        assert manifest.entries[0].job_id == "job_0000"
        assert manifest.conditioning_path(manifest.entries[1]).is_file()

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"version": 99, "entries": []}))
        with pytest.raises(ManifestError, match="version"):
            load_manifest(path)

    def test_missing_field_named(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(
            json.dumps({"version": 1, "entries": [{"job_id": "a"}]})
        )
        with pytest.raises(ManifestError, match="missing fields"):
            load_manifest(path)

    def test_duplicate_job_ids_rejected(self, tmp_path):
        path = make_manifest(tmp_path / "jobs", 2)
        doc = json.loads(path.read_text())
        doc["entries"][1]["job_id"] = doc["entries"][0]["job_id"]
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="unique"):
            load_manifest(path)


class TestRunManifest:
    def test_empty_manifest(self, tmp_path):
        path = make_manifest(tmp_path / "jobs", 0)
        assert run_manifest(path, StubBackend()) == []

    def test_stub_echoes_conditioning(self, tmp_path):
        path = make_manifest(tmp_path / "jobs", 2)
        results = run_manifest(path, StubBackend())
        assert [r.status for r in results] == ["ok", "ok"]
        for i, r in enumerate(results):
            out = Path(r.output_image_path)
            assert out.is_file()
            assert out.read_bytes() == (tmp_path / "jobs" / f"cond_{i:04d}.png").read_bytes()
            assert r.wall_time >= 0.0
            assert r.model_id == "stub-echo-v1"

    def test_missing_conditioning_fails_only_that_job(self, tmp_path):
        path = make_manifest(tmp_path / "jobs", 3, missing=(1,))
        results = run_manifest(path, StubBackend())
        statuses = {r.job_id: r.status for r in results}
        assert statuses == {"job_0000": "ok", "job_0001": "failed", "job_0002": "ok"}
        failed = [r for r in results if r.status == "failed"][0]
        assert "cond_0001.png" in failed.message

    def test_result_ids_bijective_and_sorted(self, tmp_path):
        path = make_manifest(tmp_path / "jobs", 6)
        results = run_manifest(path, StubBackend(), max_parallel=3)
        ids = [r.job_id for r in results]
        assert ids == sorted(ids)
        assert set(ids) == {f"job_{i:04d}" for i in range(6)}

    def test_manifest_and_inputs_untouched(self, tmp_path):
        path = make_manifest(tmp_path / "jobs", 2)
        before = {p.name: p.read_bytes() for p in (tmp_path / "jobs").glob("*")}
        run_manifest(path, StubBackend())
        after = {name: (tmp_path / "jobs" / name).read_bytes() for name in before}
        assert before == after

    def test_ok_implies_output_at_manifest_path(self, tmp_path):
        path = make_manifest(tmp_path / "jobs", 2)
        manifest = load_manifest(path)
        results = run_manifest(path, StubBackend())
        expected = {e.job_id: str(manifest.output_path(e)) for e in manifest.entries}
        for r in results:
            if r.status == "ok":
                assert r.output_image_path == expected[r.job_id]
                assert Path(r.output_image_path).is_file()


class TestBackends:
    def test_unknown_backend(self):
        with pytest.raises(StartupError, match="unknown backend"):
            make_backend("fancy", None, 30, 7.5)

    def test_real_backend_requires_weights(self, tmp_path):
        with pytest.raises(StartupError):
            make_backend("real", None, 30, 7.5)
        with pytest.raises(StartupError):
            make_backend("real", str(tmp_path / "nowhere"), 30, 7.5)

    def test_real_backend_requires_libraries_or_fails_cleanly(self, tmp_path):
        weights = tmp_path / "weights"
        weights.mkdir()
        with pytest.raises(StartupError):
            make_backend("real", str(weights), 30, 7.5)


class TestCli:
    def test_run_with_results_file(self, tmp_path, capsys):
        path = make_manifest(tmp_path / "jobs", 2)
        results_path = tmp_path / "results.json"
        code = cli_run(["run", "--manifest", str(path), "--backend", "stub",
                        "--results", str(results_path)])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary == {"jobs": 2, "ok": 2, "failed": 0}
        doc = json.loads(results_path.read_text())
        assert len(doc["results"]) == 2
        assert all(r["status"] == "ok" for r in doc["results"])

    def test_empty_manifest_exit_zero(self, tmp_path, capsys):
        path = make_manifest(tmp_path / "jobs", 0)
        assert cli_run(["run", "--manifest", str(path)]) == 0
        assert json.loads(capsys.readouterr().out)["jobs"] == 0

    def test_bad_manifest_exit_one(self, tmp_path, capsys):
        bad = tmp_path / "m.json"
        bad.write_text("{}")
        assert cli_run(["run", "--manifest", str(bad)]) == 1
        assert "error" in json.loads(capsys.readouterr().err)

    def test_write_results_shape(self, tmp_path):
        path = make_manifest(tmp_path / "jobs", 1, missing=(0,))
        results = run_manifest(path, StubBackend())
        out = tmp_path / "results.json"
        write_results(out, results)
        doc = json.loads(out.read_text())
        assert doc["results"][0]["status"] == "failed"
        assert "message" in doc["results"][0]
