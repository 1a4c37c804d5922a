import numpy as np
import pytest

from quadprior.boundary import (
    SCHARR_X,
    SCHARR_Y,
    BoundaryMap,
    ForegroundMask,
    ImageError,
    JobSpec,
    Placement,
    build_prompt,
    composite_foreground,
    export_jobs,
    load_boundary_png,
    load_manifest,
    load_mask_png,
    merge_boundaries,
    save_boundary_png,
    save_mask_png,
    soft_edges,
    validate_manifest,
)


def conv2_reflect(image, kernel):
    """Explicit-loop 2-D convolution with reflect (symmetric) padding."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(image, ((ph, ph), (pw, pw)), mode="symmetric")
    out = np.zeros_like(image, dtype=np.float64)
    for y in range(image.shape[0]):
        for x in range(image.shape[1]):
            acc = 0.0
            for i in range(kh):
                for j in range(kw):
                    # convolution flips the kernel
                    acc += kernel[kh - 1 - i, kw - 1 - j] * padded[y + i, x + j]
            out[y, x] = acc
    return out


def gaussian_kernel_1d(sigma, truncate=4.0):
    radius = int(truncate * sigma + 0.5)
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def oracle_soft_edges(image, sigma=1.0):
    gx = conv2_reflect(image, SCHARR_X)
    gy = conv2_reflect(image, SCHARR_Y)
    mag = np.hypot(gx, gy)
    if sigma > 0:
        k = gaussian_kernel_1d(sigma)
        mag = conv2_reflect(mag, np.outer(k, k))
    p99 = np.percentile(mag, 99)
    if p99 <= 1e-12:
        return np.zeros_like(mag)
    return np.clip(mag / p99, 0.0, 1.0)


class TestSoftEdges:
    def test_constant_image_all_zero(self):
        out = soft_edges(np.full((20, 30), 0.7))
        assert np.all(out.values == 0.0)

    def test_step_edge_response_localized(self):
        img = np.zeros((16, 16))
        img[:, 8:] = 1.0
        out = soft_edges(img, smoothing_sigma=0.0).values
        # Peak on the two columns adjacent to the step, zero two columns away.
        assert np.all(out[:, 7] == 1.0) and np.all(out[:, 8] == 1.0)
        assert np.all(out[:, :6] == 0.0) and np.all(out[:, 10:] == 0.0)

    def test_matches_loop_convolution_oracle(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(24, 17))
        got = soft_edges(img).values
        want = oracle_soft_edges(img)
        assert np.max(np.abs(got - want)) < 1e-6

    def test_rgb_luminance_path(self):
        rng = np.random.default_rng(4)
        rgb = rng.uniform(size=(12, 12, 3))
        lum = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
        assert np.allclose(soft_edges(rgb).values, soft_edges(lum).values)

    def test_zero_size_rejected(self):
        with pytest.raises(ImageError):
            soft_edges(np.zeros((0, 5)))


class TestComposite:
    def _animal(self, h=10, w=8, alpha=1.0):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(h, w, 4))
        img[:, :, 3] = alpha
        return img

    def test_transparent_animal_is_identity(self):
        bg = np.random.default_rng(1).uniform(size=(20, 20, 3))
        out, mask = composite_foreground(self._animal(alpha=0.0), bg)
        assert np.array_equal(out, bg)
        assert not mask.values.any()

    def test_opaque_full_cover(self):
        animal = self._animal(h=20, w=20, alpha=1.0)
        bg = np.random.default_rng(2).uniform(size=(20, 20, 3))
        out, mask = composite_foreground(animal, bg)
        assert np.array_equal(out, animal[:, :, :3])
        assert mask.values.all()

    def test_half_alpha_blend_formula(self):
        animal = self._animal(h=20, w=20, alpha=0.5)
        bg = np.random.default_rng(5).uniform(size=(20, 20, 3))
        out, _ = composite_foreground(animal, bg)
        assert np.array_equal(out, 0.5 * animal[:, :, :3] + 0.5 * bg)

    def test_binary_alpha_exact_pixels(self):
        animal = self._animal(h=20, w=20)
        animal[:, :, 3] = np.random.default_rng(6).integers(0, 2, size=(20, 20))
        bg = np.random.default_rng(7).uniform(size=(20, 20, 3))
        out, mask = composite_foreground(animal, bg)
        fg = animal[:, :, 3] == 1.0
        assert np.array_equal(out[fg], animal[:, :, :3][fg])
        assert np.array_equal(out[~fg], bg[~fg])
        assert np.array_equal(mask.values, fg)

    def test_fully_out_of_frame_rejected(self):
        bg = np.zeros((20, 20, 3))
        with pytest.raises(ImageError):
            composite_foreground(self._animal(), bg, Placement(dx=100, dy=0))

    def test_mostly_out_of_frame_rejected(self):
        bg = np.zeros((20, 20, 3))
        with pytest.raises(ImageError, match="bbox"):
            composite_foreground(self._animal(h=10, w=8), bg, Placement(dx=-6, dy=0))

    def test_offset_placement_blends_in_region(self):
        animal = self._animal(h=4, w=4, alpha=1.0)
        bg = np.zeros((10, 10, 3))
        out, mask = composite_foreground(animal, bg, Placement(dx=3, dy=2))
        assert np.array_equal(out[2:6, 3:7], animal[:, :, :3])
        assert mask.values.sum() == 16
        assert np.all(out[0] == 0.0)


def oracle_merge(animal, mask, background, dilation):
    h, w = mask.shape
    inside = np.zeros_like(mask)
    if mask.any() and dilation > 0:
        for y in range(h):
            for x in range(w):
                y0, y1 = max(0, y - dilation), min(h, y + dilation + 1)
                x0, x1 = max(0, x - dilation), min(w, x + dilation + 1)
                inside[y, x] = mask[y0:y1, x0:x1].any()
    else:
        inside = mask
    out = np.empty_like(animal)
    for y in range(h):
        for x in range(w):
            if inside[y, x]:
                out[y, x] = animal[y, x]
            else:
                out[y, x] = max(animal[y, x], background[y, x])
    return out


class TestMergeBoundaries:
    def _triple(self, seed, h=18, w=25):
        rng = np.random.default_rng(seed)
        return (
            rng.uniform(size=(h, w)),
            rng.uniform(size=(h, w)) > 0.8,
            rng.uniform(size=(h, w)),
        )

    def test_empty_background_identity(self):
        a, m, _ = self._triple(0)
        merged = merge_boundaries(BoundaryMap(a), ForegroundMask(m), BoundaryMap(np.zeros_like(a)))
        assert np.array_equal(merged.values, a)

    def test_empty_mask_and_animal_gives_background(self):
        _, _, b = self._triple(1)
        zeros = np.zeros_like(b)
        merged = merge_boundaries(
            BoundaryMap(zeros), ForegroundMask(zeros.astype(bool)), BoundaryMap(b)
        )
        assert np.array_equal(merged.values, b)

    @pytest.mark.parametrize("dilation", [0, 2])
    def test_matches_per_pixel_oracle(self, dilation):
        for seed in range(10):
            a, m, b = self._triple(seed + 10)
            merged = merge_boundaries(
                BoundaryMap(a), ForegroundMask(m), BoundaryMap(b), mask_dilation_px=dilation
            )
            assert np.array_equal(merged.values, oracle_merge(a, m, b, dilation))

    def test_never_exceeds_pointwise_max(self):
        a, m, b = self._triple(99)
        merged = merge_boundaries(BoundaryMap(a), ForegroundMask(m), BoundaryMap(b)).values
        assert np.all(merged <= np.maximum(a, b) + 1e-15)
        assert np.all(merged[m] >= a[m] - 1e-15)

    def test_dimension_mismatch_rejected(self):
        a = BoundaryMap(np.zeros((5, 5)))
        b = BoundaryMap(np.zeros((6, 5)))
        with pytest.raises(ImageError, match="mismatch"):
            merge_boundaries(a, ForegroundMask(np.zeros((5, 5), dtype=bool)), b)


class TestPngRoundTrip:
    def test_boundary_map_within_one_step(self, tmp_path):
        rng = np.random.default_rng(8)
        bmap = BoundaryMap(rng.uniform(size=(30, 40)))
        p = tmp_path / "map.png"
        save_boundary_png(p, bmap)
        back = load_boundary_png(p)
        assert np.max(np.abs(back.values - bmap.values)) <= 1.0 / 255.0 + 1e-12

    def test_mask_exact(self, tmp_path):
        mask = ForegroundMask(np.random.default_rng(9).uniform(size=(20, 20)) > 0.5)
        p = tmp_path / "mask.png"
        save_mask_png(p, mask)
        assert np.array_equal(load_mask_png(p).values, mask.values)


class TestExportJobs:
    def _jobs(self, n):
        rng = np.random.default_rng(0)
        return [
            JobSpec(
                conditioning=BoundaryMap(rng.uniform(size=(16, 16))),
                prompt_text=build_prompt("zebra", "grassland", "sunny"),
                annotation_ref={"path": "annotations.json", "image_id": i},
            )
            for i in range(n)
        ]

    def test_empty_export(self, tmp_path):
        manifest = export_jobs([], tmp_path / "out", master_seed=1)
        assert manifest.entries == ()
        assert load_manifest(tmp_path / "out" / "manifest.json") == manifest

    def test_two_entries_distinct_stable_seeds(self, tmp_path):
        m1 = export_jobs(self._jobs(2), tmp_path / "a", master_seed=7)
        m2 = export_jobs(self._jobs(2), tmp_path / "b", master_seed=7)
        seeds = [e.sampler_seed for e in m1.entries]
        assert len(set(seeds)) == 2
        assert seeds == [e.sampler_seed for e in m2.entries]
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (
            tmp_path / "b" / "manifest.json"
        ).read_bytes()

    def test_round_trip_equality(self, tmp_path):
        manifest = export_jobs(self._jobs(3), tmp_path / "out", master_seed=42)
        assert load_manifest(tmp_path / "out" / "manifest.json") == manifest

    def test_validation_catches_missing_map(self, tmp_path):
        export_jobs(self._jobs(2), tmp_path / "out", master_seed=3)
        (tmp_path / "out" / "cond_0001.png").unlink()
        with pytest.raises(ImageError, match="job_0001"):
            validate_manifest(tmp_path / "out" / "manifest.json")

    def test_parallel_export_matches_sequential(self, tmp_path, monkeypatch):
        jobs = self._jobs(6)
        export_jobs(jobs, tmp_path / "seq", master_seed=5)
        monkeypatch.setenv("QUADPRIOR_THREADS", "4")
        export_jobs(jobs, tmp_path / "par", master_seed=5)
        assert (tmp_path / "seq" / "manifest.json").read_bytes() == (
            tmp_path / "par" / "manifest.json"
        ).read_bytes()
        for i in range(6):
            assert (tmp_path / "seq" / f"cond_{i:04d}.png").read_bytes() == (
                tmp_path / "par" / f"cond_{i:04d}.png"
            ).read_bytes()


class TestSilhouette:
    def test_render_produces_visible_animal(self):
        from quadprior.boundary import render_skeleton_silhouette
        from quadprior.poses import POSE_DIM, PoseAngles
        from quadprior.skeleton import default_camera, default_rig, forward_kinematics

        rig = default_rig()
        posed = forward_kinematics(rig, PoseAngles(np.zeros(POSE_DIM)))
        layer = render_skeleton_silhouette(posed, rig, default_camera())
        assert layer.shape == (512, 640, 4)
        assert layer[:, :, 3].max() == 1.0
        coverage = (layer[:, :, 3] > 0).mean()
        assert 0.02 < coverage < 0.6
