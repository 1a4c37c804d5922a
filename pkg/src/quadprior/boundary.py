"""Conditioning-map preparation for a boundary-conditioned diffusion model.

The animal layer and the background are edge-detected separately, then merged
so the animal's boundary survives untouched and background boundaries are
kept only outside the animal. Soft edges come from a Scharr gradient
magnitude, Gaussian-smoothed and normalized to its 99th percentile; real
neural edge maps can be ingested from PNG instead. All maps travel as 8-bit
grayscale PNG.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .seeding import derive_seed

SCHARR_X = np.array([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]]) / 32.0
SCHARR_Y = SCHARR_X.T

DEFAULT_ENVIRONMENTS = ("grassland", "savanna", "mountain", "forest")
DEFAULT_WEATHER = ("sunny", "cloudy", "overcast")
DEFAULT_NEGATIVE_PROMPT = "deformed, extra limbs, missing limbs, blurry, low quality"

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class ImageError(ValueError):
    """Bad image dimensions, placements, or manifest contents."""


@dataclass(frozen=True)
class BoundaryMap:
    """Single-channel soft-edge image with values in [0, 1]."""

    values: np.ndarray  # (H, W) float64

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ImageError(f"boundary map must be a non-empty 2-D array, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ImageError("boundary map values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ForegroundMask:
    values: np.ndarray  # (H, W) bool

    def __post_init__(self):
        arr = np.asarray(self.values).astype(bool)
        if arr.ndim != 2 or arr.size == 0:
            raise ImageError(f"mask must be a non-empty 2-D array, got {arr.shape}")
        object.__setattr__(self, "values", arr)


def _luminance(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 1:
        return image[:, :, 0]
    if image.ndim == 3 and image.shape[2] >= 3:
        r, g, b = image[:, :, 0], image[:, :, 1], image[:, :, 2]
        return 0.299 * r + 0.587 * g + 0.114 * b
    raise ImageError(f"cannot take luminance of shape {image.shape}")


def soft_edges(image: np.ndarray, smoothing_sigma: float = 1.0) -> BoundaryMap:
    """Scharr gradient magnitude, Gaussian-smoothed, 99th-percentile normalized.

    Convolution boundaries use reflect padding. A constant image maps to an
    all-zero boundary map.
    """
    lum = _luminance(image)
    if lum.size == 0:
        raise ImageError("zero-size image")
    gx = ndimage.convolve(lum, SCHARR_X, mode="reflect")
    gy = ndimage.convolve(lum, SCHARR_Y, mode="reflect")
    mag = np.hypot(gx, gy)
    if smoothing_sigma > 0:
        mag = ndimage.gaussian_filter(mag, smoothing_sigma, mode="reflect")
    p99 = np.percentile(mag, 99)
    if p99 <= 1e-12:
        return BoundaryMap(np.zeros_like(lum))
    return BoundaryMap(np.clip(mag / p99, 0.0, 1.0))


@dataclass(frozen=True)
class Placement:
    dx: int = 0  # top-left corner of the animal layer in background coords
    dy: int = 0
    scale: float = 1.0


def _scaled_rgba(animal_rgba: np.ndarray, scale: float) -> np.ndarray:
    if scale == 1.0:
        return animal_rgba
    if scale <= 0:
        raise ImageError("placement scale must be > 0")
    h, w = animal_rgba.shape[:2]
    img = Image.fromarray(np.round(animal_rgba * 255.0).astype(np.uint8), mode="RGBA")
    img = img.resize((max(1, round(w * scale)), max(1, round(h * scale))), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0


def composite_foreground(
    animal_rgba: np.ndarray,
    background_rgb: np.ndarray,
    placement: Placement = Placement(),
    min_visible_fraction: float = 0.5,
) -> tuple[np.ndarray, ForegroundMask]:
    """Alpha-over composite; mask is alpha > 0.5 in background coordinates.

    Rejects placements that leave less than ``min_visible_fraction`` of the
    animal's alpha bounding box inside the frame.
    """
    animal = np.asarray(animal_rgba, dtype=np.float64)
    background = np.asarray(background_rgb, dtype=np.float64)
    if animal.ndim != 3 or animal.shape[2] != 4:
        raise ImageError(f"animal layer must be (H, W, 4), got {animal.shape}")
    if background.ndim != 3 or background.shape[2] != 3:
        raise ImageError(f"background must be (H, W, 3), got {background.shape}")

    animal = _scaled_rgba(animal, placement.scale)
    ah, aw = animal.shape[:2]
    bh, bw = background.shape[:2]
    dx, dy = placement.dx, placement.dy

    alpha_any = animal[:, :, 3] > 0
    if alpha_any.any():
        ys, xs = np.nonzero(alpha_any)
        box_x0, box_x1 = xs.min() + dx, xs.max() + 1 + dx
        box_y0, box_y1 = ys.min() + dy, ys.max() + 1 + dy
        area = (box_x1 - box_x0) * (box_y1 - box_y0)
        vis_w = max(0, min(box_x1, bw) - max(box_x0, 0))
        vis_h = max(0, min(box_y1, bh) - max(box_y0, 0))
        if vis_w * vis_h == 0:
            raise ImageError("placement puts the animal fully out of frame")
        if vis_w * vis_h < min_visible_fraction * area:
            raise ImageError(
                f"only {vis_w * vis_h / area:.0%} of the animal bbox is in frame "
                f"(need >= {min_visible_fraction:.0%})"
            )

    out = background.copy()
    mask = np.zeros((bh, bw), dtype=bool)
    x0, y0 = max(0, dx), max(0, dy)
    x1, y1 = min(bw, dx + aw), min(bh, dy + ah)
    if x1 > x0 and y1 > y0:
        sub = animal[y0 - dy : y1 - dy, x0 - dx : x1 - dx]
        alpha = sub[:, :, 3:4]
        out[y0:y1, x0:x1] = alpha * sub[:, :, :3] + (1.0 - alpha) * out[y0:y1, x0:x1]
        mask[y0:y1, x0:x1] = sub[:, :, 3] > 0.5
    return out, ForegroundMask(mask)


def merge_boundaries(
    animal_map: BoundaryMap,
    mask: ForegroundMask,
    background_map: BoundaryMap,
    mask_dilation_px: int = 2,
) -> BoundaryMap:
    """Animal boundary wins inside the (dilated) mask; elsewhere keep the
    pointwise max of both maps so exterior background boundaries survive."""
    if not (
        animal_map.values.shape == mask.values.shape == background_map.values.shape
    ):
        raise ImageError(
            f"dimension mismatch: animal {animal_map.values.shape}, "
            f"mask {mask.values.shape}, background {background_map.values.shape}"
        )
    inside = mask.values
    if mask_dilation_px > 0 and inside.any():
        size = 2 * mask_dilation_px + 1
        inside = ndimage.binary_dilation(inside, structure=np.ones((size, size), dtype=bool))
    merged = np.where(
        inside, animal_map.values, np.maximum(animal_map.values, background_map.values)
    )
    return BoundaryMap(merged)


def save_boundary_png(path: str | Path, bmap: BoundaryMap) -> None:
    Image.fromarray(np.round(bmap.values * 255.0).astype(np.uint8), mode="L").save(path)


def load_boundary_png(path: str | Path) -> BoundaryMap:
    img = Image.open(path).convert("L")
    return BoundaryMap(np.asarray(img, dtype=np.float64) / 255.0)


def save_mask_png(path: str | Path, mask: ForegroundMask) -> None:
    Image.fromarray(np.where(mask.values, 255, 0).astype(np.uint8), mode="L").save(path)


def load_mask_png(path: str | Path) -> ForegroundMask:
    img = Image.open(path).convert("L")
    return ForegroundMask(np.asarray(img) >= 128)


def build_prompt(species: str, environment: str, weather: str) -> str:
    return f"a photo of a {species} in {environment}, {weather}, realistic, detailed"


@dataclass(frozen=True)
class JobEntry:
    job_id: str
    conditioning_map_path: str  # relative to the manifest directory
    prompt_text: str
    negative_prompt: str
    sampler_seed: int
    output_path: str  # relative to the manifest directory
    annotation_ref: dict  # {"path": ..., "image_id": ...}


@dataclass(frozen=True)
class JobManifest:
    version: int
    master_seed: int
    entries: tuple[JobEntry, ...]

    def __post_init__(self):
        ids = [e.job_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ImageError("job_ids must be unique")


@dataclass(frozen=True)
class JobSpec:
    """One diffusion job to export: a conditioning map plus its metadata."""

    conditioning: BoundaryMap
    prompt_text: str
    annotation_ref: dict
    negative_prompt: str = DEFAULT_NEGATIVE_PROMPT


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("QUADPRIOR_THREADS", "1")))
    except ValueError:
        return 1


def export_jobs(jobs: list[JobSpec], out_dir: str | Path, master_seed: int) -> JobManifest:
    """Write conditioning PNGs and the job manifest into ``out_dir``.

    Per-job sampler seeds derive from the master seed and the job index, so
    re-exporting (or exporting in parallel) reproduces the same manifest.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ImageError(f"cannot create output directory {out_dir}: {e}") from e

    def write_one(i_job):
        i, job = i_job
        name = f"cond_{i:04d}.png"
        save_boundary_png(out_dir / name, job.conditioning)
        return JobEntry(
            job_id=f"job_{i:04d}",
            conditioning_map_path=name,
            prompt_text=job.prompt_text,
            negative_prompt=job.negative_prompt,
            sampler_seed=derive_seed(master_seed, "job", i),
            output_path=f"gen_{i:04d}.png",
            annotation_ref=job.annotation_ref,
        )

    workers = _worker_count()
    items = list(enumerate(jobs))
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = tuple(pool.map(write_one, items))
    else:
        entries = tuple(write_one(it) for it in items)

    manifest = JobManifest(MANIFEST_VERSION, master_seed, entries)
    save_manifest(out_dir / MANIFEST_NAME, manifest)
    validate_manifest(out_dir / MANIFEST_NAME)
    return manifest


def save_manifest(path: str | Path, manifest: JobManifest) -> None:
    import json

    doc = {
        "version": manifest.version,
        "master_seed": manifest.master_seed,
        "entries": [
            {
                "job_id": e.job_id,
                "conditioning_map_path": e.conditioning_map_path,
                "prompt_text": e.prompt_text,
                "negative_prompt": e.negative_prompt,
                "sampler_seed": e.sampler_seed,
                "output_path": e.output_path,
                "annotation_ref": e.annotation_ref,
            }
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_manifest(path: str | Path) -> JobManifest:
    import json

    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("version") != MANIFEST_VERSION:
        raise ImageError(f"{path}: unsupported manifest version {doc.get('version')}")
    entries = tuple(
        JobEntry(
            job_id=e["job_id"],
            conditioning_map_path=e["conditioning_map_path"],
            prompt_text=e["prompt_text"],
            negative_prompt=e["negative_prompt"],
            sampler_seed=int(e["sampler_seed"]),
            output_path=e["output_path"],
            annotation_ref=e["annotation_ref"],
        )
        for e in doc["entries"]
    )
    return JobManifest(int(doc["version"]), int(doc["master_seed"]), entries)


def validate_manifest(path: str | Path) -> JobManifest:
    """Load and check that every referenced conditioning file exists."""
    path = Path(path)
    manifest = load_manifest(path)
    base = path.parent
    for e in manifest.entries:
        cond = base / e.conditioning_map_path
        if not cond.is_file():
            raise ImageError(f"{path}: {e.job_id} references missing file {cond}")
    return manifest


# Painter-style stand-in for a real render: bones drawn as capsules, shaded
# by body part so the edge detector sees internal contours too.
_BONE_SHADE = {
    "spine": 140, "neck": 150, "head": 170, "eye_l": 205, "eye_r": 205,
    "tail": 130, "clav_l": 135, "clav_r": 135, "hip_l": 135, "hip_r": 135,
}
_BONE_WIDTH_M = {
    "spine": 0.30, "neck": 0.16, "head": 0.14, "tail": 0.06,
    "clav_l": 0.12, "clav_r": 0.12, "hip_l": 0.12, "hip_r": 0.12,
    "eye_l": 0.03, "eye_r": 0.03,
}


def render_skeleton_silhouette(posed, rig, cam) -> np.ndarray:
    """Rasterize the posed skeleton into an RGBA layer (float, [0, 1]).

    Stand-in for the out-of-scope mesh render: each bone becomes a capsule
    whose width scales with 1/depth, drawn far-to-near.
    """
    w, h = cam.image_size
    img = Image.new("RGBA", (w, h), (0, 0, 0, 0))
    draw = ImageDraw.Draw(img)

    pts = np.concatenate([posed.starts, posed.ends], axis=0)
    cam_pts = pts @ cam.rotation.T + cam.translation
    n = len(rig.bones)
    order = sorted(
        range(n),
        key=lambda i: -(cam_pts[i, 2] + cam_pts[n + i, 2]) / 2.0,
    )
    for i in order:
        z0, z1 = cam_pts[i, 2], cam_pts[n + i, 2]
        if z0 <= 0 or z1 <= 0:
            continue
        x0 = cam.focal_px * cam_pts[i, 0] / z0 + cam.principal_point[0]
        y0 = cam.focal_px * cam_pts[i, 1] / z0 + cam.principal_point[1]
        x1 = cam.focal_px * cam_pts[n + i, 0] / z1 + cam.principal_point[0]
        y1 = cam.focal_px * cam_pts[n + i, 1] / z1 + cam.principal_point[1]
        name = rig.bones[i].name
        shade = _BONE_SHADE.get(name, 115)
        width_px = max(
            2, int(round(_BONE_WIDTH_M.get(name, 0.07) * cam.focal_px / ((z0 + z1) / 2.0)))
        )
        color = (shade, shade, shade, 255)
        draw.line([(x0, y0), (x1, y1)], fill=color, width=width_px)
        r = width_px / 2.0
        for cx, cy in ((x0, y0), (x1, y1)):
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=color)
    return np.asarray(img, dtype=np.float64) / 255.0
