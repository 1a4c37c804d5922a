"""Statistical pose filtering and refined-pose generation.

Workflow: decode ~10k latent draws from the trained prior, histogram each
joint's primary angle component (the pre-test), derive per-joint [min, max]
ranges by trimming the tails, then rejection-sample new poses -- a pose is
kept only if every joint's filtered component lies inside its range. Latent
draws come from N(0, variance_scale * I); raising the variance widens pose
diversity at the cost of a higher dropout rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .poses import (
    COMPONENTS_PER_JOINT,
    JOINT_NAMES,
    N_JOINTS,
    REFERENCE_RANGES,
    PoseAngles,
)
from .vae import VaePrior, decode_batch

RANGES_FORMAT_NOTE = "per-joint inclusive [min, max] bounds in degrees"


class SamplingError(RuntimeError):
    """Rejection sampling could not produce the requested poses."""


@dataclass(frozen=True)
class AngleRangeTable:
    """Per-joint [min, max] bounds (degrees), in PoseAngles joint order."""

    ranges: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        names = tuple(r[0] for r in self.ranges)
        if names != JOINT_NAMES:
            raise ValueError(
                f"range table must list the {N_JOINTS} joints in layout order; got {names}"
            )
        for joint, lo, hi in self.ranges:
            if not (lo < hi):
                raise ValueError(f"{joint}: min {lo} must be < max {hi}")

    def range_for(self, joint: str) -> tuple[float, float]:
        for name, lo, hi in self.ranges:
            if name == joint:
                return lo, hi
        raise KeyError(joint)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([r[1] for r in self.ranges])
        hi = np.array([r[2] for r in self.ranges])
        return lo, hi


def default_ranges() -> AngleRangeTable:
    """The built-in quadruped leg table (see poses.REFERENCE_RANGES)."""
    return AngleRangeTable(tuple((j, float(lo), float(hi)) for j, lo, hi in REFERENCE_RANGES))


def save_ranges(path: str | Path, table: AngleRangeTable) -> None:
    data = [{"joint": j, "min": lo, "max": hi} for j, lo, hi in table.ranges]
    Path(path).write_text(json.dumps(data, indent=2))


def load_ranges(path: str | Path) -> AngleRangeTable:
    data = json.loads(Path(path).read_text())
    try:
        entries = tuple((d["joint"], float(d["min"]), float(d["max"])) for d in data)
    except (TypeError, KeyError) as e:
        raise ValueError(f"{path}: each entry needs joint/min/max fields") from e
    return AngleRangeTable(entries)


@dataclass(frozen=True)
class JointHistogram:
    joint_name: str
    bin_edges: np.ndarray
    counts: np.ndarray
    sample_count: int

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.ndim != 1 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin_edges must be strictly increasing")
        if counts.shape != (edges.size - 1,):
            raise ValueError("counts length must be len(bin_edges) - 1")
        if int(counts.sum()) != self.sample_count:
            raise ValueError("counts must sum to sample_count")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)


def histogram_from_samples(joint_name: str, samples: np.ndarray, bins: int = 100) -> JointHistogram:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError(f"{joint_name}: no samples to histogram")
    counts, edges = np.histogram(samples, bins=bins)
    return JointHistogram(joint_name, edges, counts, int(samples.size))


@dataclass(frozen=True)
class SampleReport:
    requested: int
    accepted: int
    rejected: int
    dropout_rate: float

    def __post_init__(self):
        total = self.accepted + self.rejected
        expect = self.rejected / total if total else 0.0
        if abs(self.dropout_rate - expect) > 1e-12:
            raise ValueError("dropout_rate must equal rejected / (accepted + rejected)")


def pretest(vae: VaePrior, n: int = 10_000, rng_seed: int = 0, bins: int = 100) -> list[JointHistogram]:
    """Decode ``n`` draws of z ~ N(0, I) and histogram each joint's primary component."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((n, vae.latent_dim))
    decoded = decode_batch(vae, z)
    primary = decoded[:, 0::COMPONENTS_PER_JOINT]
    return [histogram_from_samples(JOINT_NAMES[j], primary[:, j], bins) for j in range(N_JOINTS)]


def _hist_quantile(edges: np.ndarray, counts: np.ndarray, q: float) -> float:
    """Quantile of binned data via linear CDF interpolation within bins."""
    total = float(counts.sum())
    target = q * total
    if target <= 0.0:
        return float(edges[0])
    cum = 0.0
    for k, c in enumerate(counts):
        c = float(c)
        if c > 0.0 and cum + c >= target:
            return float(edges[k] + (target - cum) / c * (edges[k + 1] - edges[k]))
        cum += c
    return float(edges[-1])


def derive_ranges(histograms: list[JointHistogram], trim_fraction: float = 0.01) -> AngleRangeTable:
    """Per-joint [trim, 1 - trim] quantile bounds from the pre-test histograms."""
    if not 0.0 <= trim_fraction < 0.5:
        raise ValueError("trim_fraction must lie in [0, 0.5)")
    entries = []
    for h in histograms:
        if h.sample_count == 0:
            raise ValueError(f"{h.joint_name}: empty histogram")
        lo = _hist_quantile(h.bin_edges, h.counts, trim_fraction)
        hi = _hist_quantile(h.bin_edges, h.counts, 1.0 - trim_fraction)
        entries.append((h.joint_name, lo, hi))
    return AngleRangeTable(tuple(entries))


def filter_pose(
    pose: PoseAngles, ranges: AngleRangeTable, per_component: bool = False
) -> str | None:
    """None if the pose passes; else the first offending joint in layout order.

    By default only each joint's primary component (index 0 of its triple) is
    gated; ``per_component=True`` applies the joint's range to all three.
    Range endpoints are inclusive.
    """
    lo, hi = ranges.bounds()
    for j in range(N_JOINTS):
        comps = range(COMPONENTS_PER_JOINT) if per_component else (0,)
        for c in comps:
            v = pose.values[j * COMPONENTS_PER_JOINT + c]
            if v < lo[j] or v > hi[j]:
                return JOINT_NAMES[j]
    return None


def accepts(pose: PoseAngles, ranges: AngleRangeTable, per_component: bool = False) -> bool:
    return filter_pose(pose, ranges, per_component) is None


def draw_pose(vae: VaePrior, rng_seed: int, index: int, variance_scale: float) -> PoseAngles:
    """Decode draw ``index``: z ~ N(0, variance_scale * I) from generator (rng_seed, index).

    Each draw gets its own generator and its own decoder pass, so the result
    depends only on (rng_seed, index) -- never on batching or schedule.
    """
    rng = np.random.default_rng((rng_seed, index))
    z = rng.standard_normal(vae.latent_dim) * math.sqrt(variance_scale)
    return PoseAngles(decode_batch(vae, z[None, :])[0])


def sample_refined(
    vae: VaePrior,
    ranges: AngleRangeTable,
    n_accepted: int,
    variance_scale: float = 2.0,
    rng_seed: int = 0,
    per_component: bool = False,
    max_draws: int = 1_000_000,
) -> tuple[list[PoseAngles], SampleReport]:
    """Rejection-sample exactly ``n_accepted`` filtered poses.

    Draw i is fully determined by (rng_seed, i) via ``draw_pose``, so any
    parallel schedule reproduces the sequential accepted set and report.
    Aborts if ``max_draws`` is exhausted; an acceptance rate below 1e-4 at
    that point is reported as a degenerate prior/ranges combination.
    """
    if n_accepted < 1:
        raise ValueError("n_accepted must be >= 1")
    if variance_scale <= 0:
        raise ValueError("variance_scale must be > 0")

    poses: list[PoseAngles] = []
    n_rejected = 0
    idx = 0
    while len(poses) < n_accepted and idx < max_draws:
        pose = draw_pose(vae, rng_seed, idx, variance_scale)
        if filter_pose(pose, ranges, per_component) is None:
            poses.append(pose.as_refined())
        else:
            n_rejected += 1
        idx += 1

    if len(poses) < n_accepted:
        rate = len(poses) / idx if idx else 0.0
        if rate < 1e-4:
            raise SamplingError(
                f"acceptance rate {rate:.2e} after {idx} draws: "
                "degenerate prior or ranges (pose filter rejects almost everything)"
            )
        raise SamplingError(
            f"only {len(poses)}/{n_accepted} poses accepted within the {max_draws}-draw cap"
        )

    report = SampleReport(
        requested=n_accepted,
        accepted=n_accepted,
        rejected=n_rejected,
        dropout_rate=n_rejected / (n_accepted + n_rejected),
    )
    return poses, report
