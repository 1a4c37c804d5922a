"""Joint-angle pose vectors for the 12-joint quadruped leg parameterization.

A pose is a 36-vector of degrees: 12 joints x 3 rotation components, in a
fixed joint order (right front leg, left front leg, right hind leg, left hind
leg; shoulder/elbow/paw resp. hip/knee/paw within each leg). Component 0 of
each triple is the joint's primary component; it is the one gated by the
pose filter and the one that carries most of the articulation in generated
training data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

JOINT_NAMES = (
    "shoulder_right",
    "elbow_right",
    "front-paw_right",
    "shoulder_left",
    "elbow_left",
    "front-paw_left",
    "hip_right",
    "knee_right",
    "back-paw_right",
    "hip_left",
    "knee_left",
    "back-paw_left",
)

N_JOINTS = len(JOINT_NAMES)
COMPONENTS_PER_JOINT = 3
POSE_DIM = N_JOINTS * COMPONENTS_PER_JOINT

# Reference per-joint [min, max] bounds (degrees) for the primary component,
# in JOINT_NAMES order. Used as the built-in pose-filter table and to center
# the synthetic training-pose generator.
REFERENCE_RANGES = (
    ("shoulder_right", 40.0, 100.0),
    ("elbow_right", -125.0, 0.0),
    ("front-paw_right", -25.0, 100.0),
    ("shoulder_left", 40.0, 100.0),
    ("elbow_left", -125.0, 0.0),
    ("front-paw_left", -25.0, 100.0),
    ("hip_right", -120.0, -60.0),
    ("knee_right", 0.0, 80.0),
    ("back-paw_right", -125.0, 0.0),
    ("hip_left", -120.0, -60.0),
    ("knee_left", 0.0, 80.0),
    ("back-paw_left", -125.0, 0.0),
)

ANGLE_LIMIT_DEG = 360.0


class PoseError(ValueError):
    """Raised for malformed pose vectors or pose dataset files."""


@dataclass(frozen=True)
class PoseAngles:
    """A 36-vector of joint angles in degrees.

    ``refined`` marks poses that passed the statistical pose filter.
    """

    values: np.ndarray
    refined: bool = False

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (POSE_DIM,):
            raise PoseError(f"pose must have {POSE_DIM} components, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise PoseError("pose contains non-finite values")
        object.__setattr__(self, "values", arr)

    def component(self, joint: int, comp: int) -> float:
        return float(self.values[joint * COMPONENTS_PER_JOINT + comp])

    def primary(self) -> np.ndarray:
        """The 12 primary components (one per joint)."""
        return self.values[0::COMPONENTS_PER_JOINT].copy()

    def check_range(self) -> "PoseAngles":
        """Enforce the (-360, 360) degree bound; returns self."""
        bad = np.nonzero(np.abs(self.values) >= ANGLE_LIMIT_DEG)[0]
        if bad.size:
            i = int(bad[0])
            raise PoseError(
                f"angle component {i} ({JOINT_NAMES[i // 3]}[{i % 3}]) is "
                f"{self.values[i]:.3f} deg, outside (-360, 360)"
            )
        return self

    def as_refined(self) -> "PoseAngles":
        return PoseAngles(self.values, refined=True)


def poses_to_array(poses: list[PoseAngles]) -> np.ndarray:
    return np.stack([p.values for p in poses]) if poses else np.empty((0, POSE_DIM))


def save_pose_dataset(path: str | Path, poses: list[PoseAngles]) -> None:
    """Write poses as a JSON array of 36-element arrays (degrees)."""
    data = [[float(v) for v in p.values] for p in poses]
    Path(path).write_text(json.dumps(data))


def load_pose_dataset(path: str | Path) -> list[PoseAngles]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise PoseError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(data, list):
        raise PoseError(f"{path}: expected a JSON array of poses")
    poses = []
    for i, row in enumerate(data):
        try:
            poses.append(PoseAngles(np.asarray(row, dtype=np.float64)).check_range())
        except (PoseError, ValueError) as e:
            raise PoseError(f"{path}: pose {i}: {e}") from e
    return poses


# Walk-cycle leg phases (fraction of a stride) and within-leg lag, used by the
# synthetic training-pose generator. Diagonal legs move together.
_LEG_PHASE = (0.0, 0.5, 0.5, 0.0)  # front-right, front-left, hind-right, hind-left
_JOINT_LAG = (0.0, 0.08, 0.16)  # shoulder/hip, elbow/knee, paw
_MODE_AMP = (0.15, 0.55, 0.85)  # stand, walk, run


def make_gait_poses(n: int, seed: int, secondary_amp_deg: float = 8.0) -> list[PoseAngles]:
    """Generate ``n`` plausible quadruped poses, seeded.

    Each pose mixes a stride curve (stand/walk/run amplitude modes, diagonal
    legs in phase) with independent per-joint amplitude and offset variation,
    so the set spans many degrees of freedom rather than one clean cycle.
    Primary components stay strictly inside REFERENCE_RANGES; the two
    secondary components per joint carry small correlated motion.
    """
    if n < 1:
        raise PoseError("need n >= 1 poses")
    rng = np.random.default_rng(seed)
    centers = np.array([(lo + hi) / 2.0 for _, lo, hi in REFERENCE_RANGES])
    halves = np.array([(hi - lo) / 2.0 for _, lo, hi in REFERENCE_RANGES])

    poses = []
    for _ in range(n):
        u = rng.uniform()  # stride phase
        amp = _MODE_AMP[rng.integers(len(_MODE_AMP))] * rng.uniform(0.8, 1.2)
        joint_amp = rng.uniform(0.5, 1.0, N_JOINTS)
        joint_offset = rng.normal(0.0, 0.15, N_JOINTS)
        vals = np.zeros(POSE_DIM)
        for j in range(N_JOINTS):
            leg, part = divmod(j, 3)
            phase = u + _LEG_PHASE[leg] + _JOINT_LAG[part]
            swing = amp * joint_amp[j] * 0.75 * np.sin(2.0 * np.pi * phase)
            primary = centers[j] + halves[j] * (swing + joint_offset[j])
            lo = centers[j] - 0.98 * halves[j]
            hi = centers[j] + 0.98 * halves[j]
            vals[3 * j] = min(max(primary, lo), hi)
            for c in (1, 2):
                wobble = secondary_amp_deg * amp * np.sin(2.0 * np.pi * phase + c)
                vals[3 * j + c] = wobble + rng.normal(0.0, 2.0)
        poses.append(PoseAngles(vals))
    return poses
