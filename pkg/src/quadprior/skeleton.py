"""Quadruped skeleton: forward kinematics, angle extraction, projection.

Bones form a tree; each bone has a unit rest direction (world coordinates at
rest) and a length, and attaches at either end of its parent. Twelve leg
bones are the angle-parameterized joints, in PoseAngles joint order. A joint
rotation is an intrinsic X-Y-Z Euler rotation whose axes are the parent
bone's rest-aligned frame (X along the parent bone); the convention is
recorded in the rig file so pose data stays self-describing.

Each bone's frame is completed deterministically from its direction: X along
the bone, Y from crossing a fixed reference axis, Z = X x Y.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .poses import COMPONENTS_PER_JOINT, N_JOINTS, POSE_DIM, PoseAngles

RIG_FORMAT = "quadprior-rig"
CAMERA_FORMAT = "quadprior-camera"
EULER_CONVENTION = "intrinsic-xyz-parent-frame"

# 17-keypoint quadruped annotation layout (AP10K order).
KEYPOINT_NAMES = (
    "left_eye",
    "right_eye",
    "nose",
    "neck",
    "root_of_tail",
    "left_shoulder",
    "left_elbow",
    "left_front_paw",
    "right_shoulder",
    "right_elbow",
    "right_front_paw",
    "left_hip",
    "left_knee",
    "left_back_paw",
    "right_hip",
    "right_knee",
    "right_back_paw",
)

SKELETON_EDGES = (
    (1, 2), (1, 3), (2, 3), (3, 4), (4, 5),
    (4, 6), (6, 7), (7, 8), (4, 9), (9, 10), (10, 11),
    (5, 12), (12, 13), (13, 14), (5, 15), (15, 16), (16, 17),
)


class RigError(ValueError):
    """Malformed rig or camera definitions."""


class KinematicsError(ValueError):
    """Degenerate geometric input (e.g. zero-length observed bone)."""


class AnnotationError(ValueError):
    """No usable keypoints for an annotation."""


@dataclass(frozen=True)
class Bone:
    name: str
    parent: int  # index into the bone list, -1 for root
    attach: str  # "start" or "end" of the parent
    direction: np.ndarray  # unit rest direction, world coords
    length: float


def _complete_frame(x: np.ndarray) -> np.ndarray:
    """Right-handed frame with X along ``x``; deterministic Y/Z completion."""
    ref = np.array([0.0, 0.0, 1.0]) if abs(x[2]) <= 0.9 else np.array([0.0, 1.0, 0.0])
    y = np.cross(ref, x)
    y = y / np.linalg.norm(y)
    z = np.cross(x, y)
    return np.column_stack([x, y, z])


@dataclass
class SkeletonRig:
    bones: list[Bone]
    keypoint_map: dict[str, tuple[int, str]]  # keypoint -> (bone index, "start"/"end")
    angle_joints: list[int]  # 12 bone indices in PoseAngles joint order
    euler_convention: str = EULER_CONVENTION
    rest_frames: np.ndarray = field(init=False, repr=False)
    rel_rotations: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.euler_convention != EULER_CONVENTION:
            raise RigError(f"unsupported euler convention {self.euler_convention!r}")
        for i, bone in enumerate(self.bones):
            if not (-1 <= bone.parent < i):
                raise RigError(f"bone {bone.name}: parent must precede it (topological order)")
            if bone.attach not in ("start", "end"):
                raise RigError(f"bone {bone.name}: attach must be 'start' or 'end'")
            if abs(np.linalg.norm(bone.direction) - 1.0) > 1e-9:
                raise RigError(f"bone {bone.name}: rest direction must be unit length")
            if bone.length <= 0:
                raise RigError(f"bone {bone.name}: length must be > 0")
        if set(self.keypoint_map) != set(KEYPOINT_NAMES):
            missing = set(KEYPOINT_NAMES) - set(self.keypoint_map)
            extra = set(self.keypoint_map) - set(KEYPOINT_NAMES)
            raise RigError(f"keypoint_map must cover the 17 names; missing={missing} extra={extra}")
        for kp, (bi, end) in self.keypoint_map.items():
            if not (0 <= bi < len(self.bones)) or end not in ("start", "end"):
                raise RigError(f"keypoint {kp}: bad bone reference")
        if len(self.angle_joints) != N_JOINTS or len(set(self.angle_joints)) != N_JOINTS:
            raise RigError(f"angle_joints must list {N_JOINTS} distinct bones")
        for bi in self.angle_joints:
            if self.bones[bi].parent < 0:
                raise RigError("angle joints must have a parent bone")

        frames = np.stack([_complete_frame(b.direction) for b in self.bones])
        rel = np.empty_like(frames)
        for i, bone in enumerate(self.bones):
            if bone.parent < 0:
                rel[i] = frames[i]
            else:
                rel[i] = frames[bone.parent].T @ frames[i]
        self.rest_frames = frames
        self.rel_rotations = rel

    def bone_index(self, name: str) -> int:
        for i, b in enumerate(self.bones):
            if b.name == name:
                return i
        raise KeyError(name)


@dataclass
class Pose3D:
    """World-space bone segments plus per-bone orientation frames."""

    starts: np.ndarray  # (n_bones, 3)
    ends: np.ndarray  # (n_bones, 3)
    rotations: np.ndarray  # (n_bones, 3, 3) world orientation per bone
    root_rotation: np.ndarray
    root_translation: np.ndarray

    def keypoint_positions(self, rig: SkeletonRig) -> np.ndarray:
        """(17, 3) world positions in KEYPOINT_NAMES order."""
        pts = np.empty((len(KEYPOINT_NAMES), 3))
        for k, name in enumerate(KEYPOINT_NAMES):
            bi, end = rig.keypoint_map[name]
            pts[k] = self.ends[bi] if end == "end" else self.starts[bi]
        return pts

    def validate_lengths(self, rig: SkeletonRig, rel_tol: float = 1e-6) -> None:
        obs = np.linalg.norm(self.ends - self.starts, axis=1)
        ref = np.array([b.length for b in rig.bones])
        if np.any(np.abs(obs - ref) > rel_tol * ref):
            raise KinematicsError("bone lengths inconsistent with the rig")


def rot_x(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def euler_xyz_to_matrix(angles_deg) -> np.ndarray:
    a, b, c = angles_deg
    return rot_x(a) @ rot_y(b) @ rot_z(c)


def matrix_to_euler_xyz(r: np.ndarray) -> np.ndarray:
    """Inverse of euler_xyz_to_matrix on the principal branch (Y in (-90, 90))."""
    b = np.arcsin(np.clip(r[0, 2], -1.0, 1.0))
    a = np.arctan2(-r[1, 2], r[2, 2])
    c = np.arctan2(-r[0, 1], r[0, 0])
    return np.degrees(np.array([a, b, c]))


def forward_kinematics(
    rig: SkeletonRig,
    pose: PoseAngles,
    root_rotation: np.ndarray | None = None,
    root_translation: np.ndarray | None = None,
) -> Pose3D:
    """Chain bone transforms from the root; lengths are preserved exactly.

    Angle joints get their intrinsic X-Y-Z rotation; every other bone keeps
    its rest orientation relative to its parent.
    """
    r0 = np.eye(3) if root_rotation is None else np.asarray(root_rotation, dtype=np.float64)
    t0 = np.zeros(3) if root_translation is None else np.asarray(root_translation, dtype=np.float64)

    joint_of_bone = {bi: j for j, bi in enumerate(rig.angle_joints)}
    n = len(rig.bones)
    starts = np.empty((n, 3))
    ends = np.empty((n, 3))
    rotations = np.empty((n, 3, 3))
    for i, bone in enumerate(rig.bones):
        j = joint_of_bone.get(i)
        if j is None:
            rj = np.eye(3)
        else:
            rj = euler_xyz_to_matrix(pose.values[j * COMPONENTS_PER_JOINT : j * COMPONENTS_PER_JOINT + 3])
        if bone.parent < 0:
            rotations[i] = r0 @ rj @ rig.rel_rotations[i]
            starts[i] = t0
        else:
            rotations[i] = rotations[bone.parent] @ rj @ rig.rel_rotations[i]
            starts[i] = ends[bone.parent] if bone.attach == "end" else starts[bone.parent]
        ends[i] = starts[i] + bone.length * rotations[i][:, 0]
    return Pose3D(starts, ends, rotations, r0, t0)


def extract_angles(rig: SkeletonRig, posed: Pose3D) -> PoseAngles:
    """Recover the 12 joints' Euler angles from a posed skeleton.

    Exact inverse of forward_kinematics on the principal branch; needs the
    per-bone orientation frames since a bone's twist is invisible in its
    endpoint positions alone.
    """
    seg = posed.ends - posed.starts
    lengths = np.linalg.norm(seg, axis=1)
    for i, l in enumerate(lengths):
        if l < 1e-12:
            raise KinematicsError(f"bone {rig.bones[i].name}: observed length is zero")

    values = np.zeros(POSE_DIM)
    for j, bi in enumerate(rig.angle_joints):
        bone = rig.bones[bi]
        parent_rot = posed.rotations[bone.parent]
        rj = parent_rot.T @ posed.rotations[bi] @ rig.rel_rotations[bi].T
        values[j * COMPONENTS_PER_JOINT : j * COMPONENTS_PER_JOINT + 3] = matrix_to_euler_xyz(rj)
    return PoseAngles(values)


@dataclass
class Camera:
    """Pinhole camera: x_cam = rotation @ x_world + translation, +Z forward."""

    focal_px: float
    principal_point: np.ndarray  # (cx, cy)
    image_size: tuple[int, int]  # (width, height)
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.principal_point = np.asarray(self.principal_point, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.focal_px <= 0:
            raise RigError("focal_px must be > 0")
        w, h = self.image_size
        cx, cy = self.principal_point
        if not (0 <= cx < w and 0 <= cy < h):
            raise RigError("principal point must lie inside the image")


def camera_look_at(
    position, target, focal_px: float, image_size: tuple[int, int], up=(0.0, 0.0, 1.0)
) -> Camera:
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    w, h = image_size
    return Camera(focal_px, np.array([w / 2.0, h / 2.0]), image_size, r, -r @ position)


@dataclass
class ProjectedKeypoints:
    xy: np.ndarray  # (17, 2) pixel coordinates (nan when behind the camera)
    depth: np.ndarray  # (17,)
    in_frame: np.ndarray  # (17,) bool


def project_keypoints(posed: Pose3D, rig: SkeletonRig, cam: Camera) -> ProjectedKeypoints:
    pts = posed.keypoint_positions(rig)
    cam_pts = pts @ cam.rotation.T + cam.translation
    depth = cam_pts[:, 2]
    xy = np.full((len(pts), 2), np.nan)
    front = depth > 0
    xy[front, 0] = cam.focal_px * cam_pts[front, 0] / depth[front] + cam.principal_point[0]
    xy[front, 1] = cam.focal_px * cam_pts[front, 1] / depth[front] + cam.principal_point[1]
    w, h = cam.image_size
    in_frame = front & (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
    return ProjectedKeypoints(xy, depth, in_frame)


def shift_projection(
    proj: ProjectedKeypoints, dx: float, dy: float, image_size: tuple[int, int]
) -> ProjectedKeypoints:
    """Translate projected keypoints in image space (e.g. after moving the
    rendered layer) and recompute the in-frame flags."""
    xy = proj.xy + np.array([dx, dy])
    w, h = image_size
    front = proj.depth > 0
    with np.errstate(invalid="ignore"):
        in_frame = front & (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
    return ProjectedKeypoints(xy, proj.depth.copy(), in_frame)


def generate_fk_poses(rig: SkeletonRig, n: int, seed: int) -> list[PoseAngles]:
    """Training poses routed through the skeleton: seeded gait curves are
    posed with forward kinematics and read back with extract_angles."""
    from .poses import make_gait_poses

    return [
        extract_angles(rig, forward_kinematics(rig, pose))
        for pose in make_gait_poses(n, seed)
    ]


@dataclass
class ImageMeta:
    image_id: int
    width: int
    height: int
    file_name: str = ""


@dataclass
class KeypointAnnotation:
    image_id: int
    keypoints: np.ndarray  # (17, 3): x, y, visibility in {0, 1, 2}
    bbox: tuple[float, float, float, float]  # x, y, w, h

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if self.keypoints.shape != (len(KEYPOINT_NAMES), 3):
            raise AnnotationError(f"keypoints must be (17, 3), got {self.keypoints.shape}")
        if not set(np.unique(self.keypoints[:, 2])) <= {0.0, 1.0, 2.0}:
            raise AnnotationError("visibility values must be 0, 1 or 2")
        x, y, w, h = self.bbox
        vis = self.keypoints[self.keypoints[:, 2] > 0]
        if vis.size:
            pad_x, pad_y = 0.1 * w, 0.1 * h
            if (
                vis[:, 0].min() < x - pad_x
                or vis[:, 0].max() > x + w + pad_x
                or vis[:, 1].min() < y - pad_y
                or vis[:, 1].max() > y + h + pad_y
            ):
                raise AnnotationError("visible keypoints fall outside the padded bbox")


def make_annotation(
    projected: ProjectedKeypoints,
    image_meta: ImageMeta,
    occlusion_mask: np.ndarray | None = None,
    bbox_pad: float = 0.05,
) -> KeypointAnnotation:
    """Visibility 2 in frame, 1 when the occlusion mask covers the point,
    0 out of frame (coordinates zeroed). Bbox is the tight box over visible
    points, padded and clipped to the image."""
    n = len(KEYPOINT_NAMES)
    kps = np.zeros((n, 3))
    for k in range(n):
        if not projected.in_frame[k]:
            continue
        x, y = projected.xy[k]
        v = 2.0
        if occlusion_mask is not None and occlusion_mask[int(y), int(x)]:
            v = 1.0
        kps[k] = (x, y, v)
    visible = kps[:, 2] > 0
    if not np.any(visible):
        raise AnnotationError(f"image {image_meta.image_id}: every keypoint is out of frame")

    xs, ys = kps[visible, 0], kps[visible, 1]
    bw, bh = xs.max() - xs.min(), ys.max() - ys.min()
    x0 = max(xs.min() - bbox_pad * bw, 0.0)
    y0 = max(ys.min() - bbox_pad * bh, 0.0)
    x1 = min(xs.max() + bbox_pad * bw, float(image_meta.width))
    y1 = min(ys.max() + bbox_pad * bh, float(image_meta.height))
    return KeypointAnnotation(image_meta.image_id, kps, (x0, y0, x1 - x0, y1 - y0))


def annotations_to_coco(
    annotations: list[KeypointAnnotation],
    images: list[ImageMeta],
    category_name: str = "quadruped",
) -> dict:
    """COCO-style keypoint document in the 17-keypoint AP10K layout."""
    return {
        "images": [
            {"id": m.image_id, "width": m.width, "height": m.height, "file_name": m.file_name}
            for m in images
        ],
        "annotations": [
            {
                "id": i + 1,
                "image_id": a.image_id,
                "category_id": 1,
                "keypoints": [float(v) for v in a.keypoints.ravel()],
                "num_keypoints": int(np.sum(a.keypoints[:, 2] > 0)),
                "bbox": [float(v) for v in a.bbox],
                "area": float(a.bbox[2] * a.bbox[3]),
                "iscrowd": 0,
            }
            for i, a in enumerate(annotations)
        ],
        "categories": [
            {
                "id": 1,
                "name": category_name,
                "supercategory": "animal",
                "keypoints": list(KEYPOINT_NAMES),
                "skeleton": [list(e) for e in SKELETON_EDGES],
            }
        ],
    }


def save_rig(path: str | Path, rig: SkeletonRig) -> None:
    doc = {
        "format": RIG_FORMAT,
        "version": 1,
        "euler_convention": rig.euler_convention,
        "bones": [
            {
                "name": b.name,
                "parent": None if b.parent < 0 else rig.bones[b.parent].name,
                "attach": b.attach,
                "direction": [float(v) for v in b.direction],
                "length": b.length,
            }
            for b in rig.bones
        ],
        "keypoints": {
            kp: [rig.bones[bi].name, end] for kp, (bi, end) in rig.keypoint_map.items()
        },
        "angle_joints": [rig.bones[bi].name for bi in rig.angle_joints],
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_rig(path: str | Path) -> SkeletonRig:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != RIG_FORMAT:
        raise RigError(f"{path}: not a {RIG_FORMAT} file")
    return _rig_from_doc(doc)


def _rig_from_doc(doc: dict) -> SkeletonRig:
    names = [b["name"] for b in doc["bones"]]
    index = {n: i for i, n in enumerate(names)}
    bones = []
    for b in doc["bones"]:
        parent = -1 if b["parent"] is None else index[b["parent"]]
        bones.append(
            Bone(
                b["name"],
                parent,
                b.get("attach", "end"),
                np.asarray(b["direction"], dtype=np.float64),
                float(b["length"]),
            )
        )
    keypoint_map = {kp: (index[bone], end) for kp, (bone, end) in doc["keypoints"].items()}
    angle_joints = [index[n] for n in doc["angle_joints"]]
    return SkeletonRig(bones, keypoint_map, angle_joints, doc.get("euler_convention", EULER_CONVENTION))


def save_camera(path: str | Path, cam: Camera) -> None:
    doc = {
        "format": CAMERA_FORMAT,
        "version": 1,
        "focal_px": cam.focal_px,
        "principal_point": [float(v) for v in cam.principal_point],
        "image_size": list(cam.image_size),
        "rotation": [[float(v) for v in row] for row in cam.rotation],
        "translation": [float(v) for v in cam.translation],
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_camera(path: str | Path) -> Camera:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != CAMERA_FORMAT:
        raise RigError(f"{path}: not a {CAMERA_FORMAT} file")
    return _camera_from_doc(doc)


def _camera_from_doc(doc: dict) -> Camera:
    return Camera(
        float(doc["focal_px"]),
        np.asarray(doc["principal_point"], dtype=np.float64),
        (int(doc["image_size"][0]), int(doc["image_size"][1])),
        np.asarray(doc["rotation"], dtype=np.float64),
        np.asarray(doc["translation"], dtype=np.float64),
    )


def _packaged_json(name: str) -> dict:
    from importlib.resources import files

    return json.loads((files("quadprior") / "data" / name).read_text())


def default_rig() -> SkeletonRig:
    """The generic quadruped fixture rig shipped with the package."""
    return _rig_from_doc(_packaged_json("quadruped_rig.json"))


def default_camera() -> Camera:
    return _camera_from_doc(_packaged_json("camera.json"))
