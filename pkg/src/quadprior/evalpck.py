"""PCK scoring of keypoint predictions against COCO-style ground truth.

A keypoint counts toward the score when its ground-truth visibility is > 0
(occluded-but-labeled points included by default; configurable). A predicted
point is correct when its Euclidean pixel distance from ground truth is at
most alpha times the normalizer, which defaults to the larger bbox side.
Distances exactly at the threshold count as correct.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .skeleton import KEYPOINT_NAMES, KeypointAnnotation

NORMALIZERS = ("bbox-max", "bbox-diagonal", "torso-length")

_NECK = KEYPOINT_NAMES.index("neck")
_TAIL = KEYPOINT_NAMES.index("root_of_tail")


class EvalError(ValueError):
    """Malformed evaluation inputs or an empty evaluation."""


@dataclass
class EvalPair:
    image_id: int
    gt: KeypointAnnotation
    pred: np.ndarray  # (17, 3): x, y, confidence

    def __post_init__(self):
        self.pred = np.asarray(self.pred, dtype=np.float64)
        if self.pred.shape != (len(KEYPOINT_NAMES), 3):
            raise EvalError(
                f"image {self.image_id}: prediction must be (17, 3), got {self.pred.shape}"
            )


@dataclass
class PckResult:
    per_keypoint: np.ndarray  # (17,) fraction correct (0.0 where counted == 0)
    counted: np.ndarray  # (17,) denominators
    mean: float
    alpha: float
    normalizer: str
    count_occluded: bool


def _parse_keypoint_triples(raw, where: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != (3 * len(KEYPOINT_NAMES),):
        raise EvalError(f"{where}: keypoints must be a flat array of 51 numbers, got {arr.shape}")
    return arr.reshape(len(KEYPOINT_NAMES), 3)


def load_dataset(gt_file: str | Path, pred_file: str | Path) -> list[EvalPair]:
    """Join predictions to ground truth on image_id.

    Ground truth is COCO-style keypoint JSON (one annotation per image);
    predictions are a JSON list of {image_id, keypoints: 51 floats}. A
    prediction whose image_id has no ground truth is an error.
    """
    gt_file, pred_file = Path(gt_file), Path(pred_file)
    try:
        gt_doc = json.loads(gt_file.read_text())
    except json.JSONDecodeError as e:
        raise EvalError(f"{gt_file}: not valid JSON: {e}") from e
    try:
        pred_doc = json.loads(pred_file.read_text())
    except json.JSONDecodeError as e:
        raise EvalError(f"{pred_file}: not valid JSON: {e}") from e

    if not isinstance(gt_doc, dict) or "annotations" not in gt_doc:
        raise EvalError(f"{gt_file}: expected a COCO-style object with 'annotations'")
    if not isinstance(pred_doc, list):
        raise EvalError(f"{pred_file}: expected a JSON array of predictions")

    gt_by_image: dict[int, KeypointAnnotation] = {}
    for i, ann in enumerate(gt_doc["annotations"]):
        try:
            image_id = int(ann["image_id"])
            kps = _parse_keypoint_triples(ann["keypoints"], f"{gt_file}: annotation {i}")
            bbox = tuple(float(v) for v in ann["bbox"])
        except (KeyError, TypeError, ValueError) as e:
            raise EvalError(f"{gt_file}: annotation {i}: {e}") from e
        if image_id in gt_by_image:
            raise EvalError(f"{gt_file}: multiple annotations for image_id {image_id}")
        gt_by_image[image_id] = KeypointAnnotation(image_id, kps, bbox)

    pairs = []
    for i, entry in enumerate(pred_doc):
        try:
            image_id = int(entry["image_id"])
            pred = _parse_keypoint_triples(entry["keypoints"], f"{pred_file}: entry {i}")
        except (KeyError, TypeError, ValueError) as e:
            raise EvalError(f"{pred_file}: entry {i}: {e}") from e
        if image_id not in gt_by_image:
            raise EvalError(f"{pred_file}: entry {i}: no ground truth for image_id {image_id}")
        pairs.append(EvalPair(image_id, gt_by_image[image_id], pred))
    return pairs


def _normalizer_value(gt: KeypointAnnotation, normalizer: str) -> float:
    x, y, w, h = gt.bbox
    if normalizer == "bbox-max":
        return max(w, h)
    if normalizer == "bbox-diagonal":
        return float(np.hypot(w, h))
    if normalizer == "torso-length":
        neck, tail = gt.keypoints[_NECK, :2], gt.keypoints[_TAIL, :2]
        torso = float(np.linalg.norm(neck - tail))
        if torso <= 0:
            raise EvalError(f"image {gt.image_id}: zero torso length")
        return torso
    raise EvalError(f"unknown normalizer {normalizer!r} (choose from {NORMALIZERS})")


def pck(
    pairs: list[EvalPair],
    alpha: float = 0.05,
    normalizer: str = "bbox-max",
    count_occluded: bool = True,
) -> PckResult:
    """Per-keypoint and pooled PCK@alpha over the evaluation pairs."""
    if alpha <= 0:
        raise EvalError("alpha must be > 0")
    n = len(KEYPOINT_NAMES)
    counted = np.zeros(n, dtype=np.int64)
    correct = np.zeros(n, dtype=np.int64)
    min_vis = 1.0 if count_occluded else 2.0
    for pair in pairs:
        threshold = alpha * _normalizer_value(pair.gt, normalizer)
        for k in range(n):
            if pair.gt.keypoints[k, 2] < min_vis:
                continue
            counted[k] += 1
            dist = float(np.linalg.norm(pair.pred[k, :2] - pair.gt.keypoints[k, :2]))
            if dist <= threshold:
                correct[k] += 1
    if counted.sum() == 0:
        raise EvalError("no keypoints to evaluate (all invisible or no pairs)")
    fractions = np.where(counted > 0, correct / np.maximum(counted, 1), 0.0)
    mean = float(correct.sum() / counted.sum())
    return PckResult(fractions, counted, mean, alpha, normalizer, count_occluded)


def _visibility_note(result: PckResult) -> str:
    return "counting v>=1 (occluded included)" if result.count_occluded else "counting v==2 only"


def report(result: PckResult, format: str = "text") -> str:
    """Render the result; keypoint order is fixed (17 names then mean)."""
    if format == "text":
        out = io.StringIO()
        out.write(
            f"PCK@{result.alpha:g}  normalizer={result.normalizer}  {_visibility_note(result)}\n"
        )
        width = max(len(n) for n in KEYPOINT_NAMES)
        out.write(f"{'keypoint':<{width}}  counted  accuracy\n")
        for k, name in enumerate(KEYPOINT_NAMES):
            acc = "    n/a" if result.counted[k] == 0 else f"{100.0 * result.per_keypoint[k]:7.1f}"
            out.write(f"{name:<{width}}  {result.counted[k]:7d}  {acc}\n")
        out.write(f"{'mean':<{width}}  {int(result.counted.sum()):7d}  {100.0 * result.mean:7.1f}\n")
        return out.getvalue()
    if format == "csv":
        lines = [
            f"# PCK@{result.alpha:g} normalizer={result.normalizer} {_visibility_note(result)}",
            "keypoint,counted,fraction",
        ]
        for k, name in enumerate(KEYPOINT_NAMES):
            lines.append(f"{name},{int(result.counted[k])},{float(result.per_keypoint[k])!r}")
        lines.append(f"mean,{int(result.counted.sum())},{float(result.mean)!r}")
        return "\n".join(lines) + "\n"
    if format == "json":
        doc = {
            "alpha": result.alpha,
            "normalizer": result.normalizer,
            "count_occluded": result.count_occluded,
            "per_keypoint": {
                name: {"fraction": float(result.per_keypoint[k]), "counted": int(result.counted[k])}
                for k, name in enumerate(KEYPOINT_NAMES)
            },
            "mean": result.mean,
        }
        return json.dumps(doc, indent=2) + "\n"
    raise EvalError(f"unknown report format {format!r} (text, csv or json)")


def parse_csv_report(text: str) -> dict[str, tuple[int, float]]:
    """Inverse of report(format='csv'), for round-trip checks and tooling."""
    rows = {}
    for line in text.splitlines():
        if not line or line.startswith("#") or line.startswith("keypoint,"):
            continue
        name, counted, fraction = line.split(",")
        rows[name] = (int(counted), float(fraction))
    return rows
