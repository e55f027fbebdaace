"""Counting people from an external detector's bounding boxes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from crowdmap.errors import ValidationError

PERSON = "person"
DEFAULT_SCORE_THRESHOLD = 0.5
FPN_CANONICAL_SIZE = 224.0
FPN_MIN_LEVEL = 2
FPN_MAX_LEVEL = 5


@dataclass(frozen=True)
class Detection:
    bbox: tuple[float, float, float, float]
    label: str
    score: float

    def __post_init__(self):
        x1, y1, x2, y2 = self.bbox
        if not (x2 > x1 and y2 > y1):
            raise ValidationError(f"degenerate box {self.bbox}: need x2 > x1 and y2 > y1")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.bbox[2] - self.bbox[0]

    @property
    def height(self) -> float:
        return self.bbox[3] - self.bbox[1]


@dataclass(frozen=True)
class DetectionSet:
    frame_id: str
    detections: tuple[Detection, ...] = field(default_factory=tuple)


def fpn_level(w: float, h: float, k0: int = 4) -> int:
    """Pyramid level an ROI of size ``w x h`` is pooled from.

    ``floor(k0 + log2(sqrt(w * h) / 224))``, clamped to levels 2..5.
    """
    if not (w > 0 and h > 0):
        raise ValidationError(f"ROI width and height must be positive, got {w}x{h}")
    k = math.floor(k0 + math.log2(math.sqrt(w * h) / FPN_CANONICAL_SIZE))
    return min(max(k, FPN_MIN_LEVEL), FPN_MAX_LEVEL)


def count_persons(dets: DetectionSet, score_threshold: float = DEFAULT_SCORE_THRESHOLD) -> int:
    """Number of ``person`` detections scoring at least ``score_threshold``.

    Every other label is ignored, so a dog boxed as ``person`` still counts.
    """
    if not 0.0 <= score_threshold <= 1.0:
        raise ValidationError(f"score threshold must be in [0, 1], got {score_threshold}")
    return sum(1 for d in dets.detections if d.label == PERSON and d.score >= score_threshold)


def _parse_detection(raw, frame_id: str, index: int) -> Detection:
    where = f"frame {frame_id!r}, detection {index}"
    if not isinstance(raw, dict):
        raise ValidationError(f"{where}: expected an object")
    missing = [k for k in ("bbox", "label", "score") if k not in raw]
    if missing:
        raise ValidationError(f"{where}: missing required field(s) {', '.join(missing)}")
    bbox = raw["bbox"]
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise ValidationError(f"{where}: bbox must be [x1, y1, x2, y2]")
    try:
        return Detection(tuple(float(v) for v in bbox), str(raw["label"]), float(raw["score"]))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from None


def parse_detections(doc: dict) -> list[DetectionSet]:
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise ValidationError('detections document must be an object with a "frames" list')
    sets = []
    for i, frame in enumerate(doc["frames"]):
        if not isinstance(frame, dict) or "id" not in frame or "detections" not in frame:
            raise ValidationError(f"frame {i}: missing required field 'id' or 'detections'")
        frame_id = str(frame["id"])
        dets = tuple(_parse_detection(d, frame_id, k) for k, d in enumerate(frame["detections"]))
        sets.append(DetectionSet(frame_id, dets))
    return sets


def load_detections(path: str | Path) -> list[DetectionSet]:
    """Read a detections JSON file; unknown fields are ignored."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"detections file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from None
    return parse_detections(doc)
