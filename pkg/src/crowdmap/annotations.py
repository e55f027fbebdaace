"""Head-point annotations, frame metadata and the density grid geometry.

Coordinates follow the usual image convention: ``x`` is the column (grows
rightward), ``y`` is the row (grows downward), origin at the top-left corner,
sub-pixel values allowed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from crowdmap.errors import ValidationError

Point = tuple[float, float]


@dataclass(frozen=True)
class FrameAnnotation:
    """One frame with its head-center annotations.

    Attributes:
        frame_id: Free-form identifier, e.g. ``"garden_f120"``.
        image_width: Width in pixels.
        image_height: Height in pixels.
        points: Head centers ``(x, y)`` in annotation order. The index of a
            point is the head label used everywhere else in the package.
    """

    frame_id: str
    image_width: int
    image_height: int
    points: tuple[Point, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.image_width < 1 or self.image_height < 1:
            raise ValidationError(
                f"frame {self.frame_id!r}: image dimensions must be >= 1, "
                f"got {self.image_width}x{self.image_height}"
            )
        pts = tuple((float(x), float(y)) for x, y in self.points)
        for idx, (x, y) in enumerate(pts):
            if not (0.0 <= x < self.image_width and 0.0 <= y < self.image_height):
                raise ValidationError(
                    f"frame {self.frame_id!r}: point {idx} at ({x:g}, {y:g}) lies "
                    f"outside the {self.image_width}x{self.image_height} image"
                )
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def points_array(self) -> np.ndarray:
        """Points as an ``(N, 2)`` float array of ``(x, y)`` rows."""
        return np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    def to_dict(self) -> dict:
        return {
            "id": self.frame_id,
            "width": self.image_width,
            "height": self.image_height,
            "points": [[x, y] for x, y in self.points],
        }


@dataclass(frozen=True)
class GridSpec:
    """Raster geometry: ``cols x rows`` cells of ``stride`` pixels each.

    Cell ``(i, j)`` (column ``i``, row ``j``) is represented by its pixel-space
    center ``((i + 0.5) * stride, (j + 0.5) * stride)``. Rasters are stored
    row-major, so flat index ``m = j * cols + i``.
    """

    stride: float
    cols: int
    rows: int

    def __post_init__(self):
        if not (self.stride > 0 and math.isfinite(self.stride)):
            raise ValidationError(f"stride must be a positive finite number, got {self.stride}")
        if self.cols < 1 or self.rows < 1:
            raise ValidationError(f"grid must have at least one cell, got {self.cols}x{self.rows}")

    @classmethod
    def from_frame(cls, frame: FrameAnnotation, stride: float = 1.0) -> GridSpec:
        return cls.for_image(frame.image_width, frame.image_height, stride)

    @classmethod
    def for_image(cls, width: int, height: int, stride: float = 1.0) -> GridSpec:
        if not stride > 0:
            raise ValidationError(f"stride must be positive, got {stride}")
        return cls(
            stride=float(stride),
            cols=math.ceil(width / stride),
            rows=math.ceil(height / stride),
        )

    @property
    def shape(self) -> tuple[int, int]:
        """``(rows, cols)``, the numpy shape of a raster on this grid."""
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def axis_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates along x (length cols) and y (length rows)."""
        xs = (np.arange(self.cols, dtype=np.float64) + 0.5) * self.stride
        ys = (np.arange(self.rows, dtype=np.float64) + 0.5) * self.stride
        return xs, ys

    def cell_centers(self) -> np.ndarray:
        """All cell centers as an ``(M, 2)`` array in row-major order."""
        xs, ys = self.axis_centers()
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def covers(self, frame: FrameAnnotation) -> bool:
        """True when this grid is the one derived from ``frame`` at this stride."""
        return self == GridSpec.from_frame(frame, self.stride)


def _parse_frame(raw: dict, index: int) -> FrameAnnotation:
    try:
        frame_id = str(raw["id"])
        width = raw["width"]
        height = raw["height"]
        points = raw["points"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"frame {index}: missing required field {exc}") from None
    if not isinstance(width, int) or not isinstance(height, int):
        raise ValidationError(f"frame {index} ({frame_id!r}): width/height must be integers")
    if width < 0 or height < 0:
        raise ValidationError(
            f"frame {index} ({frame_id!r}): negative dimensions {width}x{height}"
        )
    parsed = []
    for k, pt in enumerate(points):
        if not isinstance(pt, (list, tuple)) or len(pt) != 2:
            raise ValidationError(f"frame {index} ({frame_id!r}): point {k} is not an [x, y] pair")
        parsed.append((float(pt[0]), float(pt[1])))
    try:
        return FrameAnnotation(frame_id, width, height, tuple(parsed))
    except ValidationError as exc:
        raise ValidationError(f"frame {index}: {exc}") from None


def parse_annotations(doc: dict) -> list[FrameAnnotation]:
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise ValidationError('annotation document must be an object with a "frames" list')
    return [_parse_frame(raw, i) for i, raw in enumerate(doc["frames"])]


def load_annotations(path: str | Path) -> list[FrameAnnotation]:
    """Read an annotation JSON file.

    The expected layout is
    ``{"frames": [{"id": ..., "width": W, "height": H, "points": [[x, y], ...]}]}``.
    Frames come back in file order. Any invalid frame aborts the load with a
    :class:`ValidationError` naming the frame (and point) index.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"annotation file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from None
    return parse_annotations(doc)


def dump_annotations(frames: Iterable[FrameAnnotation]) -> str:
    return json.dumps({"frames": [f.to_dict() for f in frames]})


def save_annotations(frames: Sequence[FrameAnnotation], path: str | Path) -> None:
    Path(path).write_text(dump_annotations(frames), encoding="utf-8")


def synth_lattice(
    rows: int, cols: int, spacing: float, margin: float, frame_id: str = "lattice"
) -> FrameAnnotation:
    """Build a regular grid of heads, handy as a synthetic test frame.

    Point ``(r, c)`` sits at ``(margin + c * spacing, margin + r * spacing)``.
    The image is the smallest integer size that keeps ``margin`` pixels of
    free space after the last point, so ``(3, 3, 64, 32)`` gives a 160x160
    frame.
    """
    if rows < 1 or cols < 1:
        raise ValidationError("lattice needs at least one row and one column")
    if not spacing > 0 or margin < 0:
        raise ValidationError("lattice needs spacing > 0 and margin >= 0")
    points = tuple(
        (margin + c * spacing, margin + r * spacing) for r in range(rows) for c in range(cols)
    )
    # The strict upper bound on coordinates needs at least one pixel past the last point.
    width = max(math.ceil(2 * margin + (cols - 1) * spacing), math.floor(points[-1][0]) + 1)
    height = max(math.ceil(2 * margin + (rows - 1) * spacing), math.floor(points[-1][1]) + 1)
    return FrameAnnotation(frame_id, width, height, points)
