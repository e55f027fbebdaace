"""Ground-truth density maps, counting by integration, and heatmap overlays."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from crowdmap.annotations import FrameAnnotation, GridSpec, Point
from crowdmap.errors import ValidationError

DEFAULT_SIGMA = 8.0
OVERLAY_EPS = 1e-12
_CDM_MAGIC = "CDM1"


@dataclass(frozen=True)
class KernelParams:
    """Isotropic Gaussian kernel used to spread each head over the grid.

    Attributes:
        sigma: Standard deviation in pixels.
        normalized: Unit-mass Gaussian when True, bare ``exp(-r^2 / 2 sigma^2)``
            otherwise.
        truncation_radius: Cut-off in units of sigma; ``None`` keeps the full
            kernel. Truncation is an approximation and loses a little mass.
    """

    sigma: float = DEFAULT_SIGMA
    normalized: bool = True
    truncation_radius: float | None = None

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if self.truncation_radius is not None and not self.truncation_radius > 0:
            raise ValidationError(
                f"truncation radius must be positive or None, got {self.truncation_radius}"
            )

    @property
    def peak(self) -> float:
        return 1.0 / (2.0 * math.pi * self.sigma**2) if self.normalized else 1.0


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Non-negative density mass per grid cell, shaped ``(rows, cols)``."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != self.spec.size:
            raise ValidationError(
                f"grid expects {self.spec.size} values ({self.spec.rows}x{self.spec.cols}), "
                f"got {values.size}"
            )
        values = values.reshape(self.spec.shape)
        if not np.all(np.isfinite(values)):
            raise ValidationError("density values must be finite")
        if np.any(values < 0):
            raise ValidationError("density values must be non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, spec: GridSpec) -> DensityGrid:
        return cls(spec, np.zeros(spec.shape))

    def flat(self) -> np.ndarray:
        """Row-major view of length M."""
        return self.values.ravel()


def gaussian_at(x: Point, z: Point, params: KernelParams) -> float:
    """Kernel value at pixel ``x`` for a head centered at ``z``."""
    r2 = (x[0] - z[0]) ** 2 + (x[1] - z[1]) ** 2
    if params.truncation_radius is not None and r2 > (params.truncation_radius * params.sigma) ** 2:
        return 0.0
    return params.peak * math.exp(-r2 / (2.0 * params.sigma**2))


def generate_gt_density(
    frame: FrameAnnotation, spec: GridSpec, params: KernelParams = KernelParams()
) -> DensityGrid:
    """Sum one Gaussian per annotated head, sampled at every cell center.

    Each cell stores density times cell area (``stride**2``), so the raster
    sums to approximately the number of heads whatever the stride. Heads are
    accumulated in annotation order, which keeps results reproducible.
    """
    if not spec.covers(frame):
        raise ValidationError(
            f"grid {spec.cols}x{spec.rows} at stride {spec.stride:g} does not match "
            f"frame {frame.frame_id!r} ({frame.image_width}x{frame.image_height})"
        )
    xs, ys = spec.axis_centers()
    two_s2 = 2.0 * params.sigma**2
    out = np.zeros(spec.shape)
    cutoff2 = None
    if params.truncation_radius is not None:
        cutoff2 = (params.truncation_radius * params.sigma) ** 2
    for zx, zy in frame.points:
        dx2 = (xs - zx) ** 2
        dy2 = (ys - zy) ** 2
        # The isotropic kernel factorizes into a row profile times a column profile.
        kernel = np.outer(np.exp(-dy2 / two_s2), np.exp(-dx2 / two_s2))
        if cutoff2 is not None:
            kernel[dy2[:, None] + dx2[None, :] > cutoff2] = 0.0
        out += kernel
    out *= params.peak * spec.stride**2
    return DensityGrid(spec, out)


def total_count(grid: DensityGrid) -> float:
    """Estimated number of people: the sum of all cell masses."""
    return float(grid.values.sum())


def upsample(grid: DensityGrid, width: int, height: int) -> np.ndarray:
    """Nearest-cell lookup of a grid onto a ``height x width`` pixel raster."""
    ci = np.minimum((np.arange(width) / grid.spec.stride).astype(np.int64), grid.spec.cols - 1)
    ri = np.minimum((np.arange(height) / grid.spec.stride).astype(np.int64), grid.spec.rows - 1)
    return grid.values[np.ix_(ri, ci)]


def render_overlay(image: np.ndarray, grid: DensityGrid) -> np.ndarray:
    """Replace the red channel of an RGB image with the density heatmap.

    The density is scaled by the grid's own maximum, so the densest cell
    always saturates at 255. Green and blue pass through untouched, which is
    why frames with little density look blue-green.

    Args:
        image: ``(H, W, 3)`` uint8 array. ``H`` and ``W`` must map onto the
            grid, i.e. ``ceil(W / stride) == cols`` and likewise for rows.
        grid: The density to paint.

    Returns:
        A new ``(H, W, 3)`` uint8 array.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected an (H, W, 3) RGB image, got shape {image.shape}")
    height, width = image.shape[:2]
    if GridSpec.for_image(width, height, grid.spec.stride) != grid.spec:
        raise ValidationError(
            f"image {width}x{height} does not match grid {grid.spec.cols}x{grid.spec.rows} "
            f"at stride {grid.spec.stride:g}"
        )
    dense = upsample(grid, width, height)
    peak = max(float(grid.values.max()), OVERLAY_EPS)
    red = np.rint(255.0 * np.minimum(1.0, dense / peak)).astype(np.uint8)
    out = image.astype(np.uint8, copy=True)
    out[..., 0] = red
    return out


def write_cdm(grid: DensityGrid, path: str | Path) -> None:
    """Write a ``CDM1`` raster: ASCII header then little-endian float32 values."""
    header = f"{_CDM_MAGIC} {grid.spec.cols} {grid.spec.rows} {grid.spec.stride!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(grid.values.astype("<f4").tobytes(order="C"))


def read_cdm(path: str | Path) -> DensityGrid:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"density raster not found: {path}")
    blob = path.read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise ValidationError(f"{path}: missing CDM1 header line")
    parts = blob[:newline].decode("ascii", errors="replace").split()
    if len(parts) != 4 or parts[0] != _CDM_MAGIC:
        raise ValidationError(f"{path}: not a CDM1 raster")
    try:
        spec = GridSpec(stride=float(parts[3]), cols=int(parts[1]), rows=int(parts[2]))
    except ValueError:
        raise ValidationError(f"{path}: unreadable CDM1 header {parts!r}") from None
    payload = blob[newline + 1 :]
    if len(payload) != 4 * spec.size:
        raise ValidationError(
            f"{path}: expected {spec.size} float32 values, found {len(payload) / 4:g}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return DensityGrid(spec, values)


def read_png(path: str | Path) -> np.ndarray:
    from PIL import Image

    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"image not found: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_png(image: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path, format="PNG")
