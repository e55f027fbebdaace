"""Point-supervised Bayesian counting loss with a background label.

Every cell of an estimated density is softly assigned to the annotated heads
(and optionally to a per-cell background point) through Gaussian likelihoods
normalized by Bayes' rule with uniform priors. The posterior-weighted sums are
the expected counts; the loss is the L1 distance of those counts from 1 per
head and 0 for background.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from crowdmap.annotations import FrameAnnotation, GridSpec, Point
from crowdmap.density import DEFAULT_SIGMA, DensityGrid
from crowdmap.errors import DegenerateDirectionError, ValidationError

DEFAULT_D = 0.15
ROW_SUM_TOL = 1e-9

DMode = Literal["fraction", "absolute"]


@dataclass(frozen=True)
class BayesConfig:
    """Loss settings.

    Attributes:
        sigma: Kernel standard deviation in pixels.
        background_enabled: Add the background label ``y_0``.
        d: Distance from a head to its background point. With
            ``d_mode="fraction"`` it is a fraction of the image's shorter side,
            with ``d_mode="absolute"`` it is in pixels.
        d_mode: ``"fraction"`` or ``"absolute"``.
        literal_background_numerator: Use the nearest head's likelihood in the
            numerator of the background posterior instead of the background
            likelihood. Off by default; rows then no longer sum to one. Kept
            only for side-by-side comparison.
    """

    sigma: float = DEFAULT_SIGMA
    background_enabled: bool = True
    d: float = DEFAULT_D
    d_mode: DMode = "fraction"
    literal_background_numerator: bool = False

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if self.d_mode not in ("fraction", "absolute"):
            raise ValidationError(f"d_mode must be 'fraction' or 'absolute', got {self.d_mode!r}")
        if not (self.d > 0 and math.isfinite(self.d)):
            raise ValidationError(f"d must be positive, got {self.d}")
        if self.d_mode == "fraction" and self.d >= 1:
            raise ValidationError(f"fractional d must be < 1, got {self.d}")

    def d_pixels(self, frame: FrameAnnotation) -> float:
        if self.d_mode == "absolute":
            return float(self.d)
        return self.d * min(frame.image_width, frame.image_height)


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    """Per-cell label probabilities.

    ``rows`` has shape ``(M, N)`` or ``(M, N + 1)`` when background is on;
    the background column is last.
    """

    spec: GridSpec
    n_heads: int
    background_enabled: bool
    rows: np.ndarray
    literal_background_numerator: bool = False

    def __post_init__(self):
        width = self.n_heads + (1 if self.background_enabled else 0)
        if self.rows.shape != (self.spec.size, width):
            raise ValidationError(
                f"posterior table shape {self.rows.shape} != ({self.spec.size}, {width})"
            )
        if np.any(self.rows < 0) or np.any(self.rows > 1 + ROW_SUM_TOL):
            raise ValidationError("posterior entries must lie in [0, 1]")
        if not self.literal_background_numerator:
            err = np.abs(self.rows.sum(axis=1) - 1.0).max(initial=0.0)
            if err > ROW_SUM_TOL:
                raise ValidationError(f"posterior rows do not sum to 1 (max error {err:.3g})")

    @property
    def heads(self) -> np.ndarray:
        """``(M, N)`` head columns."""
        return self.rows[:, : self.n_heads]

    @property
    def background(self) -> np.ndarray | None:
        """``(M,)`` background column, or None."""
        return self.rows[:, self.n_heads] if self.background_enabled else None


@dataclass(frozen=True, eq=False)
class LossResult:
    loss: float
    expected_counts: np.ndarray
    expected_background: float
    gradient: np.ndarray

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "expected_counts": [float(c) for c in self.expected_counts],
            "expected_background": self.expected_background,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _require_grid(frame: FrameAnnotation, spec: GridSpec) -> None:
    if not spec.covers(frame):
        raise ValidationError(
            f"grid {spec.cols}x{spec.rows} at stride {spec.stride:g} does not match "
            f"frame {frame.frame_id!r} ({frame.image_width}x{frame.image_height})"
        )


def _squared_distances(frame: FrameAnnotation, spec: GridSpec) -> np.ndarray:
    """``(M, N)`` squared distances from each cell center to each head."""
    centers = spec.cell_centers()
    diff = centers[:, None, :] - frame.points_array()[None, :, :]
    return np.einsum("mnk,mnk->mn", diff, diff)


def likelihoods(frame: FrameAnnotation, spec: GridSpec, cfg: BayesConfig) -> np.ndarray:
    """Normalized Gaussian likelihood of every cell center under every head.

    Returns an ``(M, N)`` array. Far-away entries may underflow to zero; use
    :func:`posterior` for normalized probabilities, which works in log space.
    """
    if frame.n_points == 0:
        raise ValidationError(
            f"frame {frame.frame_id!r} has no annotated heads; use the background-only loss"
        )
    _require_grid(frame, spec)
    r2 = _squared_distances(frame, spec)
    return np.exp(-r2 / (2.0 * cfg.sigma**2)) / (2.0 * math.pi * cfg.sigma**2)


def background_point(x: Point, z_nearest: Point, d_pixels: float) -> Point:
    """Point at distance ``d_pixels`` from ``z_nearest`` in the direction of ``x``.

    Raises:
        DegenerateDirectionError: ``x`` coincides with ``z_nearest``, so the
            direction is undefined. :func:`background_likelihood` handles that
            case through the distance form.
    """
    if not d_pixels > 0:
        raise ValidationError(f"d_pixels must be positive, got {d_pixels}")
    dx, dy = x[0] - z_nearest[0], x[1] - z_nearest[1]
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        raise DegenerateDirectionError(
            f"pixel {x} coincides with its nearest head; background direction undefined"
        )
    return (z_nearest[0] + d_pixels * dx / norm, z_nearest[1] + d_pixels * dy / norm)


def _nearest_distance(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = x[..., None, :] - points
    return np.sqrt(np.min(np.einsum("...nk,...nk->...n", diff, diff), axis=-1))


def background_likelihood(x: Point, frame: FrameAnnotation, cfg: BayesConfig) -> float:
    """Gaussian likelihood of pixel ``x`` under its background point.

    Since the background point lies on the ray from the nearest head through
    ``x``, its distance to ``x`` is ``|r - d|`` with ``r`` the distance to the
    nearest head. This form stays defined when ``x`` sits exactly on a head.
    """
    if frame.n_points == 0:
        raise ValidationError(f"frame {frame.frame_id!r} has no heads to anchor a background point")
    r = float(_nearest_distance(frame.points_array(), np.asarray(x, dtype=np.float64)))
    d = cfg.d_pixels(frame)
    return math.exp(-((r - d) ** 2) / (2.0 * cfg.sigma**2)) / (2.0 * math.pi * cfg.sigma**2)


def posterior_from_likelihoods(
    head_lik: np.ndarray, background_lik: np.ndarray | None = None
) -> np.ndarray:
    """Bayes' rule with uniform priors: divide each row by its total.

    Args:
        head_lik: ``(M, N)`` non-negative likelihoods.
        background_lik: Optional ``(M,)`` background likelihoods, appended as
            the last column.

    Returns:
        ``(M, N)`` or ``(M, N + 1)`` row-stochastic array.
    """
    lik = head_lik if background_lik is None else np.column_stack([head_lik, background_lik])
    total = lik.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        bad = int(np.flatnonzero(total.ravel() <= 0)[0])
        raise ValidationError(f"all likelihoods vanish at cell {bad}; posterior undefined")
    return lik / total


def posterior(frame: FrameAnnotation, spec: GridSpec, cfg: BayesConfig) -> PosteriorTable:
    """Posterior label probabilities for every cell of ``spec``.

    Likelihoods are formed in log space and rescaled per row by their maximum
    before normalizing. Rescaling a row by a positive constant does not change
    its posterior, and it keeps cells far from every head from underflowing
    to an all-zero row.
    """
    if frame.n_points == 0:
        raise ValidationError(
            f"frame {frame.frame_id!r} has no annotated heads; use the background-only loss"
        )
    _require_grid(frame, spec)
    two_s2 = 2.0 * cfg.sigma**2
    r2 = _squared_distances(frame, spec)
    log_heads = -r2 / two_s2
    log_bg = None
    if cfg.background_enabled:
        r = np.sqrt(r2.min(axis=1))
        log_bg = -((r - cfg.d_pixels(frame)) ** 2) / two_s2
        shift = np.maximum(log_heads.max(axis=1), log_bg)
    else:
        shift = log_heads.max(axis=1)
    heads = np.exp(log_heads - shift[:, None])
    bg = None if log_bg is None else np.exp(log_bg - shift)
    rows = posterior_from_likelihoods(heads, bg)
    if cfg.background_enabled and cfg.literal_background_numerator:
        # Nearest-head likelihood over the same denominator.
        denom = heads.sum(axis=1) + bg
        rows[:, -1] = heads.max(axis=1) / denom
    return PosteriorTable(
        spec=spec,
        n_heads=frame.n_points,
        background_enabled=cfg.background_enabled,
        rows=rows,
        literal_background_numerator=cfg.background_enabled and cfg.literal_background_numerator,
    )


def expected_counts(post: PosteriorTable, est: DensityGrid) -> tuple[np.ndarray, float]:
    """Posterior-weighted sums of the estimate: per-head counts and background count."""
    if est.spec != post.spec:
        raise ValidationError(
            f"estimate grid {est.spec.cols}x{est.spec.rows} does not match posterior grid "
            f"{post.spec.cols}x{post.spec.rows}"
        )
    totals = post.rows.T @ est.flat()
    if post.background_enabled:
        return totals[: post.n_heads], float(totals[post.n_heads])
    return totals, 0.0


def background_only_posterior(spec: GridSpec) -> PosteriorTable:
    """Posterior for a frame without heads: every cell belongs to background."""
    return PosteriorTable(spec=spec, n_heads=0, background_enabled=True, rows=np.ones((spec.size, 1)))


def loss_from_posterior(post: PosteriorTable, est: DensityGrid) -> LossResult:
    """Loss, expected counts and subgradient for a fixed posterior table."""
    e_heads, e_bg = expected_counts(post, est)
    loss = float(np.abs(1.0 - e_heads).sum() + abs(e_bg))
    grad = post.heads @ -np.sign(1.0 - e_heads)
    if post.background_enabled:
        grad = grad + np.sign(e_bg) * post.background
    return LossResult(loss, e_heads, e_bg, grad.reshape(est.spec.shape))


def frame_posterior(frame: FrameAnnotation, spec: GridSpec, cfg: BayesConfig) -> PosteriorTable:
    """:func:`posterior`, extended to frames without heads."""
    if frame.n_points == 0:
        _require_grid(frame, spec)
        return background_only_posterior(spec)
    return posterior(frame, spec, cfg)


def bayes_loss(frame: FrameAnnotation, est: DensityGrid, cfg: BayesConfig = BayesConfig()) -> LossResult:
    """L1 Bayesian loss of an estimated density against head annotations.

    The subgradient uses ``sign(0) = 0`` at the kinks, so an estimate that hits
    every target exactly gets a zero gradient. A frame without heads treats
    the whole grid as background (whatever ``cfg.background_enabled`` says):
    the loss is then the total estimated mass.
    """
    return loss_from_posterior(frame_posterior(frame, est.spec, cfg), est)
