"""Fit a free density field to head annotations by projected subgradient descent.

There is no network here: the optimization variable is the density raster
itself. The loss is convex and piecewise linear in the field, so a plain
projected subgradient method is enough at desk scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from crowdmap.annotations import FrameAnnotation, GridSpec
from crowdmap.bayes_loss import BayesConfig, PosteriorTable, frame_posterior, loss_from_posterior
from crowdmap.density import DensityGrid, KernelParams, generate_gt_density
from crowdmap.errors import FitDivergedError, ValidationError

StepRule = Literal["polyak", "constant"]


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    Attributes:
        steps: Number of iterations.
        step_size: With ``step_rule="polyak"`` a dimensionless factor gamma in
            (0, 2); the actual step is ``gamma * loss / ||g||^2``, using 0 as
            the target loss value. With ``"constant"`` the raw step applied to
            the subgradient. A constant step must stay well below
            ``1 / max_n sum_m p(y_n|x_m)``, roughly one over the number of cells
            a head owns, or the first step overshoots every target.
        init: ``"zeros"``, ``"gt"`` (ground-truth density) or ``"uniform:<c>"``.
        record_trace_every: Record one trace row every this many steps. The
            initial and final states are always recorded.
        step_rule: ``"polyak"`` (default) or ``"constant"``.
    """

    steps: int = 2000
    step_size: float = 0.5
    init: str = "zeros"
    record_trace_every: int = 1
    step_rule: StepRule = "polyak"

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise ValidationError(f"step_size must be positive, got {self.step_size}")
        if self.record_trace_every < 1:
            raise ValidationError("record_trace_every must be >= 1")
        if self.step_rule not in ("polyak", "constant"):
            raise ValidationError(f"unknown step rule {self.step_rule!r}")
        _parse_init(self.init)


@dataclass
class FitTrace:
    """Recorded ``(step, loss, total_count)`` rows plus the final field.

    Step 0 is the initial field; row ``k`` is the state after ``k`` updates.
    """

    iterations: list[tuple[int, float, float]] = field(default_factory=list)
    final: DensityGrid | None = None

    @property
    def initial_loss(self) -> float:
        return self.iterations[0][1]

    @property
    def final_loss(self) -> float:
        return self.iterations[-1][1]

    @property
    def final_count(self) -> float:
        return self.iterations[-1][2]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "loss", "total_count"])
            for step, loss, count in self.iterations:
                writer.writerow([step, repr(loss), repr(count)])


def _parse_init(init: str) -> tuple[str, float]:
    if init in ("zeros", "gt", "gt-density"):
        return ("gt" if init.startswith("gt") else "zeros"), 0.0
    if init.startswith("uniform"):
        _, _, value = init.partition(":")
        try:
            c = float(value) if value else 1.0
        except ValueError:
            raise ValidationError(f"bad uniform init value in {init!r}") from None
        if not (c >= 0 and math.isfinite(c)):
            raise ValidationError(f"uniform init value must be >= 0, got {c}")
        return "uniform", c
    raise ValidationError(f"init must be zeros, gt or uniform:<c>, got {init!r}")


def initial_field(
    frame: FrameAnnotation, spec: GridSpec, init: str, sigma: float
) -> DensityGrid:
    kind, c = _parse_init(init)
    if kind == "gt":
        return generate_gt_density(frame, spec, KernelParams(sigma=sigma))
    return DensityGrid(spec, np.full(spec.shape, c))


def fit_density(
    frame: FrameAnnotation,
    spec: GridSpec,
    bayes: BayesConfig = BayesConfig(),
    fitcfg: FitConfig = FitConfig(),
) -> FitTrace:
    """Minimize the Bayesian loss over non-negative density fields.

    Each iteration takes ``est <- max(0, est - step * g)`` with ``g`` the loss
    subgradient. The posterior does not depend on the estimate, so it is built
    once up front. The run is deterministic for fixed inputs.

    Raises:
        FitDivergedError: if the loss becomes non-finite.
    """
    post = frame_posterior(frame, spec, bayes)
    est = initial_field(frame, spec, fitcfg.init, bayes.sigma)
    trace = FitTrace()

    def record(step: int, loss: float, grid: DensityGrid) -> None:
        if not math.isfinite(loss):
            raise FitDivergedError(
                f"non-finite loss at step {step} for frame {frame.frame_id!r}; "
                f"reduce step_size (currently {fitcfg.step_size:g})"
            )
        trace.iterations.append((step, loss, float(grid.values.sum())))

    res = loss_from_posterior(post, est)
    record(0, res.loss, est)
    done = 0
    for step in range(1, fitcfg.steps + 1):
        g = res.gradient
        if fitcfg.step_rule == "polyak":
            g2 = float(np.vdot(g, g))
            if g2 == 0.0:
                # Zero subgradient: every count sits exactly on its target.
                break
            eta = fitcfg.step_size * res.loss / g2
        else:
            eta = fitcfg.step_size
        values = np.maximum(0.0, est.values - eta * g)
        if not np.all(np.isfinite(values)):
            raise FitDivergedError(f"non-finite density at step {step}; reduce step_size")
        est = DensityGrid(spec, values)
        res = loss_from_posterior(post, est)
        done = step
        if step % fitcfg.record_trace_every == 0:
            record(step, res.loss, est)
    if trace.iterations[-1][0] != done:
        record(done, res.loss, est)
    trace.final = est
    return trace


def _raw_loss(post: PosteriorTable, values: np.ndarray) -> float:
    counts = post.rows.T @ values
    targets = np.zeros(counts.shape)
    targets[: post.n_heads] = 1.0
    return float(np.abs(targets - counts).sum())


def finite_diff_check(
    frame: FrameAnnotation,
    spec: GridSpec,
    bayes: BayesConfig,
    est: DensityGrid,
    h: float = 1e-4,
    kink_tol: float = 1e-3,
    max_cells: int | None = None,
    seed: int = 0,
) -> float:
    """Largest gap between the analytic subgradient and central differences.

    The loss is re-evaluated from scratch at ``est +/- h`` in each checked
    cell. Cells whose perturbation could move a count across (or to within
    ``kink_tol`` of) its L1 kink are skipped, since the loss is not
    differentiable there. ``max_cells`` caps the check to a random sample.

    Returns:
        The maximum absolute difference, or 0.0 if every cell was skipped.
    """
    if not h > 0:
        raise ValidationError(f"h must be positive, got {h}")
    post = frame_posterior(frame, spec, bayes)
    analytic = loss_from_posterior(post, est)
    counts = np.concatenate([analytic.expected_counts, [analytic.expected_background]])
    targets = np.zeros(counts.shape)
    targets[: post.n_heads] = 1.0
    width = post.rows.shape[1]
    gap_to_kink = np.abs(counts[:width] - targets[:width])

    cells = np.arange(spec.size)
    if max_cells is not None and max_cells < spec.size:
        cells = np.sort(np.random.default_rng(seed).choice(spec.size, max_cells, replace=False))

    base = est.flat().copy()
    grad = analytic.gradient.ravel()
    worst = 0.0
    for m in cells:
        if np.any(gap_to_kink <= kink_tol + h * post.rows[m]):
            continue
        plus = base.copy()
        plus[m] += h
        minus = base.copy()
        minus[m] -= h
        numeric = (_raw_loss(post, plus) - _raw_loss(post, minus)) / (2.0 * h)
        worst = max(worst, abs(numeric - grad[m]))
    return worst
