"""Density-map crowd counting: ground-truth maps, Bayesian loss, fitting and evaluation."""

from crowdmap.annotations import FrameAnnotation, GridSpec, load_annotations, synth_lattice
from crowdmap.bayes_loss import BayesConfig, LossResult, PosteriorTable, bayes_loss, posterior
from crowdmap.density import DensityGrid, KernelParams, generate_gt_density, render_overlay, total_count
from crowdmap.detect_count import Detection, DetectionSet, count_persons, fpn_level, load_detections
from crowdmap.evalreport import CountRecord, ScenarioReport, build_report, mae, rmse
from crowdmap.fit import FitConfig, FitTrace, finite_diff_check, fit_density

__all__ = [
    "BayesConfig",
    "CountRecord",
    "DensityGrid",
    "Detection",
    "DetectionSet",
    "FitConfig",
    "FitTrace",
    "FrameAnnotation",
    "GridSpec",
    "KernelParams",
    "LossResult",
    "PosteriorTable",
    "ScenarioReport",
    "bayes_loss",
    "build_report",
    "count_persons",
    "finite_diff_check",
    "fit_density",
    "fpn_level",
    "generate_gt_density",
    "load_annotations",
    "load_detections",
    "mae",
    "posterior",
    "render_overlay",
    "rmse",
    "synth_lattice",
    "total_count",
]
