"""Command-line entry point: ``crowdmap <subcommand> ...``.

Exit status is 0 on success, 2 for invalid input (bad flags, missing or
malformed files, invariant violations) and 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from crowdmap.annotations import FrameAnnotation, GridSpec, load_annotations
from crowdmap.bayes_loss import DEFAULT_D, BayesConfig, bayes_loss
from crowdmap.density import (
    DEFAULT_SIGMA,
    KernelParams,
    generate_gt_density,
    read_cdm,
    read_png,
    render_overlay,
    write_cdm,
    write_png,
)
from crowdmap.detect_count import DEFAULT_SCORE_THRESHOLD, count_persons, load_detections
from crowdmap.errors import ValidationError
from crowdmap.evalreport import build_report, load_count_records, render_markdown
from crowdmap.fit import FitConfig, fit_density

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _truncation(value: str) -> float | None:
    if value == "none":
        return None
    try:
        radius = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'none' or a positive number, got {value!r}")
    if not radius > 0:
        raise argparse.ArgumentTypeError("truncation radius must be positive")
    return radius


def _positive(value: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {value!r}")
    if not x > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value!r}")
    return x


def _add_frame_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--annotations", required=True, type=Path, help="annotation JSON file")
    p.add_argument("--frame", default=None, help="frame id to use (default: the only frame)")


def _add_bayes_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=_positive, default=DEFAULT_D, help="background distance (default: %(default)s)")
    p.add_argument(
        "--d-mode",
        choices=("fraction", "absolute"),
        default="fraction",
        help="d as a fraction of the shorter image side, or in pixels (default: %(default)s)",
    )
    p.add_argument("--no-background", action="store_true", help="disable the background label")
    p.add_argument(
        "--literal-background-numerator",
        action="store_true",
        help="use the nearest head's likelihood as the background posterior numerator",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdmap", description="Density-map counting toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-density", help="write ground-truth density rasters")
    _add_frame_args(p)
    p.add_argument("--sigma", type=_positive, default=DEFAULT_SIGMA, help="kernel sigma in pixels (default: %(default)s)")
    p.add_argument("--stride", type=_positive, default=1.0, help="pixels per grid cell (default: %(default)s)")
    p.add_argument("--truncation", type=_truncation, default=None, help="kernel cut-off in sigmas or 'none' (default: none)")
    p.add_argument("--unnormalized", action="store_true", help="use exp(-r^2/2s^2) without the unit-mass factor")
    p.add_argument("--out", required=True, help="output CDM1 path; may contain {id} to write every frame")

    p = sub.add_parser("loss", help="print the Bayesian loss of an estimate as JSON")
    _add_frame_args(p)
    p.add_argument("--est", required=True, type=Path, help="estimated density (CDM1)")
    p.add_argument("--sigma", type=_positive, default=DEFAULT_SIGMA, help="kernel sigma in pixels (default: %(default)s)")
    _add_bayes_args(p)

    p = sub.add_parser("fit", help="fit a density field to the annotations")
    _add_frame_args(p)
    p.add_argument("--sigma", type=_positive, default=DEFAULT_SIGMA, help="kernel sigma in pixels (default: %(default)s)")
    p.add_argument("--stride", type=_positive, default=1.0, help="pixels per grid cell (default: %(default)s)")
    _add_bayes_args(p)
    p.add_argument("--steps", type=int, default=2000, help="iterations (default: %(default)s)")
    p.add_argument("--step-size", type=_positive, default=0.5, help="step factor (default: %(default)s)")
    p.add_argument("--step-rule", choices=("polyak", "constant"), default="polyak", help="step rule (default: %(default)s)")
    p.add_argument("--init", default="zeros", help="zeros, gt or uniform:<c> (default: %(default)s)")
    p.add_argument("--trace-every", type=int, default=1, help="trace sampling interval (default: %(default)s)")
    p.add_argument("--trace-out", required=True, help="trace CSV path")
    p.add_argument("--out", required=True, help="final density CDM1 path")

    p = sub.add_parser("count-detections", help="print per-frame person counts as CSV")
    p.add_argument("--detections", required=True, type=Path, help="detections JSON file")
    p.add_argument(
        "--threshold", type=float, default=DEFAULT_SCORE_THRESHOLD, help="minimum score (default: %(default)s)"
    )

    p = sub.add_parser("render", help="paint a density raster into the red channel of an image")
    p.add_argument("--image", required=True, type=Path, help="input RGB image")
    p.add_argument("--density", required=True, type=Path, help="density raster (CDM1)")
    p.add_argument("--out", required=True, help="output PNG path")

    p = sub.add_parser("report", help="compare counts against ground truth")
    p.add_argument("--counts", required=True, type=Path, help="CSV with scenario,method,estimated,ground_truth")
    p.add_argument("--markdown-out", default=None, help="write the Markdown table here instead of stdout")
    p.add_argument("--json-out", default=None, help="also write the JSON summary here")
    return parser


def _select_frame(frames: list[FrameAnnotation], frame_id: str | None) -> FrameAnnotation:
    if frame_id is None:
        if len(frames) != 1:
            raise ValidationError(f"file holds {len(frames)} frames; pick one with --frame")
        return frames[0]
    for frame in frames:
        if frame.frame_id == frame_id:
            return frame
    raise ValidationError(f"frame {frame_id!r} not found")


def _bayes_config(args) -> BayesConfig:
    return BayesConfig(
        sigma=args.sigma,
        background_enabled=not args.no_background,
        d=args.d,
        d_mode=args.d_mode,
        literal_background_numerator=args.literal_background_numerator,
    )


def _cmd_gen_density(args) -> None:
    frames = load_annotations(args.annotations)
    params = KernelParams(args.sigma, not args.unnormalized, args.truncation)
    if args.frame is None and len(frames) > 1:
        if "{id}" not in args.out:
            raise ValidationError(f"file holds {len(frames)} frames; use --frame or put {{id}} in --out")
        chosen = frames
    else:
        chosen = [_select_frame(frames, args.frame)]
    for frame in chosen:
        grid = generate_gt_density(frame, GridSpec.from_frame(frame, args.stride), params)
        write_cdm(grid, args.out.replace("{id}", frame.frame_id))


def _cmd_loss(args) -> None:
    frame = _select_frame(load_annotations(args.annotations), args.frame)
    result = bayes_loss(frame, read_cdm(args.est), _bayes_config(args))
    print(result.to_json())


def _cmd_fit(args) -> None:
    frame = _select_frame(load_annotations(args.annotations), args.frame)
    fitcfg = FitConfig(
        steps=args.steps,
        step_size=args.step_size,
        init=args.init,
        record_trace_every=args.trace_every,
        step_rule=args.step_rule,
    )
    trace = fit_density(frame, GridSpec.from_frame(frame, args.stride), _bayes_config(args), fitcfg)
    trace.write_csv(args.trace_out)
    write_cdm(trace.final, args.out)


def _cmd_count_detections(args) -> None:
    sets = load_detections(args.detections)
    print("frame_id,count")
    for dets in sets:
        print(f"{dets.frame_id},{count_persons(dets, args.threshold)}")


def _cmd_render(args) -> None:
    image = read_png(args.image)
    write_png(render_overlay(image, read_cdm(args.density)), args.out)


def _cmd_report(args) -> None:
    report = build_report(load_count_records(args.counts))
    table = render_markdown(report)
    if args.markdown_out:
        Path(args.markdown_out).write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)
    if args.json_out:
        Path(args.json_out).write_text(report.to_json() + "\n", encoding="utf-8")


COMMANDS = {
    "gen-density": _cmd_gen_density,
    "loss": _cmd_loss,
    "fit": _cmd_fit,
    "count-detections": _cmd_count_detections,
    "render": _cmd_render,
    "report": _cmd_report,
}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"crowdmap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"crowdmap {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())
