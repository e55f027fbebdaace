import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from crowdmap.annotations import FrameAnnotation, GridSpec, save_annotations, synth_lattice
from crowdmap.cli import COMMANDS, run
from crowdmap.density import DensityGrid, read_cdm, read_png, total_count, write_cdm, write_png

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def lattice_file(tmp_path):
    path = tmp_path / "a.json"
    save_annotations([synth_lattice(3, 3, 64, 32, frame_id="lat")], path)
    return path


@pytest.fixture
def empty_file(tmp_path):
    path = tmp_path / "empty.json"
    save_annotations([FrameAnnotation("empty", 32, 24, ())], path)
    return path


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help_matches_golden(command, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    assert run([command, "--help"]) == 0
    text = capsys.readouterr().out
    golden = GOLDEN / f"help_{command}.txt"
    if os.environ.get("UPDATE_GOLDEN"):
        golden.parent.mkdir(exist_ok=True)
        golden.write_text(text)
    assert text == golden.read_text()
    assert "default" in text or command in ("render", "count-detections", "report")


def test_gen_density_mass(lattice_file, tmp_path):
    out = tmp_path / "f.cdm"
    assert run(["gen-density", "--annotations", str(lattice_file), "--sigma", "8", "--stride", "1", "--out", str(out)]) == 0
    grid = read_cdm(out)
    assert grid.spec == GridSpec(1.0, 192, 192)
    assert total_count(grid) == pytest.approx(9.0, abs=1e-2)


def test_gen_density_many_frames(tmp_path):
    path = tmp_path / "two.json"
    save_annotations([synth_lattice(1, 1, 10, 20, "a"), synth_lattice(2, 1, 30, 20, "b")], path)
    assert run(["gen-density", "--annotations", str(path), "--out", str(tmp_path / "x.cdm")]) == 2
    assert run(["gen-density", "--annotations", str(path), "--out", str(tmp_path / "{id}.cdm")]) == 0
    assert total_count(read_cdm(tmp_path / "b.cdm")) == pytest.approx(2.0, abs=0.05)
    assert run(["gen-density", "--annotations", str(path), "--frame", "a", "--truncation", "4", "--out", str(tmp_path / "only.cdm")]) == 0


def test_loss_empty_frame_zero_estimate(empty_file, tmp_path, capsys):
    est = tmp_path / "zeros.cdm"
    write_cdm(DensityGrid.zeros(GridSpec(1.0, 32, 24)), est)
    assert run(["loss", "--annotations", str(empty_file), "--est", str(est)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == {"loss": 0.0, "expected_counts": [], "expected_background": 0.0}


def test_loss_of_zero_estimate_is_head_count(lattice_file, tmp_path, capsys):
    est = tmp_path / "zeros.cdm"
    write_cdm(DensityGrid.zeros(GridSpec(8.0, 24, 24)), est)
    assert run(["loss", "--annotations", str(lattice_file), "--est", str(est), "--no-background"]) == 0
    assert json.loads(capsys.readouterr().out)["loss"] == 9.0


def test_loss_grid_mismatch_is_validation_error(lattice_file, tmp_path, capsys):
    est = tmp_path / "bad.cdm"
    write_cdm(DensityGrid.zeros(GridSpec(8.0, 10, 10)), est)
    assert run(["loss", "--annotations", str(lattice_file), "--est", str(est)]) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "does not match" in err


def test_fit_writes_trace_and_raster(lattice_file, tmp_path):
    trace, out = tmp_path / "trace.csv", tmp_path / "final.cdm"
    args = ["fit", "--annotations", str(lattice_file), "--stride", "8", "--steps", "300",
            "--trace-every", "50", "--trace-out", str(trace), "--out", str(out)]
    assert run(args) == 0
    rows = list(csv.DictReader(trace.open()))
    assert [int(r["step"]) for r in rows] == [0, 50, 100, 150, 200, 250, 300]
    assert float(rows[0]["loss"]) == 9.0
    assert float(rows[-1]["loss"]) < 2.0
    assert read_cdm(out).spec == GridSpec(8.0, 24, 24)


def test_fit_is_deterministic(lattice_file, tmp_path):
    outs = []
    for k in range(2):
        trace = tmp_path / f"t{k}.csv"
        run(["fit", "--annotations", str(lattice_file), "--stride", "8", "--steps", "50",
             "--trace-out", str(trace), "--out", str(tmp_path / f"f{k}.cdm")])
        outs.append((trace.read_bytes(), (tmp_path / f"f{k}.cdm").read_bytes()))
    assert outs[0] == outs[1]


def test_count_detections(capsys):
    assert run(["count-detections", "--detections", str(ROOT / "fixtures" / "garden_detections.json")]) == 0
    assert capsys.readouterr().out == "frame_id,count\ngarden_f120,14\n"


def test_render(tmp_path):
    spec = GridSpec.for_image(20, 12, 4)
    values = np.zeros(spec.shape)
    values[1, 2] = 2.0
    write_cdm(DensityGrid(spec, values), tmp_path / "d.cdm")
    image = np.full((12, 20, 3), 100, np.uint8)
    write_png(image, tmp_path / "in.png")
    assert run(["render", "--image", str(tmp_path / "in.png"), "--density", str(tmp_path / "d.cdm"), "--out", str(tmp_path / "o.png")]) == 0
    out = read_png(tmp_path / "o.png")
    assert np.count_nonzero(out[..., 0]) == 16
    assert np.all(out[4:8, 8:12, 0] == 255)
    assert np.all(out[..., 1:] == 100)


def test_report(tmp_path, capsys):
    counts = ROOT / "fixtures" / "table2.csv"
    assert run(["report", "--counts", str(counts), "--json-out", str(tmp_path / "r.json")]) == 0
    table = capsys.readouterr().out
    assert "| Garden | 27 | 14 | 25 | 2 | 11 |" in table
    assert "| MAE | 10.6 | 11 |" in table
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["summary"]["detect-then-count"]["mae"] == pytest.approx(11.0)


@pytest.mark.parametrize(
    "argv",
    [
        ["nope"],
        ["report", "--bogus"],
        ["report", "--counts", "/does/not/exist.csv"],
        ["gen-density", "--annotations", "/does/not/exist.json", "--out", "x.cdm"],
        ["gen-density", "--annotations", "a.json", "--sigma", "-1", "--out", "x.cdm"],
        ["fit", "--annotations", "a.json", "--trace-out", "t", "--out", "o", "--d-mode", "miles"],
    ],
)
def test_validation_errors_exit_2(argv, capsys):
    assert run(argv) == 2
    assert capsys.readouterr().err.strip()


def test_runtime_error_exit_1(lattice_file, tmp_path, capsys):
    target = tmp_path / "no_such_dir" / "f.cdm"
    assert run(["gen-density", "--annotations", str(lattice_file), "--out", str(target)]) == 1
    assert "failed" in capsys.readouterr().err
