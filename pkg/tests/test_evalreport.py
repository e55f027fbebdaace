import json
import math
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdmap.errors import ValidationError
from crowdmap.evalreport import (
    CountRecord,
    ScenarioReport,
    build_report,
    load_count_records,
    mae,
    render_markdown,
    rmse,
)

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

# Count comparison table: (density map, detect-then-count, ground truth).
TABLE = {
    "Garden": (27, 14, 25),
    "Small square": (40, 11, 17),
    "Large public square": (48, 27, 49),
    "Public university": (19, 9, 20),
    "Fountain": (59, 28, 33),
}


def test_mae_rmse():
    assert mae([2, 23, 1, 1, 26]) == pytest.approx(10.6)
    assert mae([0, 0, 0]) == 0 and rmse([0, 0, 0]) == 0
    assert mae([3, 4]) == 3.5
    assert rmse([3, 4]) == pytest.approx(3.5355, abs=1e-4)


@pytest.mark.parametrize("fn", [mae, rmse])
def test_metrics_reject_empty(fn):
    with pytest.raises(ValidationError):
        fn([])


def test_fixture_matches_table():
    records = load_count_records(FIXTURES / "table2.csv")
    assert len(records) == 10
    for rec in records:
        dm, dtc, gt = TABLE[rec.scenario]
        assert rec.ground_truth == gt
        assert rec.estimated == (dm if rec.method == "density-map" else dtc)


def test_table_fixture_errors():
    report = build_report(load_count_records(FIXTURES / "table2.csv"))
    errors = {r.scenario: r.abs_error for r in report.rows}
    assert [errors[s]["density-map"] for s in TABLE] == [2, 23, 1, 1, 26]
    assert [errors[s]["detect-then-count"] for s in TABLE] == [11, 6, 22, 11, 5]
    assert report.summary["density-map"]["mae"] == pytest.approx(10.6)
    assert report.summary["detect-then-count"]["mae"] == pytest.approx(11.0)
    assert [r.scenario for r in report.rows] == sorted(TABLE)


def test_single_record_exact():
    report = build_report([CountRecord("only", "density-map", 5.0, 5)])
    assert report.rows[0].abs_error == {"density-map": 0.0}
    assert report.summary["density-map"]["mae"] == 0.0


def test_duplicate_and_inconsistent_records():
    with pytest.raises(ValidationError, match="duplicate"):
        build_report([CountRecord("a", "density-map", 1, 1), CountRecord("a", "density-map", 2, 1)])
    with pytest.raises(ValidationError, match="same set of methods"):
        build_report([CountRecord("a", "density-map", 1, 1), CountRecord("b", "detect-then-count", 2, 1)])
    with pytest.raises(ValidationError, match="ground truth"):
        build_report([CountRecord("a", "density-map", 1, 1), CountRecord("a", "detect-then-count", 2, 3)])


@pytest.mark.parametrize(
    "kwargs",
    [dict(method="yolo"), dict(estimated=-1.0), dict(estimated=math.inf), dict(ground_truth=-2)],
)
def test_count_record_validation(kwargs):
    base = dict(scenario="s", method="density-map", estimated=1.0, ground_truth=1)
    with pytest.raises(ValidationError):
        CountRecord(**{**base, **kwargs})


def test_missing_ground_truth_in_csv(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("scenario,method,estimated,ground_truth\nGarden,density-map,27,\n")
    with pytest.raises(ValidationError, match="missing ground truth"):
        load_count_records(path)


def test_markdown_rounds_estimates():
    report = build_report([CountRecord("s", "density-map", 26.5, 25), CountRecord("s", "detect-then-count", 14.49, 25)])
    table = render_markdown(report)
    assert "| s | 27 | 14 | 25 | 1.5 | 10.51 |" in table
    assert "RMSE (supplementary)" in table


records_strategy = st.lists(
    st.tuples(st.floats(0, 500), st.floats(0, 500), st.integers(0, 500)), min_size=1, max_size=8
)


def _records(raw):
    out = []
    for k, (a, b, gt) in enumerate(raw):
        out.append(CountRecord(f"s{k}", "density-map", a, gt))
        out.append(CountRecord(f"s{k}", "detect-then-count", b, gt))
    return out


@given(records_strategy, st.randoms())
def test_permutation_invariance(raw, rnd):
    recs = _records(raw)
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert build_report(recs) == build_report(shuffled)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_mae_le_rmse(errors):
    assert mae(errors) <= rmse(errors) * (1 + 1e-12) + 1e-12


@given(records_strategy)
def test_json_round_trip(raw):
    report = build_report(_records(raw))
    assert ScenarioReport.from_dict(json.loads(report.to_json())) == report
