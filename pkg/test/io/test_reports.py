import math

import pytest

from lobe_registration.analysis.strain import RegionComparison, StrainReport
from lobe_registration.errors import FormatError, OutputError
from lobe_registration.io.reports import (
    COMPARISON_COLUMNS,
    METRIC_COLUMNS,
    TRACE_COLUMNS,
    comparison_row,
    metric_row,
    read_csv,
    trace_rows,
    write_csv,
)
from lobe_registration.metrics.distance import MetricReport
from lobe_registration.registration.optimizer import TraceRecord


def _report(comparison=None):
    return StrainReport(
        branches=(),
        bronchus_mean=0.3,
        bronchus_sd=0.01,
        parenchyma_mean=0.4,
        parenchyma_sd=0.02,
        comparison=comparison,
    )


def test_trace_rows_round_trip(tmp_path):
    trace = [
        TraceRecord("affine", 0, True, 2.5, 2.0, 0.5, 0.0, 0.0),
        TraceRecord("affine", 1, False, 2.5, 2.0, 0.5, 0.0, 1 / 3),
    ]
    path = write_csv(tmp_path / "trace.csv", TRACE_COLUMNS, trace_rows("upper", trace))
    rows = read_csv(path, TRACE_COLUMNS)
    assert [r["accepted"] for r in rows] == ["1", "0"]
    assert float(rows[1]["step_length"]) == 1 / 3
    assert rows[0]["lobe"] == "upper"


def test_metric_row_without_landmarks(tmp_path):
    row = metric_row("case", "upper", MetricReport(1.0, 2.0, 0.5, 0.75))
    assert math.isnan(row["TRE_surface"])
    path = write_csv(tmp_path / "metrics.csv", METRIC_COLUMNS, [row])
    assert path.read_text().splitlines() == [
        ",".join(METRIC_COLUMNS),
        "case,upper,1,2,0.5,0.75,nan,nan,nan,nan",
    ]


def test_metric_row_carries_tre_spread():
    row = metric_row("case", "lower", MetricReport(1.0, 2.0, 0.5, 0.75, (5.0, 1.0), (2.0,)))
    assert list(row) == METRIC_COLUMNS
    assert (row["TRE_surface"], row["TRE_surface_sd"]) == (3.0, 2.0)
    assert (row["TRE_bronchus"], row["TRE_bronchus_sd"]) == (2.0, 0.0)


def test_comparison_row():
    assert comparison_row("upper", _report()) is None
    row = comparison_row("upper", _report(RegionComparison(12.5, 0.001, 1, 18)))
    assert [row[c] for c in COMPARISON_COLUMNS] == ["upper", 12.5, 0.001, 1, 18]


def test_header_is_checked(tmp_path):
    path = write_csv(tmp_path / "metrics.csv", METRIC_COLUMNS, [])
    with pytest.raises(FormatError, match=r":1 \[header\]"):
        read_csv(path, TRACE_COLUMNS)


def test_unwritable_report(tmp_path):
    (tmp_path / "taken").write_text("")
    with pytest.raises(OutputError, match="taken"):
        write_csv(tmp_path / "taken" / "metrics.csv", METRIC_COLUMNS, [])
