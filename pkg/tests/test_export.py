import io
import json

import pandas as pd
import pytest

from scacopf.utils.export import (
    export,
    get_report_stats,
    report_workbook,
    to_csv,
    to_excel,
    to_json,
    to_parquet,
)


@pytest.fixture
def summary():
    return pd.DataFrame({
        "k": [1, 2, 3],
        "contingency_id": ["c_G2", "c_L2", "c_L5"],
        "penalty": [12.5, 0.0, 109_000.0],
        "path": ["smoothed", "restricted", "fallback"],
        "wall_time": [0.4, 0.1, 0.9],
    })


def test_csv_header(summary):
    text = to_csv(summary).decode("utf-8")
    assert text.splitlines()[0] == "k,contingency_id,penalty,path,wall_time"
    assert len(text.splitlines()) == 4


def test_excel_is_a_workbook(summary):
    data = to_excel(summary)
    assert data[:2] == b"PK"
    back = pd.read_excel(io.BytesIO(data), sheet_name="Report")
    assert back["contingency_id"].tolist() == ["c_G2", "c_L2", "c_L5"]


def test_json_records(summary):
    rows = json.loads(to_json(summary))
    assert rows[2] == {"k": 3, "contingency_id": "c_L5", "penalty": 109000.0,
                       "path": "fallback", "wall_time": 0.9}


def test_parquet_reads_back(summary):
    back = pd.read_parquet(io.BytesIO(to_parquet(summary)))
    pd.testing.assert_frame_equal(back, summary)


@pytest.mark.parametrize("fmt", ["csv", "xlsx", "json", "parquet"])
def test_export_dispatch(summary, fmt):
    assert isinstance(export(summary, fmt), bytes)


def test_unknown_format(summary):
    with pytest.raises(ValueError, match="Unknown export format"):
        export(summary, "xml")


def test_report_stats(summary):
    stats = get_report_stats(summary)
    assert stats["nb_contingences"] == 3
    assert stats["penalite_totale"] == pytest.approx(109_012.5)
    assert stats["penalite_max"] == pytest.approx(109_000.0)
    assert stats["nb_repli"] == 1
    assert stats["par_chemin"] == {"fallback": 1, "restricted": 1, "smoothed": 1}
    assert stats["temps_max_s"] == pytest.approx(0.9)


def test_report_stats_empty():
    stats = get_report_stats(pd.DataFrame())
    assert stats == {"nb_contingences": 0, "penalite_totale": 0.0, "penalite_moyenne": 0.0}


def test_report_workbook_sheets(summary):
    ranking = pd.DataFrame({"rank": [1, 2], "contingency_id": ["c_L5", "c_G2"]})
    data = report_workbook(summary, ranking, pd.DataFrame())
    sheets = pd.read_excel(io.BytesIO(data), sheet_name=None)
    assert list(sheets) == ["Contingences", "Classement"]
    assert sheets["Classement"]["contingency_id"].tolist() == ["c_L5", "c_G2"]
