import numpy as np
import pandas as pd
import pytest

from scacopf.core.parallel import ResultMessage
from scacopf.core.recourse import default_solution
from scacopf.core.state import StateVector
from scacopf.utils import solution_io


@pytest.fixture
def perturbed_base(case5, flat_base, rng):
    values = flat_base.to_array() + rng.normal(scale=0.1, size=flat_base.layout.size)
    return StateVector.from_array(values, flat_base.layout)


def _messages(case, base, ks):
    return [
        ResultMessage(k, case.contingencies[k - 1].id, default_solution(case, k, base), "default")
        for k in ks
    ]


class TestBaseSolution:
    def test_round_trip_is_exact(self, case5, perturbed_base, tmp_path):
        path = solution_io.write_base_solution(tmp_path / solution_io.BASE_FILE, case5, perturbed_base)
        back = solution_io.read_base_solution(path, case5)
        np.testing.assert_array_equal(back.to_array(), perturbed_base.to_array())

    def test_missing_file(self, case5, tmp_path):
        with pytest.raises(ValueError, match="not found"):
            solution_io.read_base_solution(tmp_path / "absent.txt", case5)

    def test_no_temporary_file_left(self, case5, flat_base, tmp_path):
        solution_io.write_base_solution(tmp_path / solution_io.BASE_FILE, case5, flat_base)
        assert [p.name for p in tmp_path.iterdir()] == [solution_io.BASE_FILE]


class TestContingencySolutions:
    def test_writer_keeps_latest_per_contingency(self, case5, flat_base, tmp_path):
        path = tmp_path / solution_io.CTG_FILE
        writer = solution_io.ContingencySolutionWriter(path, case5)
        writer(_messages(case5, flat_base, [3, 1, 2]))
        writer(_messages(case5, flat_base, [2]))

        records = solution_io.read_ctg_solutions(path, case5)
        assert sorted(records) == [1, 2, 3]
        assert writer.written == 4
        assert writer.batches == 2
        for k, record in records.items():
            expected = writer.records[k]
            assert record.contingency_id == case5.contingencies[k - 1].id
            assert record.path == "fallback"
            assert record.penalty == expected.penalty
            np.testing.assert_array_equal(record.state.to_array(), expected.state.to_array())

    def test_output_is_deterministic(self, case5, flat_base, tmp_path):
        a = solution_io.ContingencySolutionWriter(tmp_path / "a.txt", case5)
        b = solution_io.ContingencySolutionWriter(tmp_path / "b.txt", case5)
        a(_messages(case5, flat_base, [1, 2, 3]))
        b(_messages(case5, flat_base, [3]))
        b(_messages(case5, flat_base, [2, 1]))
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_records_sorted_by_state_index(self, case5, flat_base, tmp_path):
        path = tmp_path / solution_io.CTG_FILE
        records = [m.record for m in _messages(case5, flat_base, [3, 1, 2])]
        solution_io.write_ctg_solutions(
            path, case5,
            [solution_io.ContingencyRecord(r.k, r.contingency_id, r.path.value, r.penalty, r.state)
             for r in records],
        )
        headers = [line for line in path.read_text().splitlines() if line.startswith("--contingency")]
        assert [h.split()[1] for h in headers] == ["c_G2", "c_L2", "c_L5"]

    def test_mismatched_contingency_rejected(self, case5, flat_base, tmp_path):
        path = tmp_path / solution_io.CTG_FILE
        solution_io.ContingencySolutionWriter(path, case5)(_messages(case5, flat_base, [1]))
        path.write_text(path.read_text().replace("k=1", "k=2"))
        with pytest.raises(ValueError):
            solution_io.read_ctg_solutions(path, case5)


class TestRankingAndDiagnostics:
    def test_ranking_round_trip(self, tmp_path):
        frame = pd.DataFrame([
            {"contingency_id": "c_G2", "kind": "generator", "severity": 1234.5, "rank": 1, "flagged": False},
            {"contingency_id": "c_L5", "kind": "line", "severity": 0.25, "rank": 2, "flagged": True},
        ])
        path = solution_io.write_ranking(tmp_path / solution_io.RANKING_FILE, frame)
        back = solution_io.read_ranking(path)
        pd.testing.assert_frame_equal(back, frame[back.columns])

    def test_empty_diagnostics(self, tmp_path):
        path = solution_io.write_diagnostics(tmp_path / solution_io.DIAGNOSTICS_FILE, pd.DataFrame())
        assert path.read_text() == ""
        assert solution_io.read_diagnostics(path).empty
        assert solution_io.read_diagnostics(tmp_path / "absent.jsonl").empty

    def test_diagnostics_lines(self, tmp_path):
        frame = pd.DataFrame({"t": [1, 2], "r": [1, 1], "al_value": [3.5, 2.0]})
        path = solution_io.write_diagnostics(tmp_path / solution_io.DIAGNOSTICS_FILE, frame)
        assert len(path.read_text().splitlines()) == 2
        back = solution_io.read_diagnostics(path)
        assert back["al_value"].tolist() == [3.5, 2.0]
