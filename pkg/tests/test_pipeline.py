import random
import time

import numpy as np
import pytest

from scacopf.core.evaluation import flat_start, objective
from scacopf.core.pipeline import RunConfig, _BaseFileWriter, run_phase1, run_phase2, summarize_run
from scacopf.core.recourse import default_solution
from scacopf.utils import solution_io


class TestRunConfig:
    @pytest.mark.parametrize(
        "changes",
        [
            {"mode": "phase3"},
            {"phase1_time_limit": 0.0},
            {"ctg_time_limit": -1.0},
            {"workers": 0},
            {"deadline_margin": -5.0},
        ],
    )
    def test_invalid(self, changes):
        with pytest.raises(ValueError):
            RunConfig(case_path="bundled:case5", **changes)

    def test_margin_is_capped(self):
        assert RunConfig("bundled:case5").phase1_margin() == pytest.approx(60.0)
        assert RunConfig("bundled:case5", phase1_time_limit=40.0).phase1_margin() == pytest.approx(10.0)


def test_phase1_always_leaves_a_base_file(case5, tmp_path):
    config = RunConfig("bundled:case5", out_dir=str(tmp_path), phase1_time_limit=1.0)
    report = run_phase1(config, case5)
    base = solution_io.read_base_solution(tmp_path / solution_io.BASE_FILE, case5)
    base.check_dimensions(case5, 0)
    assert report.base_file == tmp_path / solution_io.BASE_FILE
    assert (tmp_path / solution_io.RANKING_FILE).exists()
    assert len(report.ranking) == case5.n_ctg


def test_phase1_reports_progress(case5, tmp_path):
    seen = []
    config = RunConfig("bundled:case5", out_dir=str(tmp_path), phase1_time_limit=1.0)
    run_phase1(config, case5, progress_callback=lambda pct, msg: seen.append(pct))
    assert seen[0] == 5
    assert seen[-1] == 100
    assert seen == sorted(seen)


def test_phase2_solves_every_contingency(case5, solved_base, tmp_path):
    config = RunConfig("bundled:case5", out_dir=str(tmp_path), ctg_time_limit=30.0)
    report = run_phase2(config, solved_base, case5)

    records = solution_io.read_ctg_solutions(tmp_path / solution_io.CTG_FILE, case5)
    assert sorted(records) == [1, 2, 3]
    assert report.completion.n_tasks == 3
    assert (tmp_path / solution_io.SUMMARY_FILE).exists()
    assert report.objective == pytest.approx(
        objective(case5, solved_base, [r.penalty for r in report.results]), rel=1e-12
    )

    solution_io.write_base_solution(tmp_path / solution_io.BASE_FILE, case5, solved_base)
    summary = summarize_run(tmp_path, case5)
    assert summary.totals["objective"] == pytest.approx(report.objective, rel=1e-9)
    np.testing.assert_allclose(
        summary.contingencies["penalty"], summary.contingencies["recorded_penalty"], rtol=1e-9
    )


def test_phase2_crashing_solver_falls_back(case5, flat_base, tmp_path):
    solution_io.write_base_solution(tmp_path / solution_io.BASE_FILE, case5, flat_base)
    config = RunConfig("bundled:case5", out_dir=str(tmp_path), ctg_time_limit=10.0, workers=2)

    def crash(task):
        raise RuntimeError(f"solver died on {task.contingency_id}")

    report = run_phase2(config, case=case5, solve=crash)
    assert report.fallback_used
    assert sorted(report.completion.fallbacks) == ["c_G2", "c_L2", "c_L5"]
    for result in report.results:
        expected = default_solution(case5, result.k, flat_base)
        assert result.penalty == pytest.approx(expected.penalty)
    assert sorted(solution_io.read_ctg_solutions(tmp_path / solution_io.CTG_FILE, case5)) == [1, 2, 3]


def test_phase2_needs_a_base(case5, tmp_path):
    config = RunConfig("bundled:case5", out_dir=str(tmp_path))
    with pytest.raises(ValueError, match="not found"):
        run_phase2(config, case=case5)


def test_summary_requires_every_contingency(case5, flat_base, tmp_path):
    solution_io.write_base_solution(tmp_path / solution_io.BASE_FILE, case5, flat_base)
    solution_io.write_ctg_solutions(tmp_path / solution_io.CTG_FILE, case5, [])
    with pytest.raises(ValueError, match="missing"):
        summarize_run(tmp_path, case5)


def test_phase1_report_matches_base_file(case5, tmp_path):
    config = RunConfig("bundled:case5", out_dir=str(tmp_path), phase1_time_limit=1.0)
    report = run_phase1(config, case5)
    on_file = solution_io.read_base_solution(tmp_path / solution_io.BASE_FILE, case5)
    np.testing.assert_array_equal(report.base.to_array(), on_file.to_array())
    assert report.fallback_used == (report.writes == 0)


def test_base_writer_refuses_after_deadline(case5, solved_base, tmp_path):
    path = tmp_path / solution_io.BASE_FILE
    write_base = _BaseFileWriter(path, case5, deadline=time.perf_counter() - 1.0)
    flat = write_base.write_flat_start()

    assert not write_base(solved_base, "late iterate")
    assert write_base.writes == 0
    np.testing.assert_array_equal(write_base.last.to_array(), flat.to_array())
    on_file = solution_io.read_base_solution(path, case5)
    np.testing.assert_array_equal(on_file.to_array(), flat_start(case5, 0).to_array())


def test_phase2_output_independent_of_worker_count(case5, solved_base, tmp_path):
    files = []
    for workers in (1, 3):
        out = tmp_path / f"w{workers}"
        config = RunConfig("bundled:case5", out_dir=str(out), ctg_time_limit=30.0, workers=workers)
        run_phase2(config, solved_base, case5)
        files.append((out / solution_io.CTG_FILE).read_bytes())
    assert files[0] == files[1]


def test_phase2_output_stable_under_random_delays(case5, flat_base, tmp_path):
    files = []
    for run, workers in enumerate((1, 2, 3, 3, 2)):
        delays = random.Random(run)

        def solve(task):
            time.sleep(delays.uniform(0.0, 0.05))
            return default_solution(case5, task.k, flat_base, status="solved")

        out = tmp_path / f"run{run}"
        config = RunConfig("bundled:case5", out_dir=str(out), ctg_time_limit=10.0, workers=workers)
        report = run_phase2(config, flat_base, case5, solve=solve)
        assert report.completion.conserved
        files.append((out / solution_io.CTG_FILE).read_bytes())
    assert all(data == files[0] for data in files)


def test_phase2_unwritten_solutions_flag_fallback(case5, flat_base, tmp_path, monkeypatch):
    def refuse(*args, **kwargs):
        raise OSError("read-only file system")

    monkeypatch.setattr(solution_io, "write_ctg_solutions", refuse)
    config = RunConfig("bundled:case5", out_dir=str(tmp_path), ctg_time_limit=10.0)
    report = run_phase2(
        config, flat_base, case5, solve=lambda task: default_solution(case5, task.k, flat_base)
    )
    assert not report.completion.complete
    assert report.completion.write_errors
    assert report.fallback_used
