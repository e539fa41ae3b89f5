import numpy as np
import pytest

from scacopf.core.evaluation import flat_start
from scacopf.core.network import eval_pwl
from scacopf.core.power_flow import line_flow, transformer_flow
from scacopf.core.screening import (
    ContingencyScreener,
    SeverityRecord,
    improved_severity,
    rank,
    ranking_frame,
    select_subset,
    severity,
    subset_size_per_worker,
)


def _brute_force_severities(case, base):
    """Sévérités recalculées élément par élément, sans les tableaux vectorisés."""
    tables = case.penalty_tables
    out = {}
    for ctg in case.contingencies:
        if ctg.kind == "generator":
            g = next(i for i, gen in enumerate(case.generators) if gen.id == ctg.element)
            value = eval_pwl(tables.p, abs(base.p[g])) + eval_pwl(tables.q, abs(base.q[g]))
        else:
            pool, flow = (
                (case.lines, line_flow) if ctg.kind == "line" else (case.transformers, transformer_flow)
            )
            branch = next(b for b in pool if b.id == ctg.element)
            f, t = case.bus_index[branch.origin], case.bus_index[branch.destination]
            p_o, q_o, p_d, q_d = flow(branch, base.v[f], base.v[t], base.theta[f], base.theta[t])
            value = sum(eval_pwl(tables.p, abs(p)) for p in (p_o, p_d))
            value += sum(eval_pwl(tables.q, abs(q)) for q in (q_o, q_d))
        out[ctg.id] = value
    return out


@pytest.fixture
def dispatched_base(case5):
    base = flat_start(case5, 0)
    base.p = np.array([1.7, 1.0])
    base.q = np.array([0.5, 0.2])
    base.theta = np.array([0.0, -0.02, -0.08, -0.06, -0.07])
    return base


def test_generator_severity_hand_value(case5, dispatched_base):
    record = severity(case5, dispatched_base, case5.contingency_index["c_G2"])
    # c^p(1.0) + c^q(0.2) avec les tables par défaut
    assert record.severity == pytest.approx(48_252_000.0 + 92_000.0, rel=1e-9)
    assert record.kind == "generator"


def test_ranking_matches_brute_force(case5, dispatched_base):
    expected = _brute_force_severities(case5, dispatched_base)
    ranked = rank(case5, dispatched_base)
    order = sorted(expected, key=lambda cid: (-expected[cid], cid))
    assert [r.contingency_id for r in ranked] == order
    for r in ranked:
        assert r.severity == pytest.approx(expected[r.contingency_id], rel=1e-12)


def test_ties_broken_by_identifier(case5):
    base = flat_start(case5, 0)
    base.p = np.zeros(2)
    base.q = np.zeros(2)
    ranked = rank(case5, base)
    zero = [r.contingency_id for r in ranked if r.severity == 0.0]
    assert zero == sorted(zero)


def test_base_with_slacks_flags_records(case5):
    base = flat_start(case5, 0)
    assert np.any(base.sigma_p_minus > 0)
    assert all(r.flagged for r in rank(case5, base))


def test_severity_state_absorbs_lost_injection(case5, dispatched_base):
    k = case5.contingency_index["c_G2"]
    sv = ContingencyScreener(case5, dispatched_base).severity_state(k)
    b2 = case5.bus_index["b2"]
    assert sv.sigma_p_plus[b2] == pytest.approx(1.0)
    assert sv.sigma_q_plus[b2] == pytest.approx(0.2)
    sv.check_dimensions(case5, k)


def test_negative_severity_rejected():
    with pytest.raises(ValueError):
        SeverityRecord("c", -1.0, "line")


def test_out_of_range_contingency(case5, dispatched_base):
    with pytest.raises(ValueError):
        severity(case5, dispatched_base, 0)


@pytest.mark.parametrize(
    "n_bus, expected", [(5, 20), (1000, 20), (1001, 15), (5000, 15), (10000, 10), (20000, 5)]
)
def test_subset_size_bands(n_bus, expected):
    assert subset_size_per_worker(n_bus) == expected


def test_select_subset(case5, dispatched_base):
    ranked = rank(case5, dispatched_base)
    assert len(select_subset(case5, ranked, workers=1)) == 3
    assert select_subset(case5, ranked, workers=1, n_bus=20000) == ranked[:3]
    assert select_subset(case5, ranked * 10, workers=2, n_bus=20000) == (ranked * 10)[:10]
    with pytest.raises(ValueError):
        select_subset(case5, ranked, workers=0)


def test_ranking_frame(case5, dispatched_base):
    frame = ranking_frame(rank(case5, dispatched_base))
    assert list(frame.columns) == ["contingency_id", "kind", "severity", "rank", "flagged"]
    assert frame["rank"].tolist() == [1, 2, 3]


def test_recourse_reduces_generator_outage_penalty(case5, solved_base):
    gain = improved_severity(case5, solved_base, case5.contingency_index["c_G2"])
    assert gain > 0.0
