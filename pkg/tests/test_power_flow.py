import math

import numpy as np
import pytest

from scacopf.core.network import Line, Transformer
from scacopf.core.power_flow import BranchArrays, line_flow, transformer_flow


def _admittance_flows(g, b, b_ch, tap, shift, v_o, v_d, th_o, th_d):
    """Flux de référence calculés par la matrice d'admittance complexe de la branche."""
    y = complex(g, b)
    t = tap * np.exp(1j * shift)
    y_oo = (y + 1j * b_ch / 2.0) / tap**2
    y_od = -y / np.conj(t)
    y_do = -y / t
    y_dd = y + 1j * b_ch / 2.0
    V_o = v_o * np.exp(1j * th_o)
    V_d = v_d * np.exp(1j * th_d)
    s_o = V_o * np.conj(y_oo * V_o + y_od * V_d)
    s_d = V_d * np.conj(y_do * V_o + y_dd * V_d)
    return s_o.real, s_o.imag, s_d.real, s_d.imag


def test_untapped_transformer_equals_line():
    line = Line("L", "a", "b", g=2.0, b=-10.0, b_ch=0.04, r_max_base=1.0, r_max_ctg=1.0)
    xf = Transformer("T", "a", "b", g=2.0, b=-10.0, b_ch=0.04, tap=1.0, shift=0.0,
                     s_max_base=1.0, s_max_ctg=1.0)
    for args in [(1.0, 1.0, 0.0, 0.0), (1.03, 0.97, 0.1, -0.05), (0.92, 1.08, -0.3, 0.2)]:
        assert transformer_flow(xf, *args) == pytest.approx(line_flow(line, *args), abs=1e-14)


@pytest.mark.parametrize("tap, shift", [(1.05, 0.0), (0.95, math.radians(10.0)), (1.0, -0.2)])
def test_transformer_matches_admittance_matrix(rng, tap, shift):
    xf = Transformer("T", "a", "b", g=1.5, b=-12.0, b_ch=0.03, tap=tap, shift=shift,
                     s_max_base=1.0, s_max_ctg=1.0)
    for _ in range(20):
        v_o, v_d = rng.uniform(0.9, 1.1, size=2)
        th_o, th_d = rng.uniform(-0.5, 0.5, size=2)
        expected = _admittance_flows(1.5, -12.0, 0.03, tap, shift, v_o, v_d, th_o, th_d)
        assert transformer_flow(xf, v_o, v_d, th_o, th_d) == pytest.approx(expected, abs=1e-10)


def test_line_matches_admittance_matrix(rng):
    line = Line("L", "a", "b", g=3.0, b=-9.0, b_ch=0.05, r_max_base=1.0, r_max_ctg=1.0)
    for _ in range(20):
        v_o, v_d = rng.uniform(0.9, 1.1, size=2)
        th_o, th_d = rng.uniform(-0.5, 0.5, size=2)
        expected = _admittance_flows(3.0, -9.0, 0.05, 1.0, 0.0, v_o, v_d, th_o, th_d)
        assert line_flow(line, v_o, v_d, th_o, th_d) == pytest.approx(expected, abs=1e-10)


def test_half_turn_shift_flips_lossless_flow():
    plain = Transformer("T", "a", "b", g=0.0, b=-10.0, b_ch=0.0, tap=1.0, shift=0.0,
                        s_max_base=1.0, s_max_ctg=1.0)
    flipped = Transformer("T", "a", "b", g=0.0, b=-10.0, b_ch=0.0, tap=1.0, shift=math.pi,
                          s_max_base=1.0, s_max_ctg=1.0)
    p_plain = transformer_flow(plain, 1.0, 1.0, 0.1, 0.0)[0]
    p_flipped = transformer_flow(flipped, 1.0, 1.0, 0.1, 0.0)[0]
    assert p_plain == pytest.approx(10.0 * math.sin(0.1))
    assert p_flipped == pytest.approx(-p_plain, abs=1e-12)


def test_lossless_line_conserves_active_power():
    line = Line("L", "a", "b", g=0.0, b=-10.0, b_ch=0.0, r_max_base=1.0, r_max_ctg=1.0)
    p_o, _, p_d, _ = line_flow(line, 1.02, 0.98, 0.2, -0.1)
    assert p_o + p_d == pytest.approx(0.0, abs=1e-12)


def test_non_positive_voltage_rejected():
    line = Line("L", "a", "b", g=1.0, b=-10.0, b_ch=0.0, r_max_base=1.0, r_max_ctg=1.0)
    with pytest.raises(ValueError):
        line_flow(line, 0.0, 1.0, 0.0, 0.0)


def test_vectorized_flows_match_scalar(case5, rng):
    branches = BranchArrays.for_state(case5, 0)
    v = rng.uniform(0.95, 1.05, size=case5.n_bus)
    theta = rng.uniform(-0.2, 0.2, size=case5.n_bus)
    p_o, q_o, p_d, q_d = branches.flows(v, theta)
    for i, line in enumerate(case5.lines):
        f, t = case5.bus_index[line.origin], case5.bus_index[line.destination]
        expected = line_flow(line, v[f], v[t], theta[f], theta[t])
        assert (p_o[i], q_o[i], p_d[i], q_d[i]) == pytest.approx(expected, abs=1e-12)
    xf = case5.transformers[0]
    f, t = case5.bus_index[xf.origin], case5.bus_index[xf.destination]
    j = len(case5.lines)
    expected = transformer_flow(xf, v[f], v[t], theta[f], theta[t])
    assert (p_o[j], q_o[j], p_d[j], q_d[j]) == pytest.approx(expected, abs=1e-12)
