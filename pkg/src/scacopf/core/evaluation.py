"""
Évaluation des résidus de contraintes et des termes d'objectif du SC-ACOPF.

Fonctions pures sur (NetworkCase, état k, StateVector) : bilans nodaux, limites de branches,
pénalités c_k^σ, objectif global, violations des disjonctions (réponse active par projection,
commutation PV/PQ), et construction de solutions de repli à slacks rééquilibrés.
"""

import logging
from typing import Sequence, Tuple

import numpy as np

from .network import NetworkCase
from .power_flow import BranchArrays
from .state import StateVector

logger = logging.getLogger(__name__)


# ==============================================================================
# RESIDUALS
# ==============================================================================

def _injections(case: NetworkCase, k: int, sv: StateVector) -> Tuple[np.ndarray, np.ndarray]:
    """Injection nette (production − charge − flux sortants), slacks exclus."""
    topo = case.topology(k)
    n = case.n_bus
    gen_bus = case.gen_bus[topo.gen_idx]
    branches = BranchArrays.for_state(case, k)
    p_o, q_o, p_d, q_d = branches.flows(sv.v, sv.theta)

    net_p = (
        np.bincount(gen_bus, weights=sv.p, minlength=n)
        - case.bus_array("load_p")
        - np.bincount(branches.f, weights=p_o, minlength=n)
        - np.bincount(branches.t, weights=p_d, minlength=n)
    )
    net_q = (
        np.bincount(gen_bus, weights=sv.q, minlength=n)
        - case.bus_array("load_q")
        - np.bincount(branches.f, weights=q_o, minlength=n)
        - np.bincount(branches.t, weights=q_d, minlength=n)
    )
    return net_p, net_q


def nodal_residuals(case: NetworkCase, k: int, sv: StateVector) -> Tuple[np.ndarray, np.ndarray]:
    """
    Résidus des bilans nodaux actif et réactif.

    Args:
        case: Réseau
        k: État (0 = base)
        sv: Vecteur d'état dimensionné pour k

    Returns:
        Tuple (ΔP, ΔQ) par bus, nuls à l'équilibre

    Raises:
        ValueError: Si les dimensions ne correspondent pas
    """
    sv.check_dimensions(case, k)
    net_p, net_q = _injections(case, k, sv)
    d_p = net_p - sv.sigma_p_plus + sv.sigma_p_minus
    d_q = net_q - sv.sigma_q_plus + sv.sigma_q_minus
    return d_p, d_q


def _branch_excess(case: NetworkCase, k: int, sv: StateVector) -> np.ndarray:
    """Dépassement par branche (max des deux extrémités), slack σ^S exclu."""
    branches = BranchArrays.for_state(case, k)
    p_o, q_o, p_d, q_d = branches.flows(sv.v, sv.theta)
    excess_o = np.hypot(p_o, q_o) - branches.rate_v * sv.v[branches.f] - branches.rate_s
    excess_d = np.hypot(p_d, q_d) - branches.rate_v * sv.v[branches.t] - branches.rate_s
    return np.maximum(excess_o, excess_d)


def branch_limit_residuals(case: NetworkCase, k: int, sv: StateVector) -> np.ndarray:
    """Violation par branche : max(0, |S| − limite − σ^S), maximum sur les deux extrémités."""
    sv.check_dimensions(case, k)
    return np.maximum(0.0, _branch_excess(case, k, sv) - sv.sigma_s)


# ==============================================================================
# COSTS AND OBJECTIVE
# ==============================================================================

def penalty_cost(case: NetworkCase, k: int, sv: StateVector) -> float:
    """Pénalité c_k^σ de l'état k."""
    sv.check_dimensions(case, k)
    tables = case.penalties(k)
    branches = BranchArrays.for_state(case, k)
    total = tables.p.evaluate(sv.sigma_p_plus + sv.sigma_p_minus).sum()
    total += tables.q.evaluate(sv.sigma_q_plus + sv.sigma_q_minus).sum()
    total += tables.s_line.evaluate(sv.sigma_s[branches.is_line]).sum()
    total += tables.s_transformer.evaluate(sv.sigma_s[~branches.is_line]).sum()
    return float(total)


def generation_cost(case: NetworkCase, base: StateVector) -> float:
    """Coût de production Σ c_g(p_g0) du cas de base."""
    base.check_dimensions(case, 0)
    return float(
        sum(g.cost.evaluate(np.array([max(p, 0.0)]))[0] for g, p in zip(case.generators, base.p))
    )


def objective(case: NetworkCase, base: StateVector, ctg_penalties: Sequence[float]) -> float:
    """
    Objectif global : coût de production + c_0^σ + moyenne des pénalités de contingence.

    Raises:
        ValueError: Si le nombre de pénalités diffère du nombre de contingences
    """
    if len(ctg_penalties) != case.n_ctg:
        raise ValueError(
            f"Expected {case.n_ctg} contingency penalties, got {len(ctg_penalties)}"
        )
    value = generation_cost(case, base) + penalty_cost(case, 0, base)
    if case.n_ctg:
        value += float(np.sum(ctg_penalties)) / case.n_ctg
    return value


# ==============================================================================
# DISJUNCTIONS
# ==============================================================================

def _interval_distance(x, lo, hi):
    dist = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    return np.where(lo <= hi, dist, np.inf)


def reactive_set_distance(q, v, q_lo, q_hi, v_lo, v_hi, v0) -> np.ndarray:
    """
    Distance euclidienne de (q, v) à l'union des trois disjonctions PV/PQ :
    q ∈ [q̲, q̄] et v = v0 ; q = q̄ et v ∈ [v̲, v0] ; q = q̲ et v ∈ [v0, v̄].
    """
    q, v = np.asarray(q, dtype=float), np.asarray(v, dtype=float)
    d_pv = np.hypot(_interval_distance(q, q_lo, q_hi), v - v0)
    d_upper = np.hypot(q - q_hi, _interval_distance(v, v_lo, v0))
    d_lower = np.hypot(q - q_lo, _interval_distance(v, v0, v_hi))
    return np.minimum(d_pv, np.minimum(d_upper, d_lower))


def projected_response(case: NetworkCase, k: int, base: StateVector, delta: float) -> np.ndarray:
    """proj_[p̲, p̄](p_g0 + α_g Δ) pour les générateurs actifs de l'état k."""
    gen_idx = case.topology(k).gen_idx
    target = base.p[gen_idx] + case.gen_array("alpha", k) * delta
    return np.clip(target, case.gen_array("p_lo", k), case.gen_array("p_hi", k))


def disjunction_violation(
    case: NetworkCase, k: int, base: StateVector, ctg: StateVector
) -> Tuple[float, float]:
    """
    Violations maximales des réponses active et réactive des générateurs de la contingence k.

    Returns:
        Tuple (violation active, violation réactive)
    """
    case.check_state(k, allow_base=False)
    base.check_dimensions(case, 0)
    ctg.check_dimensions(case, k)
    if case.topology(k).n_gen == 0:
        return 0.0, 0.0

    active = np.abs(ctg.p - projected_response(case, k, base, ctg.delta))
    gen_bus = case.gen_bus[case.topology(k).gen_idx]
    reactive = reactive_set_distance(
        ctg.q, ctg.v[gen_bus],
        case.gen_array("q_lo", k), case.gen_array("q_hi", k),
        case.bus_array("v_lo")[gen_bus], case.bus_array("v_hi")[gen_bus],
        base.v[gen_bus],
    )
    return float(active.max()), float(reactive.max())


# ==============================================================================
# SLACK REBALANCING AND FALLBACK POINTS
# ==============================================================================

def rebalance_slacks(case: NetworkCase, k: int, sv: StateVector) -> StateVector:
    """
    Fixe chaque slack à la plus petite valeur fermant exactement bilans et limites.

    Les variables physiques (v, θ, p, q, Δ) sont conservées.
    """
    sv.check_dimensions(case, k)
    net_p, net_q = _injections(case, k, sv)
    return sv.copy(
        sigma_p_plus=np.maximum(net_p, 0.0),
        sigma_p_minus=np.maximum(-net_p, 0.0),
        sigma_q_plus=np.maximum(net_q, 0.0),
        sigma_q_minus=np.maximum(-net_q, 0.0),
        sigma_s=np.maximum(_branch_excess(case, k, sv), 0.0),
    )


def flat_start(case: NetworkCase, k: int = 0) -> StateVector:
    """Point de départ plat (v = 1, θ = 0, production au prorata des capacités), slacks rééquilibrés."""
    sv = StateVector.zeros(case, k)
    sv.v = np.clip(1.0, case.bus_array("v_lo"), case.bus_array("v_hi"))

    p_lo, p_hi = case.gen_array("p_lo", k), case.gen_array("p_hi", k)
    span = float(np.sum(p_hi - p_lo))
    load_p, _ = case.total_load()
    share = 0.0 if span <= 0 else float(np.clip((load_p - p_lo.sum()) / span, 0.0, 1.0))
    sv.p = p_lo + share * (p_hi - p_lo)
    sv.q = np.clip(0.0, case.gen_array("q_lo", k), case.gen_array("q_hi", k))
    return rebalance_slacks(case, k, sv)


def projected_base_state(case: NetworkCase, k: int, base: StateVector) -> StateVector:
    """
    Solution de repli pour la contingence k : valeurs du cas de base projetées dans les bornes
    de l'état k, Δ = 0, slacks absorbant tous les résidus. Respecte exactement les disjonctions.
    """
    topo = case.topology(k)
    sv = StateVector.zeros(case, k)
    sv.v = np.clip(base.v, case.bus_array("v_lo"), case.bus_array("v_hi"))
    sv.theta = base.theta.copy()
    sv.p = np.clip(base.p[topo.gen_idx], case.gen_array("p_lo", k), case.gen_array("p_hi", k))
    sv.q = np.clip(base.q[topo.gen_idx], case.gen_array("q_lo", k), case.gen_array("q_hi", k))
    return rebalance_slacks(case, k, sv)


def polish_disjunctions(case: NetworkCase, k: int, base: StateVector, sv: StateVector) -> StateVector:
    """
    Projette une solution de contingence sur les disjonctions exactes puis rééquilibre les slacks.

    - p_gk est remplacé par proj(p_g0 + α_g Δ_k)
    - par bus producteur : soit v est ramenée à v_0 (q bornés), soit les q sont collés à la
      borne réactive imposée par le signe de v − v_0, selon le plus petit déplacement
    """
    topo = case.topology(k)
    out = sv.copy()
    out.p = projected_response(case, k, base, sv.delta)

    gen_bus = case.gen_bus[topo.gen_idx]
    q_lo, q_hi = case.gen_array("q_lo", k), case.gen_array("q_hi", k)
    v_lo, v_hi = case.bus_array("v_lo"), case.bus_array("v_hi")
    q = np.clip(out.q, q_lo, q_hi)

    for bus in np.unique(gen_bus):
        members = np.flatnonzero(gen_bus == bus)
        v, v0 = out.v[bus], base.v[bus]
        if v < v0 and v >= v_lo[bus]:
            bound = q_hi[members]
        elif v > v0 and v <= v_hi[bus]:
            bound = q_lo[members]
        else:
            out.v[bus] = v0
            continue
        snap = float(np.max(np.abs(q[members] - bound)))
        if abs(v - v0) <= snap:
            out.v[bus] = v0
        else:
            q[members] = bound
    out.q = q
    return rebalance_slacks(case, k, out)
