"""
Classement des contingences par indice de sévérité.

Pour une solution du cas de base donnée, la sévérité d'une contingence approxime sa pénalité
c_k^σ en supposant qu'aucune action corrective n'est prise : la puissance portée par
l'élément retiré doit être absorbée par les slacks de ses bus terminaux.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from .evaluation import branch_limit_residuals, nodal_residuals
from .network import NetworkCase
from .power_flow import BranchArrays
from .smoothing import SmoothingParams
from .state import StateVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeverityRecord:
    """Sévérité d'une contingence ($), flaggée si la base a des slacks non nuls."""

    contingency_id: str
    severity: float
    kind: str
    flagged: bool = False

    def __post_init__(self):
        if self.severity < 0:
            raise ValueError(f"Severity must be >= 0 (got {self.severity})")


class ContingencyScreener:
    """
    Calcule les sévérités de toutes les contingences pour une solution de base.

    Les flux de base sont évalués une fois ; chaque sévérité est ensuite une simple lecture.
    """

    BASE_TOLERANCE = 1e-6
    # n contingences par worker selon la taille du réseau (bornes supérieures en nombre de bus)
    SUBSET_BANDS = ((1000, 20), (5000, 15), (10000, 10))
    SUBSET_TAIL = 5

    def __init__(self, case: NetworkCase, base: StateVector):
        base.check_dimensions(case, 0)
        self.case = case
        self.base = base
        self.flagged = self._base_has_slack()
        if self.flagged:
            logger.warning("Base solution has nonzero slacks: severities are computed as-is")

        branches = BranchArrays.for_state(case, 0)
        p_o, q_o, p_d, q_d = branches.flows(base.v, base.theta)
        self._flows = {bid: (p_o[i], q_o[i], p_d[i], q_d[i]) for i, bid in enumerate(branches.ids)}
        self._ends = {bid: (branches.f[i], branches.t[i]) for i, bid in enumerate(branches.ids)}
        self._gen_pos = {g.id: i for i, g in enumerate(case.generators)}

    def _base_has_slack(self) -> bool:
        b = self.base
        slack = max(
            float(np.max(np.concatenate([
                b.sigma_p_plus, b.sigma_p_minus, b.sigma_q_plus, b.sigma_q_minus, b.sigma_s, [0.0]
            ]))),
            float(np.max(np.abs(np.concatenate(nodal_residuals(self.case, 0, b))), initial=0.0)),
            float(np.max(branch_limit_residuals(self.case, 0, b), initial=0.0)),
        )
        return slack > self.BASE_TOLERANCE

    def severity_state(self, k: int) -> StateVector:
        """
        Vecteur d'état k : valeurs de base, slacks égaux aux injections perdues aux bus
        terminaux de l'élément retiré, autres slacks nuls.
        """
        ctg = self.case.contingency(k)
        topo = self.case.topology(k)
        base = self.base
        sv = StateVector.zeros(self.case, k)
        sv.v, sv.theta = base.v.copy(), base.theta.copy()
        sv.p, sv.q = base.p[topo.gen_idx], base.q[topo.gen_idx]

        def absorb(bus, p, q):
            sv.sigma_p_plus[bus] += abs(p)
            sv.sigma_q_plus[bus] += abs(q)

        if ctg.kind == "generator":
            g = self._gen_pos[ctg.element]
            absorb(self.case.gen_bus[g], base.p[g], base.q[g])
        else:
            p_o, q_o, p_d, q_d = self._flows[ctg.element]
            f, t = self._ends[ctg.element]
            absorb(f, p_o, q_o)
            absorb(t, p_d, q_d)
        return sv

    def severity(self, k: int) -> SeverityRecord:
        """
        Sévérité c̃_k^σ de la contingence k.

        Raises:
            ValueError: Si k est hors de [1, |K|]
        """
        self.case.check_state(k, allow_base=False)
        ctg = self.case.contingency(k)
        tables = self.case.penalties(k)
        if ctg.kind == "generator":
            g = self._gen_pos[ctg.element]
            value = tables.p.evaluate(abs(self.base.p[g])) + tables.q.evaluate(abs(self.base.q[g]))
        else:
            p_o, q_o, p_d, q_d = self._flows[ctg.element]
            value = (
                tables.p.evaluate(abs(p_o)) + tables.p.evaluate(abs(p_d))
                + tables.q.evaluate(abs(q_o)) + tables.q.evaluate(abs(q_d))
            )
        return SeverityRecord(ctg.id, float(value), ctg.kind, self.flagged)

    def rank(self) -> List[SeverityRecord]:
        """Sévérités décroissantes, égalités départagées par identifiant croissant."""
        records = [self.severity(k) for k in range(1, self.case.n_ctg + 1)]
        return sorted(records, key=lambda r: (-r.severity, r.contingency_id))


# ==============================================================================
# PUBLIC API
# ==============================================================================

def severity(case: NetworkCase, base: StateVector, k: int) -> SeverityRecord:
    return ContingencyScreener(case, base).severity(k)


def rank(case: NetworkCase, base: StateVector) -> List[SeverityRecord]:
    """
    Classe les contingences de la plus sévère à la moins sévère.

    Args:
        case: Réseau
        base: Solution du cas de base

    Returns:
        Liste de SeverityRecord triée
    """
    ranked = ContingencyScreener(case, base).rank()
    logger.info(
        f"Ranked {len(ranked)} contingencies"
        + (f" (top: {ranked[0].contingency_id}, {ranked[0].severity:.6g})" if ranked else "")
    )
    return ranked


def subset_size_per_worker(n_bus: int) -> int:
    for upper, n in ContingencyScreener.SUBSET_BANDS:
        if n_bus <= upper:
            return n
    return ContingencyScreener.SUBSET_TAIL


def select_subset(
    case: NetworkCase,
    ranked: Sequence[SeverityRecord],
    workers: int,
    n_bus: Optional[int] = None,
) -> List[SeverityRecord]:
    """
    Sous-ensemble K' des contingences traitées par l'ADMM : les min{W·n, |K|} premières.

    Args:
        case: Réseau
        ranked: Liste classée
        workers: Nombre de workers W (>= 1)
        n_bus: Nombre de bus pour le choix de n (défaut : celui du cas)

    Raises:
        ValueError: Si workers < 1
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1 (got {workers})")
    n_bus = case.n_bus if n_bus is None else n_bus
    size = min(workers * subset_size_per_worker(n_bus), len(ranked))
    return list(ranked[:size])


def improved_severity(
    case: NetworkCase, base: StateVector, k: int, params: SmoothingParams = SmoothingParams()
) -> float:
    """
    Gain du recours : sévérité estimée moins pénalité c_k^σ effectivement obtenue par
    solve_contingency (pénalité évitée en prenant des actions correctives).
    """
    from .recourse import solve_contingency

    estimate = severity(case, base, k).severity
    return estimate - solve_contingency(case, k, base, params).penalty


def ranking_frame(records: Sequence[SeverityRecord]) -> pd.DataFrame:
    """Classement sous forme de DataFrame (id, kind, severity, rank, flagged)."""
    return pd.DataFrame(
        {
            "contingency_id": [r.contingency_id for r in records],
            "kind": [r.kind for r in records],
            "severity": [r.severity for r in records],
            "rank": list(range(1, len(records) + 1)),
            "flagged": [r.flagged for r in records],
        }
    )

