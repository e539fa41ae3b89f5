"""
Validation d'un cas réseau (lint du fichier de cas).

Les problèmes sont collectés dans une liste plutôt que levés un par un, pour que la
commande `validate` puisse tous les afficher.
"""

import logging
import math
from typing import List

logger = logging.getLogger(__name__)


class CaseValidationError(ValueError):
    """Cas réseau invalide ; `problems` contient la liste des erreurs détectées."""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        preview = "; ".join(self.problems[:5])
        more = f" (+{len(self.problems) - 5} more)" if len(self.problems) > 5 else ""
        super().__init__(f"Invalid network case: {preview}{more}")


def _check_unique(kind: str, ids: List[str], problems: List[str]) -> None:
    seen = set()
    for item_id in ids:
        if item_id in seen:
            problems.append(f"duplicate {kind} id '{item_id}'")
        seen.add(item_id)


def _is_finite(*values: float) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in values)


def validate_case(case) -> List[str]:
    """
    Vérifie les invariants structurels et numériques d'un NetworkCase.

    Args:
        case: NetworkCase à contrôler

    Returns:
        Liste des problèmes (vide si le cas est valide)
    """
    problems: List[str] = []

    if not (_is_finite(case.s_base) and case.s_base > 0):
        problems.append(f"s_base must be > 0 (got {case.s_base})")
    if not (_is_finite(case.delta_weight) and 0.0 <= case.delta_weight <= 1.0):
        problems.append(f"delta_weight must lie in [0, 1] (got {case.delta_weight})")
    if not case.buses:
        problems.append("case has no bus")

    bus_ids = [b.id for b in case.buses]
    _check_unique("bus", bus_ids, problems)
    known = set(bus_ids)

    for bus in case.buses:
        if not _is_finite(bus.v_lo, bus.v_hi, bus.load_p, bus.load_q):
            problems.append(f"bus '{bus.id}': non-finite field")
        elif not (0 < bus.v_lo <= bus.v_hi):
            problems.append(f"bus '{bus.id}': need 0 < v_lo <= v_hi (got {bus.v_lo}, {bus.v_hi})")

    _check_unique("generator", [g.id for g in case.generators], problems)
    for gen in case.generators:
        if gen.bus not in known:
            problems.append(f"generator '{gen.id}': unknown bus '{gen.bus}'")
        if not _is_finite(gen.p_lo, gen.p_hi, gen.q_lo, gen.q_hi, gen.alpha):
            problems.append(f"generator '{gen.id}': non-finite field")
            continue
        if gen.p_lo > gen.p_hi:
            problems.append(f"generator '{gen.id}': p_lo > p_hi")
        if gen.q_lo > gen.q_hi:
            problems.append(f"generator '{gen.id}': q_lo > q_hi")
        if gen.p_lo < 0:
            problems.append(f"generator '{gen.id}': p_lo must be >= 0 (cost defined on p >= 0)")
        if gen.alpha < 0:
            problems.append(f"generator '{gen.id}': alpha must be >= 0")

    branch_ids = [e.id for e in case.lines] + [f.id for f in case.transformers]
    _check_unique("branch", branch_ids, problems)
    for branch in list(case.lines) + list(case.transformers):
        for end in (branch.origin, branch.destination):
            if end not in known:
                problems.append(f"branch '{branch.id}': unknown bus '{end}'")
        if branch.origin == branch.destination:
            problems.append(f"branch '{branch.id}': origin and destination are the same bus")
        if not _is_finite(branch.g, branch.b, branch.b_ch):
            problems.append(f"branch '{branch.id}': non-finite admittance")

    for line in case.lines:
        limits = (line.r_max_base, line.r_max_ctg)
        if not (_is_finite(*limits) and min(limits) >= 0):
            problems.append(f"line '{line.id}': current limits must be >= 0")

    for xf in case.transformers:
        if not (_is_finite(xf.tap, xf.shift) and xf.tap > 0):
            problems.append(f"transformer '{xf.id}': tap ratio must be > 0")
        limits = (xf.s_max_base, xf.s_max_ctg)
        if not (_is_finite(*limits) and min(limits) >= 0):
            problems.append(f"transformer '{xf.id}': apparent-power limits must be >= 0")

    _check_unique("contingency", [c.id for c in case.contingencies], problems)
    element_ids = {
        "generator": {g.id for g in case.generators},
        "line": {e.id for e in case.lines},
        "transformer": {f.id for f in case.transformers},
    }
    for ctg in case.contingencies:
        if ctg.kind not in element_ids:
            problems.append(f"contingency '{ctg.id}': unknown kind '{ctg.kind}'")
        elif ctg.element not in element_ids[ctg.kind]:
            problems.append(f"contingency '{ctg.id}': no {ctg.kind} with id '{ctg.element}'")

    if problems:
        logger.warning(f"Case validation found {len(problems)} problem(s)")
    else:
        logger.debug(f"Case '{case.name}' validated: {len(case.buses)} buses")
    return problems
