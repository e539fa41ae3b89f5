"""
Recours post-contingence : résolution du modèle lissé, puis du modèle restreint si les
disjonctions (réponse active, commutation PV/PQ) sont violées au-delà du seuil μ.

Toute solution renvoyée est projetée sur les disjonctions exactes, ses slacks sont
rééquilibrés, et sa pénalité est recalculée par penalty_cost. En cas d'échec du solveur, une
solution de repli (base projetée) est renvoyée avec un statut flaggé : aucune exception
numérique ne remonte.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Optional, Tuple

import numpy as np

from . import nlp
from .evaluation import (
    disjunction_violation,
    penalty_cost,
    polish_disjunctions,
    projected_base_state,
    projected_response,
    rebalance_slacks,
)
from .model import Coupling, StateModel
from .network import NetworkCase
from .smoothing import SmoothingParams
from .state import StateVector

logger = logging.getLogger(__name__)


class RecoursePath(str, Enum):
    SMOOTHED = "smoothed"
    RESTRICTED = "restricted"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class RestrictionSets:
    """Générateurs dont la réponse est collée à une borne dans le modèle restreint."""

    p_minus: FrozenSet[str] = frozenset()
    p_plus: FrozenSet[str] = frozenset()
    q_minus: FrozenSet[str] = frozenset()
    q_plus: FrozenSet[str] = frozenset()

    @property
    def empty(self) -> bool:
        return not (self.p_minus or self.p_plus or self.q_minus or self.q_plus)


@dataclass
class RecourseResult:
    """Solution d'une contingence et sa provenance."""

    k: int
    contingency_id: str
    state: StateVector
    penalty: float
    path: RecoursePath
    nlp_status: str = ""
    iterations: int = 0
    wall_time: float = 0.0
    raw_violation: Tuple[float, float] = (0.0, 0.0)
    sets: RestrictionSets = field(default_factory=RestrictionSets)
    raw_state: Optional[StateVector] = field(default=None, repr=False)

    @property
    def flagged(self) -> bool:
        return self.path == RecoursePath.FALLBACK


@dataclass(frozen=True)
class RecourseOptions:
    """Paramètres du solveur NLP pour les modèles de recours."""

    tol: float = 1e-6
    max_iter: int = 300
    time_limit: Optional[float] = None
    # une solution non convergée reste acceptable si sa violation est sous ce seuil
    accept_violation: float = 1e-5


# ==============================================================================
# HELPERS
# ==============================================================================

def warm_start_state(case: NetworkCase, k: int, base: StateVector) -> StateVector:
    """Base restreinte à l'état k, Δ = injection perdue / Σα, réponse active projetée."""
    sv = projected_base_state(case, k, base)
    ctg = case.contingency(k)
    lost = 0.0
    if ctg.kind == "generator":
        g = next(i for i, gen in enumerate(case.generators) if gen.id == ctg.element)
        lost = float(base.p[g])
    alpha_total = float(case.gen_array("alpha", k).sum())
    if alpha_total > 0:
        bound = case.delta_bound()
        sv.delta = float(np.clip(lost / alpha_total, -bound, bound))
    sv.p = projected_response(case, k, base, sv.delta)
    return rebalance_slacks(case, k, sv)


def _finalize(case: NetworkCase, k: int, base: StateVector, sv: StateVector) -> Tuple[StateVector, float]:
    polished = polish_disjunctions(case, k, base, sv)
    return polished, penalty_cost(case, k, polished)


def _usable(result: nlp.NlpResult, options: RecourseOptions) -> bool:
    if result.status == nlp.NlpStatus.NUMERICAL_FAILURE:
        return False
    return result.converged or result.violation <= options.accept_violation


def _fallback(case: NetworkCase, k: int, base: StateVector, *candidates: StateVector):
    """Meilleure solution parmi la base projetée et les candidats fournis (tous polis)."""
    best = _finalize(case, k, base, projected_base_state(case, k, base))
    for sv in candidates:
        option = _finalize(case, k, base, sv)
        if option[1] < best[1]:
            best = option
    return best


def default_solution(case: NetworkCase, k: int, base: StateVector, status: str = "default") -> RecourseResult:
    """Solution par défaut de la contingence k (base projetée), disponible sans solveur."""
    case.check_state(k, allow_base=False)
    state, penalty = _fallback(case, k, base)
    return RecourseResult(k, case.contingency(k).id, state, penalty, RecoursePath.FALLBACK, status)


# ==============================================================================
# RECOURSE MODELS
# ==============================================================================

def _solve_model(model: StateModel, start: StateVector, options: RecourseOptions):
    result = nlp.solve(
        model.problem(), model.from_state(start),
        tol=options.tol, max_iter=options.max_iter, time_limit=options.time_limit,
    )
    return result, model.to_state(result.x)


def solve_smoothed_recourse(
    case: NetworkCase,
    k: int,
    base: StateVector,
    params: SmoothingParams = SmoothingParams(),
    options: RecourseOptions = RecourseOptions(),
) -> RecourseResult:
    """
    Résout le modèle de recours lissé de la contingence k.

    Args:
        case: Réseau
        k: Contingence (1..|K|)
        base: Solution du cas de base (fixée)
        params: ε et μ
        options: Paramètres du solveur

    Returns:
        RecourseResult ; raw_violation contient les violations des disjonctions avant polissage
    """
    case.check_state(k, allow_base=False)
    start = warm_start_state(case, k, base)
    model = StateModel(case, k, Coupling.SMOOTHED, base=base, epsilon=params.epsilon)
    result, raw = _solve_model(model, start, options)
    ctg_id = case.contingency(k).id

    if not _usable(result, options):
        logger.warning(
            f"Contingency {ctg_id}: smoothed recourse failed ({result.status.value}), using fallback"
        )
        state, penalty = _fallback(case, k, base, start)
        return RecourseResult(
            k, ctg_id, state, penalty, RecoursePath.FALLBACK, result.status.value,
            result.iterations, result.wall_time, (np.inf, np.inf),
        )

    violation = disjunction_violation(case, k, base, raw)
    state, penalty = _finalize(case, k, base, raw)
    return RecourseResult(
        k, ctg_id, state, penalty, RecoursePath.SMOOTHED, result.status.value,
        result.iterations, result.wall_time, violation, raw_state=raw,
    )


def restriction_sets(
    case: NetworkCase, k: int, base: StateVector, sol: StateVector, mu: float
) -> RestrictionSets:
    """Ensembles de restriction construits à partir de Δ̂_k et q̂_gk."""
    topo = case.topology(k)
    ids = [case.generators[i].id for i in topo.gen_idx]
    alpha = case.gen_array("alpha", k)
    u = base.p[topo.gen_idx] + alpha * sol.delta
    p_lo, p_hi = case.gen_array("p_lo", k), case.gen_array("p_hi", k)
    q_lo, q_hi = case.gen_array("q_lo", k), case.gen_array("q_hi", k)

    def members(mask):
        return frozenset(gid for gid, m in zip(ids, mask) if m)

    participating = alpha > 0
    return RestrictionSets(
        p_minus=members(participating & (u <= p_lo + mu)),
        p_plus=members(participating & (u >= p_hi - mu) & ~(u <= p_lo + mu)),
        q_minus=members((sol.q <= q_lo + mu) & ~(sol.q >= q_hi - mu)),
        q_plus=members(sol.q >= q_hi - mu),
    )


def violation_check(
    case: NetworkCase, k: int, base: StateVector, sol: StateVector, mu: float
) -> Tuple[bool, RestrictionSets]:
    """
    Teste les disjonctions sur la solution lissée et construit les ensembles de restriction.

    Returns:
        Tuple (violation > μ sur l'une des deux disjonctions, RestrictionSets)
    """
    active, reactive = disjunction_violation(case, k, base, sol)
    return bool(active > mu or reactive > mu), restriction_sets(case, k, base, sol, mu)


def solve_restricted_recourse(
    case: NetworkCase,
    k: int,
    base: StateVector,
    sets: RestrictionSets,
    start: Optional[StateVector] = None,
    options: RecourseOptions = RecourseOptions(),
) -> RecourseResult:
    """
    Résout le modèle de recours restreint : disjonctions remplacées par des contraintes lisses
    sur le domaine restreint, donc satisfaites exactement par toute solution réalisable.
    """
    case.check_state(k, allow_base=False)
    start = warm_start_state(case, k, base) if start is None else start
    model = StateModel(case, k, Coupling.RESTRICTED, base=base, restriction=sets)
    result, raw = _solve_model(model, start, options)
    ctg_id = case.contingency(k).id

    if not _usable(result, options):
        logger.warning(
            f"Contingency {ctg_id}: restricted recourse failed ({result.status.value}), "
            f"using fallback"
        )
        state, penalty = _fallback(case, k, base, start)
        return RecourseResult(
            k, ctg_id, state, penalty, RecoursePath.FALLBACK, result.status.value,
            result.iterations, result.wall_time, (np.inf, np.inf), sets,
        )

    violation = disjunction_violation(case, k, base, raw)
    state, penalty = _finalize(case, k, base, raw)
    return RecourseResult(
        k, ctg_id, state, penalty, RecoursePath.RESTRICTED, result.status.value,
        result.iterations, result.wall_time, violation, sets, raw_state=raw,
    )


def solve_contingency(
    case: NetworkCase,
    k: int,
    base: StateVector,
    params: SmoothingParams = SmoothingParams(),
    options: RecourseOptions = RecourseOptions(),
) -> RecourseResult:
    """
    Stratégie complète de recours pour la contingence k.

    Modèle lissé ; si les disjonctions sont violées au-delà de μ, modèle restreint. La
    solution finale satisfait toujours les disjonctions exactes.

    Returns:
        RecourseResult (path = smoothed, restricted ou fallback)
    """
    t0 = time.perf_counter()
    smoothed = solve_smoothed_recourse(case, k, base, params, options)
    outcome = smoothed
    if smoothed.path == RecoursePath.SMOOTHED:
        # test sur la solution brute du solveur, pas sur la version polie
        violated, sets = violation_check(case, k, base, smoothed.raw_state, params.mu)
        if violated:
            restricted = solve_restricted_recourse(
                case, k, base, sets, start=smoothed.raw_state, options=options
            )
            if restricted.path == RecoursePath.FALLBACK and smoothed.penalty < restricted.penalty:
                outcome = RecourseResult(
                    k, smoothed.contingency_id, smoothed.state, smoothed.penalty,
                    RecoursePath.FALLBACK, restricted.nlp_status,
                    smoothed.iterations + restricted.iterations, 0.0,
                    smoothed.raw_violation, sets,
                )
            else:
                outcome = restricted
                outcome.iterations += smoothed.iterations

    outcome.wall_time = time.perf_counter() - t0
    logger.debug(
        f"Contingency {outcome.contingency_id}: path={outcome.path.value}, "
        f"penalty={outcome.penalty:.6g}, {outcome.wall_time:.3f}s"
    )
    return outcome

