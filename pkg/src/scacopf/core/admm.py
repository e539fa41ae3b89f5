"""
ADMM à deux niveaux sur la relaxation lagrangienne augmentée du SC-ACOPF.

Niveau interne (ADMM à trois blocs, à λ et β fixés) :
    (a) x_0   ← argmin f_0(x_0) + Σ_k ⟨y_k, x_0⟩ + ρ/2‖x_0 − x_k^base + z_k‖²   sur X_0
    (b) (x_k, x_k^base) ← argmin f_k(x_k) − ⟨y_k, x_k^base⟩ + ρ/2‖x_0 − x_k^base + z_k‖²  sur X_k
    (c) z_k   ← (ρ(x_k^base − x_0) − λ_k − y_k)/(β + ρ)
    (d) y_k   ← y_k + ρ(x_0 − x_k^base + z_k)

Niveau externe : λ_k ← Π(λ_k + β z_k), β selon la règle choisie, redémarrage de l'ADMM interne.

Les blocs (a) et (b) sont des opérateurs proximaux abstraits (ProxBlock) : les blocs réseau
s'appuient sur StateModel et le solveur NLP, BoxBlock sert de bloc convexe de référence.
Chaque mise à jour de bloc est certifiée (descente de l'objectif local) ; une mise à jour
qui n'est pas une descente est rejetée et signalée.
"""

import logging
import math
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from . import nlp
from .evaluation import flat_start
from .model import Coupling, QuadraticPenalty, StateModel
from .network import NetworkCase
from .recourse import warm_start_state
from .smoothing import SmoothingParams
from .state import StateVector

logger = logging.getLogger(__name__)


class BetaRule(str, Enum):
    PRACTICAL = "practical"
    GEOMETRIC = "geometric"
    CONSTANT = "constant"


@dataclass(frozen=True)
class AdmmConfig:
    """
    Paramètres de l'ADMM à deux niveaux.

    Args:
        tau: Rapport ρ/β (> 1)
        beta0: Pénalité initiale β_0 (> 0)
        c: Facteur de croissance externe (> 1)
        lambda_lo, lambda_hi: Bornes des multiplicateurs externes λ_k (par composante)
        inner_tol_scale: Seuil d'arrêt interne inner_tol_scale / r
        consensus_tol: Seuil de consensus max_k ‖x_0 − x_k^base‖_∞ pour l'arrêt externe
        beta_rule: practical (×beta_growth si la violation ne diminue pas de moitié),
            geometric (β_r = β_0 c^r) ou constant
        max_inner, max_outer, max_total_inner: Plafonds d'itérations
        coupling: Couplage des blocs de contingence (bigm ou smoothed)
        lambda_projection: Projection de λ sur [lambda_lo, lambda_hi]
        gamma_min: Plancher du coefficient de descente mesuré (bornes de complexité)
        workers: Threads pour les blocs de contingence
        keep_history: Conserve les itérés (rejeu des résidus)
    """

    DEFAULT_TAU = 2.0
    DEFAULT_BETA0 = 2000.0
    DEFAULT_C = 8.0
    DEFAULT_LAMBDA_BOUND = 1e7

    tau: float = DEFAULT_TAU
    beta0: float = DEFAULT_BETA0
    c: float = DEFAULT_C
    lambda_lo: float = -DEFAULT_LAMBDA_BOUND
    lambda_hi: float = DEFAULT_LAMBDA_BOUND
    inner_tol_scale: float = 0.1
    consensus_tol: float = 1e-4
    beta_rule: BetaRule = BetaRule.PRACTICAL
    beta_growth: float = 8.0
    beta_halving: float = 0.5
    max_inner: int = 50
    max_outer: int = 20
    max_total_inner: int = 200
    coupling: Coupling = Coupling.BIGM
    epsilon: float = SmoothingParams.DEFAULT_EPSILON
    lambda_projection: bool = True
    gamma_min: float = 1e-3
    nlp_tol: float = 1e-6
    nlp_max_iter: int = 500
    nlp_time_limit: Optional[float] = None
    workers: int = 1
    keep_history: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta_rule", BetaRule(self.beta_rule))
        object.__setattr__(self, "coupling", Coupling(self.coupling))
        problems = []
        if not self.tau > 1:
            problems.append(f"tau must be > 1 (got {self.tau})")
        if not self.beta0 > 0:
            problems.append(f"beta0 must be > 0 (got {self.beta0})")
        if not self.c > 1:
            problems.append(f"c must be > 1 (got {self.c})")
        if self.lambda_lo > self.lambda_hi:
            problems.append(f"lambda_lo > lambda_hi ({self.lambda_lo} > {self.lambda_hi})")
        if self.coupling not in (Coupling.BIGM, Coupling.SMOOTHED):
            problems.append(f"ADMM coupling must be bigm or smoothed (got {self.coupling.value})")
        if self.workers < 1:
            problems.append(f"workers must be >= 1 (got {self.workers})")
        if min(self.max_inner, self.max_outer, self.max_total_inner) < 1:
            problems.append("iteration caps must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))

    def inner_tol(self, r: int) -> float:
        if r < 1:
            raise ValueError(f"Outer index r must be >= 1 (got {r})")
        return self.inner_tol_scale / r

    def initial_beta(self) -> float:
        return self.beta0 * self.c if self.beta_rule == BetaRule.GEOMETRIC else self.beta0


# ==============================================================================
# PROXIMAL BLOCKS
# ==============================================================================

@dataclass
class BlockUpdate:
    """Résultat d'une mise à jour proximale d'un bloc."""

    x: np.ndarray
    before: float
    after: float
    descent: bool
    accepted: bool
    status: str = ""


class ProxBlock(ABC):
    """
    Bloc de l'ADMM : minimise f(x) + weight/2·‖x − target‖² sur son domaine.

    current est la valeur du bloc dans l'espace des variables du cas de base (x_0 pour le
    bloc de base, x_k^base pour une contingence) ; objective_value est f au point courant.
    """

    name: str = "block"

    @property
    @abstractmethod
    def current(self) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def objective_value(self) -> float:
        ...

    @abstractmethod
    def prox(self, target: np.ndarray, weight: float) -> BlockUpdate:
        ...


class BoxBlock(ProxBlock):
    """Bloc convexe f ≡ 0 sur une boîte : l'opérateur proximal est une projection."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray, start: np.ndarray, name: str = "box"):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.lo > self.hi):
            raise ValueError(f"{name}: infeasible box bounds")
        self._x = np.clip(np.asarray(start, dtype=float), self.lo, self.hi)
        self.name = name

    @property
    def current(self) -> np.ndarray:
        return self._x

    @property
    def objective_value(self) -> float:
        return 0.0

    def prox(self, target: np.ndarray, weight: float) -> BlockUpdate:
        before = 0.5 * weight * float(np.sum((self._x - target) ** 2))
        self._x = np.clip(target, self.lo, self.hi)
        after = 0.5 * weight * float(np.sum((self._x - target) ** 2))
        return BlockUpdate(self._x.copy(), before, after, nlp.check_descent(before, after), True)


class _NlpBlock(ProxBlock):
    """Partie commune des blocs réseau : résolution NLP avec redémarrage à chaud et certificat."""

    def __init__(self, model: StateModel, x_nlp: np.ndarray, config: AdmmConfig, name: str):
        self.model = model
        self.x_nlp = x_nlp
        self.config = config
        self.name = name
        self._warm: Optional[nlp.NlpResult] = None

    def _solve(self, terms: Sequence[QuadraticPenalty]) -> Tuple[float, float, bool, bool, str]:
        self.model.set_proximal(terms)
        before = self.model.objective(self.x_nlp)
        result = nlp.solve(
            self.model.problem(f"{self.name}-prox"),
            self._warm if self._warm is not None else self.x_nlp,
            tol=self.config.nlp_tol,
            max_iter=self.config.nlp_max_iter,
            time_limit=self.config.nlp_time_limit,
        )
        usable = result.status != nlp.NlpStatus.NUMERICAL_FAILURE and (
            result.converged or result.violation <= 10 * self.config.nlp_tol
        )
        after = self.model.objective(result.x) if usable else np.inf
        descent = usable and nlp.check_descent(before, after)
        if descent:
            self.x_nlp = result.x
            self._warm = result
        elif usable:
            logger.warning(
                f"{self.name}: local objective increased ({before:.10g} -> {after:.10g}), "
                f"previous iterate retained"
            )
        else:
            logger.warning(f"{self.name}: subproblem {result.status.value}, previous iterate retained")
        return before, after, descent, descent, result.status.value

    @property
    def objective_value(self) -> float:
        return self.model.penalty_objective(self.x_nlp)

    @property
    def solved(self) -> bool:
        """Au moins une résolution NLP acceptée (sinon le point courant est le point de départ)."""
        return self._warm is not None

    def state(self) -> StateVector:
        return self.model.to_state(self.x_nlp)


class BaseStateBlock(_NlpBlock):
    """Bloc du cas de base : f_0 = Σ c_g + δ c_0^σ sur X_0."""

    def __init__(self, case: NetworkCase, config: AdmmConfig, start: Optional[StateVector] = None):
        model = StateModel(case, 0, penalty_weight=case.delta_weight)
        self.state_map = model.state_map
        self.box = (model.state_map @ model.lb, model.state_map @ model.ub)
        super().__init__(model, model.from_state(flat_start(case, 0)), config, "base")
        if start is not None:
            self.x_nlp = model.from_state(start)
        else:
            self._initial_solve()

    def _initial_solve(self) -> None:
        result = nlp.solve(
            self.model.problem("base-acopf"), self.x_nlp,
            tol=self.config.nlp_tol, max_iter=self.config.nlp_max_iter,
            time_limit=self.config.nlp_time_limit,
        )
        if result.status == nlp.NlpStatus.NUMERICAL_FAILURE:
            logger.warning("Base ACOPF warm start failed, starting from the flat point")
            return
        self.x_nlp = result.x
        self._warm = result
        logger.info(f"Base ACOPF warm start: {result.status.value}, f0={self.objective_value:.6g}")

    @property
    def current(self) -> np.ndarray:
        return self.state_map @ self.x_nlp

    def prox(self, target: np.ndarray, weight: float) -> BlockUpdate:
        before, after, descent, accepted, status = self._solve(
            [QuadraticPenalty(self.state_map, target, weight)]
        )
        return BlockUpdate(self.current, before, after, descent, accepted, status)


class ContingencyStateBlock(_NlpBlock):
    """
    Bloc de la contingence k : (x_k, x_k^base) sur X_k.

    Seules les copies couplées (p_g0 des générateurs actifs, v_i0 de leurs bus) entrent dans
    le NLP ; les autres composantes de x_k^base ont une mise à jour exacte par projection sur
    la boîte du cas de base.
    """

    def __init__(
        self,
        case: NetworkCase,
        k: int,
        config: AdmmConfig,
        base: StateVector,
        box: Tuple[np.ndarray, np.ndarray],
        penalty_weight: float,
    ):
        self.k = k
        self.box = box
        fixed = StateModel(
            case, k, config.coupling, base=base, epsilon=config.epsilon,
            penalty_weight=penalty_weight,
        )
        start = fixed.from_state(warm_start_state(case, k, base))
        result = nlp.solve(
            fixed.problem(f"ctg-{k}-init"), start,
            tol=config.nlp_tol, max_iter=config.nlp_max_iter, time_limit=config.nlp_time_limit,
        )
        x_nlp = result.x if result.status != nlp.NlpStatus.NUMERICAL_FAILURE else start
        if not result.converged:
            logger.warning(f"Contingency {k}: initial solve {result.status.value}")

        model = StateModel(
            case, k, config.coupling, base=base, free_base_copy=True, epsilon=config.epsilon,
            penalty_weight=penalty_weight,
        )
        super().__init__(model, x_nlp, config, f"ctg-{k}")
        self.positions = model.copy_positions
        self.selection = sp.csr_matrix(
            (np.ones(len(self.positions)), (np.arange(len(self.positions)), model.copy_variables)),
            shape=(len(self.positions), model.n),
        )
        self._xb = np.clip(base.to_array(), box[0], box[1])
        self._xb[self.positions] = x_nlp[model.copy_variables]

    @property
    def current(self) -> np.ndarray:
        return self._xb

    def prox(self, target: np.ndarray, weight: float) -> BlockUpdate:
        free = np.ones(len(target), dtype=bool)
        free[self.positions] = False

        def outside(xb):
            return 0.5 * weight * float(np.sum((xb[free] - target[free]) ** 2))

        before_free = outside(self._xb)
        before, after, descent, accepted, status = self._solve(
            [QuadraticPenalty(self.selection, target[self.positions], weight)]
        )
        xb = np.clip(target, self.box[0], self.box[1])
        xb[self.positions] = self.x_nlp[self.model.copy_variables]
        self._xb = xb
        after_free = outside(xb)
        return BlockUpdate(
            xb.copy(), before + before_free,
            (after if accepted else before) + after_free, descent, accepted, status,
        )


# ==============================================================================
# STATE AND DIAGNOSTICS
# ==============================================================================

@dataclass
class CouplingBlock:
    """Variables de couplage de la contingence k (dimension du cas de base)."""

    k: int
    x_base_copy: np.ndarray
    z: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    prev_x_base_copy: Optional[np.ndarray] = None
    prev_z: Optional[np.ndarray] = None


@dataclass
class InnerRecord:
    """Ligne de diagnostic d'une itération interne."""

    t: int
    r: int
    al_value: float
    s_max: float
    r_max: float
    d0: float
    dk_max: float
    beta: float
    rho: float
    wall_time: float
    base_descent: bool
    ctg_descent: bool
    retained: List[str] = field(default_factory=list)
    gamma: Optional[float] = None

    @property
    def certificates_ok(self) -> bool:
        return self.base_descent and self.ctg_descent


@dataclass
class RoundRecord:
    """Bilan d'un tour externe."""

    r: int
    beta: float
    inner_iterations: int
    consensus: float
    l_upper: float
    l_lower: float
    lambda_max: float
    stop_reason: str = ""


@dataclass
class AdmmDiagnostics:
    rows: List[InnerRecord] = field(default_factory=list)
    rounds: List[RoundRecord] = field(default_factory=list)
    gammas: List[float] = field(default_factory=list)
    history: List[dict] = field(default_factory=list)

    @property
    def certificates_ok(self) -> bool:
        return all(r.certificates_ok for r in self.rows)

    def measured_gamma(self, gamma_min: float) -> float:
        """Plus petit coefficient de descente observé, borné inférieurement par gamma_min."""
        positive = [g for g in self.gammas if np.isfinite(g)]
        return max(gamma_min, min(positive)) if positive else gamma_min

    def iterations_in_round(self, r: int) -> int:
        return sum(1 for row in self.rows if row.r == r)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.record(row) for row in self.rows])

    @staticmethod
    def record(row: InnerRecord) -> dict:
        out = asdict(row)
        out["retained"] = ",".join(row.retained)
        out["certificates_ok"] = row.certificates_ok
        return out


@dataclass
class AdmmState:
    """État complet de la relaxation (blocs, variables de couplage, β, indices)."""

    config: AdmmConfig
    base_block: ProxBlock
    ctg_blocks: Dict[int, ProxBlock]
    couplings: Dict[int, CouplingBlock]
    lower_cost: float
    beta: float
    r: int = 1
    t: int = 0
    x0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prev_violation: Optional[float] = None
    diagnostics: AdmmDiagnostics = field(default_factory=AdmmDiagnostics)
    n_ctg_total: int = 0

    @property
    def rho(self) -> float:
        return self.config.tau * self.beta

    @property
    def keys(self) -> List[int]:
        return sorted(self.couplings)

    @classmethod
    def from_blocks(
        cls,
        base_block: ProxBlock,
        ctg_blocks: Dict[int, ProxBlock],
        config: AdmmConfig,
        lower_cost: float = 0.0,
    ) -> "AdmmState":
        """Initialise λ = 0, z = 0, y = −λ − βz = 0 et x_k^base aux valeurs courantes des blocs."""
        if not ctg_blocks:
            raise ValueError("The ADMM needs at least one contingency block")
        x0 = base_block.current.copy()
        couplings = {}
        for k, block in ctg_blocks.items():
            if block.current.shape != x0.shape:
                raise ValueError(f"Block {k} has dimension {block.current.shape}, base {x0.shape}")
            zeros = np.zeros_like(x0)
            couplings[k] = CouplingBlock(k, block.current.copy(), zeros.copy(), zeros.copy(), zeros)
        state = cls(
            config=config, base_block=base_block, ctg_blocks=dict(ctg_blocks),
            couplings=couplings, lower_cost=lower_cost, beta=config.initial_beta(), x0=x0,
            n_ctg_total=len(ctg_blocks),
        )
        start_round(state)
        return state

    def base_solution(self) -> Optional[StateVector]:
        if isinstance(self.base_block, BaseStateBlock):
            return self.base_block.state()
        return None


def al_value(state: AdmmState) -> float:
    """Valeur du lagrangien augmenté L_ρ au point courant."""
    beta, rho = state.beta, state.rho
    value = state.base_block.objective_value
    for k, cb in state.couplings.items():
        s = state.x0 - cb.x_base_copy + cb.z
        value += state.ctg_blocks[k].objective_value
        value += float(cb.lam @ cb.z) + 0.5 * beta * float(cb.z @ cb.z)
        value += float(cb.y @ s) + 0.5 * rho * float(s @ s)
    return value


def l_lower(state: AdmmState) -> float:
    """Borne inférieure L̲(λ, β) = min Σ c_g − ‖λ‖²/β."""
    lam_sq = sum(float(cb.lam @ cb.lam) for cb in state.couplings.values())
    return state.lower_cost - lam_sq / state.beta


def start_round(state: AdmmState) -> None:
    """Redémarrage interne : z = 0, y = −λ (λ + βz + y = 0), itérés x conservés."""
    for cb in state.couplings.values():
        cb.z = np.zeros_like(cb.lam)
        cb.y = -cb.lam.copy()
        cb.prev_x_base_copy = None
        cb.prev_z = None
    state.diagnostics.rounds.append(RoundRecord(
        r=state.r, beta=state.beta, inner_iterations=0, consensus=consensus_violation(state),
        l_upper=al_value(state), l_lower=l_lower(state),
        lambda_max=max(float(np.max(np.abs(cb.lam), initial=0.0)) for cb in state.couplings.values()),
    ))


def consensus_violation(state: AdmmState) -> float:
    return max(
        float(np.max(np.abs(state.x0 - cb.x_base_copy), initial=0.0))
        for cb in state.couplings.values()
    )


# ==============================================================================
# INNER / OUTER UPDATES
# ==============================================================================

def inner_iterate(state: AdmmState) -> InnerRecord:
    """
    Une itération interne (a)-(d), contingences en parallèle si workers > 1.

    Returns:
        Ligne de diagnostic (aussi ajoutée à state.diagnostics)
    """
    t_start = time.perf_counter()
    cfg, beta, rho = state.config, state.beta, state.rho
    keys = state.keys
    retained = []

    # (a) bloc de base
    target0 = np.mean(
        [cb.x_base_copy - cb.z - cb.y / rho for cb in (state.couplings[k] for k in keys)], axis=0
    )
    upd0 = state.base_block.prox(target0, len(keys) * rho)
    if not upd0.accepted:
        retained.append(state.base_block.name)
    state.x0 = upd0.x.copy()

    # (b) blocs de contingence, indépendants
    targets = {k: state.x0 + state.couplings[k].z + state.couplings[k].y / rho for k in keys}

    def update(k):
        return state.ctg_blocks[k].prox(targets[k], rho)

    if cfg.workers > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.workers, len(keys))) as pool:
            updates = dict(zip(keys, pool.map(update, keys)))
    else:
        updates = {k: update(k) for k in keys}

    # (c), (d) et résidus
    d0 = np.zeros_like(state.x0)
    s_max = dk_max = r_max = 0.0
    gamma = None
    for k in keys:
        cb, upd = state.couplings[k], updates[k]
        if not upd.accepted:
            retained.append(state.ctg_blocks[k].name)
        step = upd.x - cb.x_base_copy
        if float(step @ step) > 1e-24:
            g = (upd.before - upd.after) / (beta * float(step @ step))
            state.diagnostics.gammas.append(g)
            gamma = g if gamma is None else min(gamma, g)

        cb.prev_x_base_copy, cb.prev_z = cb.x_base_copy, cb.z
        cb.x_base_copy = upd.x.copy()
        cb.z = (rho * (cb.x_base_copy - state.x0) - cb.lam - cb.y) / (beta + rho)
        cb.y = cb.y + rho * (state.x0 - cb.x_base_copy + cb.z)

        s = state.x0 - cb.x_base_copy + cb.z
        s_max = max(s_max, float(np.max(np.abs(s), initial=0.0)))
        r_max = max(r_max, float(np.max(np.abs(state.x0 - cb.x_base_copy), initial=0.0)))
        d_k = rho * (cb.z - cb.prev_z)
        dk_max = max(dk_max, float(np.linalg.norm(d_k)))
        d0 += rho * ((cb.prev_x_base_copy - cb.x_base_copy) + (cb.z - cb.prev_z))

    state.t += 1
    row = InnerRecord(
        t=state.t, r=state.r, al_value=al_value(state), s_max=s_max, r_max=r_max,
        d0=float(np.linalg.norm(d0)), dk_max=dk_max, beta=beta, rho=rho,
        wall_time=time.perf_counter() - t_start,
        base_descent=upd0.descent, ctg_descent=all(u.descent for u in updates.values()),
        retained=retained, gamma=gamma,
    )
    state.diagnostics.rows.append(row)
    if cfg.keep_history:
        state.diagnostics.history.append({
            "t": state.t, "r": state.r, "rho": rho, "x0": state.x0.copy(),
            "x_base_copy": {k: state.couplings[k].x_base_copy.copy() for k in keys},
            "z": {k: state.couplings[k].z.copy() for k in keys},
            "y": {k: state.couplings[k].y.copy() for k in keys},
        })
    logger.debug(
        f"ADMM t={row.t} r={row.r}: L={row.al_value:.8g} s={s_max:.2e} r={r_max:.2e} "
        f"d0={row.d0:.2e} dk={dk_max:.2e}" + (f" retained={retained}" if retained else "")
    )
    return row


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.stop


def inner_should_stop(
    diagnostics: AdmmDiagnostics,
    r: int,
    config: AdmmConfig,
    deadline: Optional[float] = None,
) -> StopDecision:
    """
    Arrêt interne : max_k ‖x_0 − x_k^base + z_k‖_∞ <= inner_tol(r), ou plafond atteint.

    Returns:
        StopDecision (raison : "tolerance", "inner-cap", "total-cap", "deadline" ou "")
    """
    tol = config.inner_tol(r)
    in_round = diagnostics.iterations_in_round(r)
    if in_round and diagnostics.rows[-1].s_max <= tol:
        return StopDecision(True, "tolerance")
    if in_round >= config.max_inner:
        return StopDecision(True, "inner-cap")
    if len(diagnostics.rows) >= config.max_total_inner:
        return StopDecision(True, "total-cap")
    if deadline is not None and time.perf_counter() >= deadline:
        return StopDecision(True, "deadline")
    return StopDecision(False)


def outer_update(state: AdmmState, config: Optional[AdmmConfig] = None) -> Tuple[float, float]:
    """
    Mise à jour externe λ_k ← Π(λ_k + β z_k) puis β selon la règle.

    Returns:
        Tuple (plus grand |λ|, nouveau β)
    """
    cfg = config or state.config
    for cb in state.couplings.values():
        candidate = cb.lam + state.beta * cb.z
        cb.lam = np.clip(candidate, cfg.lambda_lo, cfg.lambda_hi) if cfg.lambda_projection else candidate

    violation = consensus_violation(state)
    if cfg.beta_rule == BetaRule.GEOMETRIC:
        state.beta = cfg.beta0 * cfg.c ** (state.r + 1)
    elif cfg.beta_rule == BetaRule.PRACTICAL:
        if state.prev_violation is not None and violation > cfg.beta_halving * state.prev_violation:
            state.beta *= cfg.beta_growth
    state.prev_violation = violation
    state.r += 1
    lam_max = max(float(np.max(np.abs(cb.lam), initial=0.0)) for cb in state.couplings.values())
    logger.info(f"ADMM outer update -> r={state.r}, beta={state.beta:.6g}, max|lambda|={lam_max:.3e}")
    return lam_max, state.beta


def stationarity_residuals_original(state: AdmmState) -> Tuple[float, List[float], List[float]]:
    """
    Résidus de stationnarité du problème d'origine à partir des deux derniers itérés :
    d_0 = ρ Σ_k[(x_k^base)^t − (x_k^base)^{t+1} + z^{t+1} − z^t], d_k = ρ(z^{t+1} − z^t),
    r_k = x_0 − x_k^base.

    Raises:
        ValueError: Si aucune itération interne n'a été faite dans le tour courant
    """
    rho = state.rho
    d0 = np.zeros_like(state.x0)
    dk, rk = [], []
    for k in state.keys:
        cb = state.couplings[k]
        if cb.prev_z is None:
            raise ValueError("Stationarity residuals need at least one inner iteration")
        d0 += rho * ((cb.prev_x_base_copy - cb.x_base_copy) + (cb.z - cb.prev_z))
        dk.append(float(np.linalg.norm(rho * (cb.z - cb.prev_z))))
        rk.append(float(np.linalg.norm(state.x0 - cb.x_base_copy)))
    return float(np.linalg.norm(d0)), dk, rk


def is_stationary(state: AdmmState, epsilon: float) -> bool:
    d0, dk, rk = stationarity_residuals_original(state)
    return max([d0] + dk + rk) <= epsilon


# ==============================================================================
# COMPLEXITY BOUNDS
# ==============================================================================

@dataclass(frozen=True)
class ComplexityBounds:
    t_value: float
    t_bound: int
    r_bound: int
    total_bound: int
    gamma: float
    eta: float
    big_lambda: float
    delta_l: float
    certified: bool


def eta_constant(gamma: float, tau: float) -> float:
    return min(gamma, (tau + 1.0) / 2.0 - 1.0 / tau)


def complexity_bounds(
    diagnostics: AdmmDiagnostics,
    config: AdmmConfig,
    n_blocks: int,
    dimension: int,
    lower_cost: float,
    epsilon: Optional[float] = None,
) -> ComplexityBounds:
    """
    Bornes d'itérations interne (par tour) et externe, évaluées avec les constantes mesurées.

    Purement diagnostique : certified=False si un certificat de descente a échoué.
    """
    if not diagnostics.rounds:
        raise ValueError("Complexity bounds need at least one started round")
    eps = config.consensus_tol if epsilon is None else epsilon
    gamma = diagnostics.measured_gamma(config.gamma_min)
    eta = eta_constant(gamma, config.tau)

    current = diagnostics.rounds[-1]
    beta = current.beta
    rho = config.tau * beta
    t_value = 2.0 * rho**2 * n_blocks * (current.l_upper - current.l_lower) / (beta * eta) / eps**2

    big_lambda = n_blocks * dimension * max(config.lambda_lo**2, config.lambda_hi**2)
    l_upper = max(r.l_upper for r in diagnostics.rounds)
    delta_l = l_upper - (lower_cost - big_lambda / config.beta0)
    r_bound = max(1, math.ceil(math.log(max(4.0 * delta_l / (config.beta0 * eps**2), 1.0), config.c)))
    total = (
        math.ceil(2.0 * config.c * config.tau**2 * config.beta0 * n_blocks * delta_l
                  / ((config.c - 1.0) * eta) * (config.c**r_bound - 1.0) / eps**2)
        + r_bound
    )
    return ComplexityBounds(
        t_value=t_value,
        t_bound=math.ceil(t_value),
        r_bound=r_bound,
        total_bound=total,
        gamma=gamma,
        eta=eta,
        big_lambda=big_lambda,
        delta_l=delta_l,
        certified=diagnostics.certificates_ok,
    )


# ==============================================================================
# DRIVER
# ==============================================================================

def build_relaxation(
    case: NetworkCase,
    selected: Sequence[int],
    config: AdmmConfig = AdmmConfig(),
    base_start: Optional[StateVector] = None,
) -> AdmmState:
    """
    Construit la relaxation pour le sous-ensemble K' et initialise les itérés.

    Args:
        case: Réseau
        selected: États k des contingences retenues (non vide)
        config: Paramètres ADMM
        base_start: Solution de base initiale (sinon, résolution de l'ACOPF de base seul)

    Raises:
        ValueError: K' vide ou hors bornes
    """
    if not selected:
        raise ValueError("The contingency subset must not be empty")
    for k in selected:
        case.check_state(k, allow_base=False)

    base_block = BaseStateBlock(case, config, base_start)
    x0_state = base_block.state()
    weight = (1.0 - case.delta_weight) / case.n_ctg
    blocks = {
        int(k): ContingencyStateBlock(case, int(k), config, x0_state, base_block.box, weight)
        for k in sorted(set(selected))
    }
    lower_cost = float(sum(g.cost.evaluate(g.p_lo) for g in case.generators))
    logger.info(
        f"ADMM relaxation: {len(blocks)} contingencies, coupling={config.coupling.value}, "
        f"beta={config.initial_beta():g}, tau={config.tau:g}"
    )
    state = AdmmState.from_blocks(base_block, blocks, config, lower_cost)
    state.n_ctg_total = case.n_ctg
    return state


@dataclass
class AdmmResult:
    base: Optional[StateVector]
    converged: bool
    rounds: int
    inner_iterations: int
    consensus: float
    reason: str
    diagnostics: AdmmDiagnostics


def run_admm(
    state: AdmmState,
    deadline: Optional[float] = None,
    on_round: Optional[Callable[[AdmmState], None]] = None,
) -> AdmmResult:
    """
    Boucle externe complète jusqu'au consensus, aux plafonds ou à l'échéance.

    Args:
        state: Relaxation initialisée (build_relaxation ou AdmmState.from_blocks)
        deadline: Échéance absolue (time.perf_counter)
        on_round: Appelé à la fin de chaque tour (écriture du meilleur point courant)
    """
    cfg = state.config
    reason = ""
    converged = False
    while True:
        while True:
            inner_iterate(state)
            decision = inner_should_stop(state.diagnostics, state.r, cfg, deadline)
            if decision:
                break
        consensus = consensus_violation(state)
        current = state.diagnostics.rounds[-1]
        current.inner_iterations = state.diagnostics.iterations_in_round(state.r)
        current.stop_reason = decision.reason
        logger.info(
            f"ADMM round r={state.r}: {current.inner_iterations} inner iterations "
            f"({decision.reason}), consensus={consensus:.3e}"
        )
        if on_round is not None:
            on_round(state)

        if consensus <= cfg.consensus_tol:
            converged, reason = True, "consensus"
            break
        if decision.reason in ("total-cap", "deadline"):
            reason = decision.reason
            break
        if state.r >= cfg.max_outer:
            reason = "outer-cap"
            break
        outer_update(state, cfg)
        start_round(state)

    if not state.diagnostics.certificates_ok:
        logger.warning("Some ADMM descent certificates failed: convergence guarantees do not apply")
    return AdmmResult(
        base=state.base_solution(),
        converged=converged,
        rounds=state.r,
        inner_iterations=len(state.diagnostics.rows),
        consensus=consensus_violation(state),
        reason=reason,
        diagnostics=state.diagnostics,
    )
