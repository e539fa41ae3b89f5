"""
Construction des sous-problèmes NLP d'un état k (cas de base ou contingence).

Un StateModel traduit les contraintes de l'état k en un NlpProblem :
- variables physiques v, θ, p, q, Δ
- slacks σ décomposés en segments (un par morceau de la pénalité linéaire par morceaux),
  ce qui rend l'objectif linéaire et lisse
- coûts de production décomposés de même (cas de base)
- pour une contingence, copies p_g0 / v_i0 du cas de base (fixées pour le recours, libres
  pour l'ADMM) et couplage selon le mode choisi : lissé, big-M relaxé ou restreint

Les dérivées premières et secondes sont analytiques ; to_state / from_state font le lien avec
StateVector via une application linéaire creuse.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .network import NetworkCase, PwlCost
from .nlp import NlpProblem
from .power_flow import BranchArrays, EndTerms
from .smoothing import LN2, SmoothingParams, smooth_response_derivatives, softplus, softplus_derivatives
from .state import BUS_FIELDS, StateLayout, StateVector

if TYPE_CHECKING:
    from .recourse import RestrictionSets

logger = logging.getLogger(__name__)

SLACK_FIELDS = BUS_FIELDS[2:] + ("sigma_s",)


class Coupling(str, Enum):
    """Représentation des contraintes de réponse des générateurs d'une contingence."""

    NONE = "none"
    SMOOTHED = "smoothed"
    BIGM = "bigm"
    RESTRICTED = "restricted"


@dataclass
class QuadraticPenalty:
    """Terme weight/2·‖A x − target‖² ajouté à l'objectif (termes proximaux de l'ADMM)."""

    matrix: sp.csr_matrix
    target: np.ndarray
    weight: float

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        self.target = np.asarray(self.target, dtype=float).reshape(-1)
        if self.matrix.shape[0] != len(self.target):
            raise ValueError(
                f"QuadraticPenalty target has {len(self.target)} rows, matrix {self.matrix.shape[0]}"
            )
        if self.weight < 0:
            raise ValueError(f"QuadraticPenalty weight must be >= 0 (got {self.weight})")

    def value(self, x: np.ndarray) -> float:
        r = self.matrix @ x - self.target
        return 0.5 * self.weight * float(r @ r)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.weight * (self.matrix.T @ (self.matrix @ x - self.target))

    def hessian(self) -> sp.csr_matrix:
        return (self.weight * (self.matrix.T @ self.matrix)).tocsr()


# ==============================================================================
# BUILDING BLOCKS
# ==============================================================================

class _VariableLayout:
    def __init__(self):
        self.n = 0
        self.blocks: Dict[str, np.ndarray] = {}

    def add(self, name: str, size: int) -> np.ndarray:
        idx = np.arange(self.n, self.n + size)
        self.blocks[name] = idx
        self.n += size
        return idx


@dataclass
class _Segments:
    """Segments d'une famille de coûts linéaires par morceaux (un propriétaire par coût)."""

    owner: np.ndarray
    index: np.ndarray
    upper: np.ndarray
    slope: np.ndarray
    costs: Tuple[PwlCost, ...]

    @classmethod
    def build(cls, layout: _VariableLayout, name: str, costs: Sequence[PwlCost]) -> "_Segments":
        pieces = [c.n_pieces for c in costs]
        owner = np.repeat(np.arange(len(costs)), pieces).astype(int)
        upper = np.concatenate([c.lengths for c in costs]) if costs else np.zeros(0)
        slope = np.concatenate([c.slopes for c in costs]) if costs else np.zeros(0)
        return cls(owner, layout.add(name, len(owner)), upper, slope, tuple(costs))

    @property
    def n_owner(self) -> int:
        return len(self.costs)

    def summation(self, n: int) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.ones(len(self.index)), (self.owner, self.index)), shape=(self.n_owner, n)
        )

    def split(self, values: np.ndarray) -> np.ndarray:
        if not self.costs:
            return np.zeros(0)
        return np.concatenate(
            [c.split(max(float(v), 0.0)) for c, v in zip(self.costs, values)]
        )

    def pairs(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Couples (i, j, propriétaire) de segments d'un même propriétaire."""
        rows, cols, owners = [], [], []
        for o in range(self.n_owner):
            idx = self.index[self.owner == o]
            ii, jj = np.meshgrid(idx, idx, indexing="ij")
            rows.append(ii.ravel())
            cols.append(jj.ravel())
            owners.append(np.full(ii.size, o))
        if not rows:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(owners)


class _RowBuilder:
    """Lignes de contraintes linéaires Σ a_j x_j (= ou <=) rhs."""

    def __init__(self):
        self.rows: List[int] = []
        self.cols: List[int] = []
        self.vals: List[float] = []
        self.rhs: List[float] = []
        self.blocks: Dict[str, slice] = {}

    def __len__(self) -> int:
        return len(self.rhs)

    def add(self, terms: Sequence[Tuple[int, float]], rhs: float) -> None:
        r = len(self.rhs)
        for col, coef in terms:
            self.rows.append(r)
            self.cols.append(int(col))
            self.vals.append(float(coef))
        self.rhs.append(float(rhs))

    def mark(self, name: str, start: int) -> None:
        self.blocks[name] = slice(start, len(self.rhs))

    def build(self, n: int) -> Tuple[sp.csr_matrix, np.ndarray]:
        matrix = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rhs), n))
        return matrix, np.asarray(self.rhs, dtype=float)


# ==============================================================================
# STATE MODEL
# ==============================================================================

class StateModel:
    """
    Sous-problème NLP de l'état k.

    Args:
        case: Réseau
        k: État (0 = base)
        coupling: Mode de couplage (NONE pour la base, obligatoire pour une contingence)
        base: Solution du cas de base (valeurs des copies p_g0, v_i0)
        free_base_copy: Copies libres dans la boîte du cas de base (ADMM) au lieu de fixées
        epsilon: Échelle de lissage (mode SMOOTHED)
        restriction: Ensembles de restriction (mode RESTRICTED)
        cost_weight: Poids du coût de production (base)
        penalty_weight: Poids de la pénalité c_k^σ

    Raises:
        ValueError: Combinaison d'options invalide
    """

    def __init__(
        self,
        case: NetworkCase,
        k: int,
        coupling: Coupling = Coupling.NONE,
        base: Optional[StateVector] = None,
        free_base_copy: bool = False,
        epsilon: float = SmoothingParams.DEFAULT_EPSILON,
        restriction: Optional["RestrictionSets"] = None,
        cost_weight: float = 1.0,
        penalty_weight: float = 1.0,
    ):
        case.check_state(k)
        coupling = Coupling(coupling)
        self._validate_options(k, coupling, base, free_base_copy, epsilon, restriction)
        if base is not None:
            base.check_dimensions(case, 0)

        self.case = case
        self.k = int(k)
        self.coupling = coupling
        self.base = base
        self.free_base_copy = free_base_copy
        self.epsilon = float(epsilon)
        self.restriction = restriction
        self.proximal: List[QuadraticPenalty] = []

        self.topo = case.topology(k)
        self.branches = BranchArrays.for_state(case, k)
        self.state_layout = StateLayout.for_state(case, k)
        self.gen_bus = case.gen_bus[self.topo.gen_idx]
        self.alpha = case.gen_array("alpha", k)

        self._build_variables(cost_weight, penalty_weight)
        self._build_bounds()
        self._build_linear_rows()
        self._build_maps()
        self._cache_x: Optional[np.ndarray] = None
        self._cache_ends: Optional[Tuple[EndTerms, EndTerms]] = None

        logger.debug(
            f"StateModel k={k} ({coupling.value}): {self.n} variables, "
            f"{self.n_eq} equalities, {self.n_ineq} inequalities"
        )

    @staticmethod
    def _validate_options(k, coupling, base, free_base_copy, epsilon, restriction) -> None:
        if k == 0 and coupling != Coupling.NONE:
            raise ValueError("The base state has no coupling constraints")
        if k > 0 and coupling == Coupling.NONE:
            raise ValueError(f"Contingency state {k} needs a coupling mode")
        if k > 0 and base is None:
            raise ValueError(f"Contingency state {k} needs a base state")
        if coupling == Coupling.RESTRICTED and (restriction is None or free_base_copy):
            raise ValueError("The restricted model needs restriction sets and a fixed base")
        if not epsilon > 0:
            raise ValueError(f"epsilon must be > 0 (got {epsilon})")

    # ------------------------------------------------------------------
    # Variables and bounds
    # ------------------------------------------------------------------

    def _build_variables(self, cost_weight: float, penalty_weight: float) -> None:
        case, topo = self.case, self.topo
        nb, ng = case.n_bus, topo.n_gen
        tables = case.penalties(self.k)
        lay = _VariableLayout()

        self.iv = lay.add("v", nb)
        self.ith = lay.add("theta", nb)
        self.ip = lay.add("p", ng)
        self.iq = lay.add("q", ng)
        self.idelta = int(lay.add("delta", 1)[0])

        self.segments: Dict[str, _Segments] = {
            "sigma_p_plus": _Segments.build(lay, "sigma_p_plus", [tables.p] * nb),
            "sigma_p_minus": _Segments.build(lay, "sigma_p_minus", [tables.p] * nb),
            "sigma_q_plus": _Segments.build(lay, "sigma_q_plus", [tables.q] * nb),
            "sigma_q_minus": _Segments.build(lay, "sigma_q_minus", [tables.q] * nb),
            "sigma_s": _Segments.build(
                lay, "sigma_s",
                [tables.s_line if is_line else tables.s_transformer
                 for is_line in self.branches.is_line],
            ),
        }
        self.gen_cost: Optional[_Segments] = None
        if self.k == 0:
            self.gen_cost = _Segments.build(
                lay, "gen_cost", [case.generators[i].cost for i in topo.gen_idx]
            )

        self.copy_buses = np.zeros(0, dtype=int)
        if self.coupling != Coupling.NONE:
            self.copy_buses = np.unique(self.gen_bus)
            self.gen_copy = np.searchsorted(self.copy_buses, self.gen_bus)
            self.ip0 = lay.add("p0", ng)
            self.iv0 = lay.add("v0", len(self.copy_buses))
        if self.coupling == Coupling.SMOOTHED:
            self.ivp = lay.add("v_plus", ng)
            self.ivm = lay.add("v_minus", ng)
        if self.coupling == Coupling.BIGM:
            self.ixp = lay.add("x_plus", ng)
            self.ixm = lay.add("x_minus", ng)

        self.n = lay.n
        self.blocks = lay.blocks

        self.cost = np.zeros(self.n)
        for seg in self.segments.values():
            self.cost[seg.index] = penalty_weight * seg.slope
        if self.gen_cost is not None:
            self.cost[self.gen_cost.index] = cost_weight * self.gen_cost.slope

    def _build_bounds(self) -> None:
        case, k = self.case, self.k
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        v_lo, v_hi = case.bus_array("v_lo"), case.bus_array("v_hi")

        lb[self.iv], ub[self.iv] = v_lo, v_hi
        ref = self.ith[self.topo.ref_buses]
        lb[ref] = ub[ref] = 0.0
        lb[self.ip], ub[self.ip] = case.gen_array("p_lo", k), case.gen_array("p_hi", k)
        lb[self.iq], ub[self.iq] = case.gen_array("q_lo", k), case.gen_array("q_hi", k)
        bound = case.delta_bound() if k > 0 else 0.0
        lb[self.idelta], ub[self.idelta] = -bound, bound
        for seg in list(self.segments.values()) + ([self.gen_cost] if self.gen_cost else []):
            lb[seg.index], ub[seg.index] = 0.0, seg.upper

        if self.coupling != Coupling.NONE:
            gen_idx = self.topo.gen_idx
            if self.free_base_copy:
                lb[self.ip0] = case.gen_array("p_lo", 0)[gen_idx]
                ub[self.ip0] = case.gen_array("p_hi", 0)[gen_idx]
                lb[self.iv0], ub[self.iv0] = v_lo[self.copy_buses], v_hi[self.copy_buses]
            else:
                lb[self.ip0] = ub[self.ip0] = self.base.p[gen_idx]
                lb[self.iv0] = ub[self.iv0] = self.base.v[self.copy_buses]
        if self.coupling == Coupling.SMOOTHED:
            span = (v_hi - v_lo)[self.gen_bus]
            lb[self.ivp], ub[self.ivp] = 0.0, span
            lb[self.ivm], ub[self.ivm] = 0.0, span
        if self.coupling == Coupling.BIGM:
            lb[self.ixp], ub[self.ixp] = 0.0, 1.0
            lb[self.ixm], ub[self.ixm] = 0.0, 1.0

        self.lb, self.ub = lb, ub
        if self.coupling == Coupling.RESTRICTED:
            self._apply_restriction()

    def _apply_restriction(self) -> None:
        """Fixe p, q et borne v, Δ selon les ensembles de restriction."""
        case, k, sets, base = self.case, self.k, self.restriction, self.base
        lb, ub = self.lb, self.ub
        ids = [case.generators[i].id for i in self.topo.gen_idx]
        p0 = base.p[self.topo.gen_idx]
        p_lo, p_hi = case.gen_array("p_lo", k), case.gen_array("p_hi", k)
        q_lo, q_hi = case.gen_array("q_lo", k), case.gen_array("q_hi", k)
        d = self.idelta

        for j, gid in enumerate(ids):
            ip, iq, a = self.ip[j], self.iq[j], self.alpha[j]
            if gid in sets.p_minus:
                lb[ip] = ub[ip] = p_lo[j]
                ub[d] = min(ub[d], (p_lo[j] - p0[j]) / a)
            elif gid in sets.p_plus:
                lb[ip] = ub[ip] = p_hi[j]
                lb[d] = max(lb[d], (p_hi[j] - p0[j]) / a)
            elif a == 0.0:
                lb[ip] = ub[ip] = float(np.clip(p0[j], p_lo[j], p_hi[j]))

            iv = self.iv[self.gen_bus[j]]
            v0 = base.v[self.gen_bus[j]]
            if gid in sets.q_plus:
                lb[iq] = ub[iq] = q_hi[j]
                ub[iv] = min(ub[iv], v0)
            elif gid in sets.q_minus:
                lb[iq] = ub[iq] = q_lo[j]
                lb[iv] = max(lb[iv], v0)
            else:
                lb[iv] = ub[iv] = v0

        if lb[d] > ub[d]:
            middle = 0.5 * (lb[d] + ub[d])
            logger.warning(
                f"State {k}: inconsistent Δ interval [{lb[d]:.6g}, {ub[d]:.6g}] from restriction "
                f"sets, fixing Δ={middle:.6g}"
            )
            lb[d] = ub[d] = middle
        bad = lb > ub
        lb[bad] = ub[bad] = 0.5 * (lb[bad] + ub[bad])

    # ------------------------------------------------------------------
    # Constraint structure
    # ------------------------------------------------------------------

    def _build_linear_rows(self) -> None:
        case, nb, n = self.case, self.case.n_bus, self.n
        ng = self.topo.n_gen

        # partie linéaire des bilans nodaux
        rows, cols, vals = [], [], []
        for j in range(ng):
            rows += [self.gen_bus[j], nb + self.gen_bus[j]]
            cols += [self.ip[j], self.iq[j]]
            vals += [1.0, 1.0]
        for name, offset, sign in (
            ("sigma_p_plus", 0, -1.0), ("sigma_p_minus", 0, 1.0),
            ("sigma_q_plus", nb, -1.0), ("sigma_q_minus", nb, 1.0),
        ):
            seg = self.segments[name]
            rows += list(offset + seg.owner)
            cols += list(seg.index)
            vals += [sign] * len(seg.index)
        self._nodal_lin = sp.csr_matrix((vals, (rows, cols)), shape=(2 * nb, n))
        self._nodal_const = -np.concatenate([case.bus_array("load_p"), case.bus_array("load_q")])

        eq, ineq = _RowBuilder(), _RowBuilder()
        if self.gen_cost is not None:
            start = len(eq)
            for j in range(ng):
                terms = [(self.ip[j], 1.0)]
                terms += [(i, -1.0) for i in self.gen_cost.index[self.gen_cost.owner == j]]
                eq.add(terms, 0.0)
            eq.mark("generation_cost", start)

        if self.coupling == Coupling.SMOOTHED:
            start = len(eq)
            for j in range(ng):
                eq.add(
                    [(self.iv[self.gen_bus[j]], 1.0), (self.iv0[self.gen_copy[j]], -1.0),
                     (self.ivp[j], -1.0), (self.ivm[j], 1.0)],
                    0.0,
                )
            eq.mark("voltage_split", start)

        if self.coupling == Coupling.BIGM:
            self._big_m_rows(eq, ineq)

        if self.coupling == Coupling.RESTRICTED:
            start = len(eq)
            ids = [case.generators[i].id for i in self.topo.gen_idx]
            sets = self.restriction
            for j, gid in enumerate(ids):
                if gid in sets.p_minus or gid in sets.p_plus or self.alpha[j] == 0.0:
                    continue
                eq.add([(self.ip[j], 1.0), (self.idelta, -self.alpha[j]), (self.ip0[j], -1.0)], 0.0)
            eq.mark("active_response", start)

        self.eq_matrix, self.eq_rhs = eq.build(n)
        self.ineq_matrix, self.ineq_rhs = ineq.build(n)
        self.eq_blocks, self.ineq_blocks = eq.blocks, ineq.blocks

        nbr = self.branches.n
        n_smooth = ng if self.coupling == Coupling.SMOOTHED else 0
        self.n_eq = 2 * nb + n_smooth + len(eq)
        self.n_ineq = 2 * nbr + 2 * n_smooth + len(ineq)
        self._eq_lin_offset = 2 * nb + n_smooth
        self._ineq_lin_offset = 2 * nbr + 2 * n_smooth

    def _big_m_rows(self, eq: _RowBuilder, ineq: _RowBuilder) -> None:
        """Relaxation continue du big-M de la réponse active, et v_i = v_i0 aux bus producteurs."""
        k = self.k
        p_lo, p_hi = self.case.gen_array("p_lo", k), self.case.gen_array("p_hi", k)
        big_m = (p_hi - p_lo) + np.abs(self.alpha) * self.case.delta_bound()
        d = self.idelta

        start = len(ineq)
        for j in range(self.topo.n_gen):
            p, p0, xp, xm, a, m = (
                self.ip[j], self.ip0[j], self.ixp[j], self.ixm[j], self.alpha[j], big_m[j]
            )
            ineq.add([(p0, 1.0), (d, a), (xp, -m), (p, -1.0)], 0.0)
            ineq.add([(p, 1.0), (p0, -1.0), (d, -a), (xm, -m)], 0.0)
            ineq.add([(p, -1.0), (xp, m)], m - p_hi[j])
            ineq.add([(p0, -1.0), (d, -a), (xp, m)], m - p_hi[j])
            ineq.add([(p, 1.0), (xm, m)], p_lo[j] + m)
            ineq.add([(p0, 1.0), (d, a), (xm, m)], p_lo[j] + m)
            ineq.add([(xp, 1.0), (xm, 1.0)], 1.0)
        ineq.mark("active_response", start)

        start = len(eq)
        for c, bus in enumerate(self.copy_buses):
            eq.add([(self.iv[bus], 1.0), (self.iv0[c], -1.0)], 0.0)
        eq.mark("voltage_hold", start)

    def _build_maps(self) -> None:
        """Application T : variables NLP -> vecteur d'état plat."""
        slices = self.state_layout.slices
        rows, cols = [], []

        def direct(name, idx):
            rows.extend(slices[name].start + np.arange(len(idx)))
            cols.extend(idx)

        direct("v", self.iv)
        direct("theta", self.ith)
        direct("p", self.ip)
        direct("q", self.iq)
        direct("delta", [self.idelta])
        for name, seg in self.segments.items():
            rows.extend(slices[name].start + seg.owner)
            cols.extend(seg.index)
        self.state_map = sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.state_layout.size, self.n)
        )

        self._seg_sum_s = self.segments["sigma_s"].summation(self.n)
        self._ss_pairs = self.segments["sigma_s"].pairs()

    # ------------------------------------------------------------------
    # Conversions
    # ------------------------------------------------------------------

    @property
    def copy_positions(self) -> np.ndarray:
        """Positions, dans le vecteur plat du cas de base, des composantes copiées."""
        if self.coupling == Coupling.NONE:
            return np.zeros(0, dtype=int)
        base_slices = StateLayout.for_state(self.case, 0).slices
        return np.concatenate([
            base_slices["p"].start + self.topo.gen_idx,
            base_slices["v"].start + self.copy_buses,
        ]).astype(int)

    @property
    def copy_variables(self) -> np.ndarray:
        """Indices NLP des copies, alignés sur copy_positions."""
        if self.coupling == Coupling.NONE:
            return np.zeros(0, dtype=int)
        return np.concatenate([self.ip0, self.iv0]).astype(int)

    def to_state(self, x: np.ndarray) -> StateVector:
        return StateVector.from_array(self.state_map @ x, self.state_layout)

    def from_state(self, sv: StateVector, base: Optional[StateVector] = None) -> np.ndarray:
        """
        Point NLP correspondant à un StateVector (projeté dans les bornes).

        Args:
            sv: Vecteur d'état de l'état k
            base: Valeurs des copies du cas de base (défaut : base du modèle)
        """
        sv.check_dimensions(self.case, self.k)
        x = np.zeros(self.n)
        x[self.iv], x[self.ith] = sv.v, sv.theta
        x[self.ip], x[self.iq] = sv.p, sv.q
        x[self.idelta] = sv.delta
        for name, seg in self.segments.items():
            x[seg.index] = seg.split(getattr(sv, name))
        if self.gen_cost is not None:
            x[self.gen_cost.index] = self.gen_cost.split(sv.p)

        if self.coupling != Coupling.NONE:
            base = self.base if base is None else base
            x[self.ip0] = base.p[self.topo.gen_idx]
            x[self.iv0] = base.v[self.copy_buses]
        if self.coupling == Coupling.SMOOTHED:
            gap = sv.v[self.gen_bus] - x[self.iv0][self.gen_copy]
            x[self.ivp], x[self.ivm] = np.maximum(gap, 0.0), np.maximum(-gap, 0.0)
        if self.coupling == Coupling.BIGM:
            u = x[self.ip0] + self.alpha * sv.delta
            x[self.ixp] = (u >= self.case.gen_array("p_hi", self.k)).astype(float)
            x[self.ixm] = (u <= self.case.gen_array("p_lo", self.k)).astype(float)
        return np.clip(x, self.lb, self.ub)

    def set_proximal(self, terms: Sequence[QuadraticPenalty]) -> None:
        for t in terms:
            if t.matrix.shape[1] != self.n:
                raise ValueError(f"Proximal term has {t.matrix.shape[1]} columns, model {self.n}")
        self.proximal = list(terms)

    def penalty_objective(self, x: np.ndarray) -> float:
        """Partie linéaire de l'objectif (coûts et pénalités pondérés), sans terme proximal."""
        return float(self.cost @ x)

    # ------------------------------------------------------------------
    # Evaluators
    # ------------------------------------------------------------------

    def _ends(self, x: np.ndarray) -> Tuple[EndTerms, EndTerms]:
        if self._cache_x is None or not np.array_equal(x, self._cache_x):
            v, th = x[self.iv], x[self.ith]
            self._cache_ends = (
                self.branches.end_terms(v, th, "o"),
                self.branches.end_terms(v, th, "d"),
            )
            self._cache_x = np.array(x, copy=True)
        return self._cache_ends

    def _local_cols(self, e: EndTerms) -> np.ndarray:
        return np.stack(
            [self.iv[e.self_bus], self.iv[e.other_bus], self.ith[e.self_bus], self.ith[e.other_bus]],
            axis=1,
        )

    def _smooth_u(self, x: np.ndarray) -> np.ndarray:
        return x[self.ip0] + self.alpha * x[self.idelta]

    def objective(self, x: np.ndarray) -> float:
        return float(self.cost @ x) + sum(t.value(x) for t in self.proximal)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        grad = self.cost.copy()
        for t in self.proximal:
            grad += t.gradient(x)
        return grad

    def eq_constraints(self, x: np.ndarray) -> np.ndarray:
        nb = self.case.n_bus
        nodal = self._nodal_lin @ x + self._nodal_const
        for e in self._ends(x):
            nodal[:nb] -= np.bincount(e.self_bus, weights=e.p, minlength=nb)
            nodal[nb:] -= np.bincount(e.self_bus, weights=e.q, minlength=nb)
        parts = [nodal]
        if self.coupling == Coupling.SMOOTHED:
            value, _, _ = smooth_response_derivatives(
                self._smooth_u(x), self.case.gen_array("p_lo", self.k),
                self.case.gen_array("p_hi", self.k), self.epsilon,
            )
            parts.append(x[self.ip] - value)
        parts.append(self.eq_matrix @ x - self.eq_rhs)
        return np.concatenate(parts)

    def eq_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        nb = self.case.n_bus
        rows, cols, vals = [], [], []
        for e in self._ends(x):
            local = self._local_cols(e)
            rows += [np.repeat(e.self_bus, 4), np.repeat(nb + e.self_bus, 4)]
            cols += [local.ravel(), local.ravel()]
            vals += [-e.grad_p.ravel(), -e.grad_q.ravel()]
        flows = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * nb, self.n),
        )
        blocks = [self._nodal_lin + flows]
        if self.coupling == Coupling.SMOOTHED:
            ng = self.topo.n_gen
            _, first, _ = smooth_response_derivatives(
                self._smooth_u(x), self.case.gen_array("p_lo", self.k),
                self.case.gen_array("p_hi", self.k), self.epsilon,
            )
            r = np.arange(ng)
            blocks.append(sp.csr_matrix(
                (np.concatenate([np.ones(ng), -first, -self.alpha * first]),
                 (np.concatenate([r, r, r]),
                  np.concatenate([self.ip, self.ip0, np.full(ng, self.idelta)]))),
                shape=(ng, self.n),
            ))
        blocks.append(self.eq_matrix)
        return sp.vstack(blocks).tocsr()

    def _branch_capacity(self, x: np.ndarray, e: EndTerms) -> np.ndarray:
        b = self.branches
        return b.rate_v * e.u + b.rate_s + self._seg_sum_s @ x

    def ineq_constraints(self, x: np.ndarray) -> np.ndarray:
        parts = []
        for e in self._ends(x):
            cap = self._branch_capacity(x, e)
            parts.append(e.p**2 + e.q**2 - cap**2)
        if self.coupling == Coupling.SMOOTHED:
            q = x[self.iq]
            q_lo, q_hi = self.case.gen_array("q_lo", self.k), self.case.gen_array("q_hi", self.k)
            vp, vm, eps = x[self.ivp], x[self.ivm], self.epsilon
            parts.append(vp - softplus(vp - q + q_lo, eps) - eps * LN2)
            parts.append(vm - softplus(vm + q - q_hi, eps) - eps * LN2)
        parts.append(self.ineq_matrix @ x - self.ineq_rhs)
        return np.concatenate(parts)

    def ineq_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        nbr = self.branches.n
        seg = self.segments["sigma_s"]
        rows, cols, vals = [], [], []
        for side, e in enumerate(self._ends(x)):
            offset = side * nbr
            cap = self._branch_capacity(x, e)
            grad = 2.0 * e.p[:, None] * e.grad_p + 2.0 * e.q[:, None] * e.grad_q
            grad[:, 0] -= 2.0 * cap * self.branches.rate_v
            rows += [np.repeat(offset + np.arange(nbr), 4), offset + seg.owner]
            cols += [self._local_cols(e).ravel(), seg.index]
            vals += [grad.ravel(), -2.0 * cap[seg.owner]]
        blocks = [sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * nbr, self.n),
        )]
        if self.coupling == Coupling.SMOOTHED:
            ng = self.topo.n_gen
            q = x[self.iq]
            q_lo, q_hi = self.case.gen_array("q_lo", self.k), self.case.gen_array("q_hi", self.k)
            d_up, _ = softplus_derivatives(x[self.ivp] - q + q_lo, self.epsilon)
            d_lo, _ = softplus_derivatives(x[self.ivm] + q - q_hi, self.epsilon)
            r = np.arange(ng)
            blocks.append(sp.csr_matrix(
                (np.concatenate([1.0 - d_up, d_up]), (np.concatenate([r, r]),
                                                      np.concatenate([self.ivp, self.iq]))),
                shape=(ng, self.n),
            ))
            blocks.append(sp.csr_matrix(
                (np.concatenate([1.0 - d_lo, -d_lo]), (np.concatenate([r, r]),
                                                       np.concatenate([self.ivm, self.iq]))),
                shape=(ng, self.n),
            ))
        blocks.append(self.ineq_matrix)
        return sp.vstack(blocks).tocsr()

    def hessian(self, x: np.ndarray, lam: np.ndarray, mu: np.ndarray, obj_factor: float = 1.0):
        """Hessien du lagrangien obj_factor·f + λᵀg + μᵀh (matrice symétrique complète)."""
        nb, nbr = self.case.n_bus, self.branches.n
        lam_p, lam_q = lam[:nb], lam[nb: 2 * nb]
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(np.ravel(r))
            cols.append(np.ravel(c))
            vals.append(np.ravel(v))

        seg = self.segments["sigma_s"]
        pi, pj, powner = self._ss_pairs
        for side, e in enumerate(self._ends(x)):
            m = mu[side * nbr: (side + 1) * nbr]
            cap = self._branch_capacity(x, e)
            local = -(lam_p[e.self_bus][:, None, None] * e.hess_p
                      + lam_q[e.self_bus][:, None, None] * e.hess_q)
            local += 2.0 * m[:, None, None] * (
                e.grad_p[:, :, None] * e.grad_p[:, None, :] + e.p[:, None, None] * e.hess_p
                + e.grad_q[:, :, None] * e.grad_q[:, None, :] + e.q[:, None, None] * e.hess_q
            )
            local[:, 0, 0] -= 2.0 * m * self.branches.rate_v**2
            lc = self._local_cols(e)
            add(np.broadcast_to(lc[:, :, None], local.shape),
                np.broadcast_to(lc[:, None, :], local.shape), local)

            u_col = self.iv[e.self_bus][seg.owner]
            cross = -2.0 * m[seg.owner] * self.branches.rate_v[seg.owner]
            add(u_col, seg.index, cross)
            add(seg.index, u_col, cross)
            add(pi, pj, -2.0 * m[powner])

        if self.coupling == Coupling.SMOOTHED:
            ng = self.topo.n_gen
            lam_s = lam[2 * nb: 2 * nb + ng]
            _, _, second = smooth_response_derivatives(
                self._smooth_u(x), self.case.gen_array("p_lo", self.k),
                self.case.gen_array("p_hi", self.k), self.epsilon,
            )
            w = -lam_s * second
            a = self.alpha
            delta = np.full(ng, self.idelta)
            add(self.ip0, self.ip0, w)
            add(self.ip0, delta, w * a)
            add(delta, self.ip0, w * a)
            add(delta, delta, w * a**2)

            q = x[self.iq]
            q_lo, q_hi = self.case.gen_array("q_lo", self.k), self.case.gen_array("q_hi", self.k)
            mu_up = mu[2 * nbr: 2 * nbr + ng]
            mu_lo = mu[2 * nbr + ng: 2 * nbr + 2 * ng]
            _, f2_up = softplus_derivatives(x[self.ivp] - q + q_lo, self.epsilon)
            _, f2_lo = softplus_derivatives(x[self.ivm] + q - q_hi, self.epsilon)
            w_up, w_lo = -mu_up * f2_up, -mu_lo * f2_lo
            add(self.ivp, self.ivp, w_up)
            add(self.iq, self.iq, w_up + w_lo)
            add(self.ivp, self.iq, -w_up)
            add(self.iq, self.ivp, -w_up)
            add(self.ivm, self.ivm, w_lo)
            add(self.ivm, self.iq, w_lo)
            add(self.iq, self.ivm, w_lo)

        hess = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n),
        )
        for t in self.proximal:
            hess = hess + obj_factor * t.hessian()
        return hess.tocsr()

    # ------------------------------------------------------------------
    # NLP
    # ------------------------------------------------------------------

    def problem(self, name: Optional[str] = None) -> NlpProblem:
        return NlpProblem(
            n=self.n,
            objective=self.objective,
            gradient=self.gradient,
            lb=self.lb,
            ub=self.ub,
            eq_constraints=self.eq_constraints,
            eq_jacobian=self.eq_jacobian,
            ineq_constraints=self.ineq_constraints,
            ineq_jacobian=self.ineq_jacobian,
            hessian=self.hessian,
            n_eq=self.n_eq,
            n_ineq=self.n_ineq,
            name=name or f"state-{self.k}-{self.coupling.value}",
        )
