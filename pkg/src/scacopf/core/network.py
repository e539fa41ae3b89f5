"""
Modèle de données réseau pour le SC-ACOPF.

Contient :
- les équipements (bus, générateurs, lignes, transformateurs) et la liste de contingences N-1
- les coûts linéaires par morceaux convexes (coûts de production et pénalités de slack)
- la topologie de chaque état k (0 = cas de base, 1..|K| = contingences)

Toutes les grandeurs internes sont en per-unit sur s_base ; la conversion depuis les unités
physiques (MW, MVAr, MVA, $/MW) est faite au chargement du fichier de cas.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

CONTINGENCY_KINDS = ("generator", "line", "transformer")


# ==============================================================================
# PIECEWISE-LINEAR COSTS
# ==============================================================================

@dataclass(frozen=True)
class PwlCost:
    """
    Coût linéaire par morceaux, convexe et croissant, défini sur x >= 0.

    Args:
        lengths: Longueur de chaque morceau (le dernier peut être infini)
        slopes: Pente de chaque morceau (strictement croissantes, positives ou nulles)
    """

    lengths: Tuple[float, ...]
    slopes: Tuple[float, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.lengths)
        slopes = tuple(float(v) for v in self.slopes)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "slopes", slopes)

        if not lengths or len(lengths) != len(slopes):
            raise ValueError(
                f"PwlCost needs as many lengths as slopes (got {len(lengths)} / {len(slopes)})"
            )
        if any(not (v > 0) for v in lengths):
            raise ValueError(f"PwlCost lengths must be positive: {lengths}")
        if any(math.isinf(v) for v in lengths[:-1]):
            raise ValueError("Only the last PwlCost piece may be unbounded")
        if slopes[0] < 0 or any(b <= a for a, b in zip(slopes, slopes[1:])):
            raise ValueError(f"PwlCost slopes must be nonnegative and strictly increasing: {slopes}")

    @property
    def n_pieces(self) -> int:
        return len(self.lengths)

    @property
    def starts(self) -> np.ndarray:
        """Abscisse de début de chaque morceau."""
        return np.concatenate([[0.0], np.cumsum(self.lengths[:-1])])

    def evaluate(self, x) -> np.ndarray:
        """
        Évalue le coût (vectorisé).

        Raises:
            ValueError: Si une valeur est négative (hors domaine)
        """
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(np.isnan(x)):
            raise ValueError(f"PwlCost evaluated outside its domain x >= 0 (min={np.min(x)})")
        fill = np.clip(x[..., None] - self.starts, 0.0, np.asarray(self.lengths))
        return fill @ np.asarray(self.slopes)

    def split(self, x: float) -> np.ndarray:
        """Répartit x sur les morceaux, remplis dans l'ordre."""
        if x < 0:
            raise ValueError(f"Cannot split negative value {x}")
        return np.clip(x - self.starts, 0.0, np.asarray(self.lengths))

    def scaled(self, length_factor: float, slope_factor: float) -> "PwlCost":
        """Change d'unités (ex: MW -> p.u. avec length_factor=1/s_base, slope_factor=s_base)."""
        return PwlCost(
            tuple(v * length_factor for v in self.lengths),
            tuple(v * slope_factor for v in self.slopes),
        )


def eval_pwl(cost: PwlCost, x: float) -> float:
    """
    Évalue un coût linéaire par morceaux en un point.

    Args:
        cost: Coût linéaire par morceaux
        x: Point d'évaluation (>= 0)

    Returns:
        Somme des pentes pondérées par la part de x tombant dans chaque morceau

    Raises:
        ValueError: Si x < 0
    """
    if x < 0:
        raise ValueError(f"eval_pwl domain error: x={x} < 0")
    return float(cost.evaluate(np.asarray([x]))[0])


def default_penalty_cost(s_base: float) -> PwlCost:
    """Table de pénalité standard : 2 MW, 50 MW, infini ; 1e3, 5e3, 1e6 $/MW."""
    return PwlCost((2.0, 50.0, math.inf), (1e3, 5e3, 1e6)).scaled(1.0 / s_base, s_base)


@dataclass(frozen=True)
class PenaltyTables:
    """Pénalités de slack : bilan actif, bilan réactif, limite ligne, limite transformateur."""

    p: PwlCost
    q: PwlCost
    s_line: PwlCost
    s_transformer: PwlCost

    @classmethod
    def default(cls, s_base: float) -> "PenaltyTables":
        cost = default_penalty_cost(s_base)
        return cls(p=cost, q=cost, s_line=cost, s_transformer=cost)


# ==============================================================================
# EQUIPMENT
# ==============================================================================

@dataclass(frozen=True)
class Bus:
    id: str
    v_lo: float
    v_hi: float
    load_p: float = 0.0
    load_q: float = 0.0


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    p_lo: float
    p_hi: float
    q_lo: float
    q_hi: float
    alpha: float
    cost: PwlCost


@dataclass(frozen=True)
class Line:
    id: str
    origin: str
    destination: str
    g: float
    b: float
    b_ch: float
    r_max_base: float
    r_max_ctg: float


@dataclass(frozen=True)
class Transformer:
    id: str
    origin: str
    destination: str
    g: float
    b: float
    b_ch: float
    tap: float
    shift: float
    s_max_base: float
    s_max_ctg: float


@dataclass(frozen=True)
class ContingencyDef:
    """Contingence N-1 : retrait d'un générateur, d'une ligne ou d'un transformateur."""

    id: str
    kind: str
    element: str


@dataclass(frozen=True)
class StateTopology:
    """
    Équipements présents dans l'état k.

    Les indices renvoient aux positions dans les listes du NetworkCase. Un bus par île
    électrique sert de référence d'angle.
    """

    k: int
    gen_idx: np.ndarray
    line_idx: np.ndarray
    xf_idx: np.ndarray
    ref_buses: np.ndarray
    outage: Optional[ContingencyDef] = None

    @property
    def n_gen(self) -> int:
        return len(self.gen_idx)

    @property
    def n_branch(self) -> int:
        return len(self.line_idx) + len(self.xf_idx)


# ==============================================================================
# NETWORK CASE
# ==============================================================================

@dataclass(frozen=True)
class NetworkCase:
    """
    Réseau complet, immuable après construction (partageable entre threads).

    L'état 0 est le cas de base ; l'état k >= 1 correspond à contingencies[k - 1].
    """

    buses: Tuple[Bus, ...]
    generators: Tuple[Generator, ...]
    lines: Tuple[Line, ...]
    transformers: Tuple[Transformer, ...]
    contingencies: Tuple[ContingencyDef, ...]
    s_base: float
    penalty_tables: PenaltyTables
    delta_weight: float = 0.5
    name: str = "case"
    ctg_penalty_tables: Optional[PenaltyTables] = None
    _cache: Dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for attr in ("buses", "generators", "lines", "transformers", "contingencies"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

        from .validator import CaseValidationError, validate_case

        problems = validate_case(self)
        if problems:
            raise CaseValidationError(problems)

    # ------------------------------------------------------------------
    # Index maps
    # ------------------------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_ctg(self) -> int:
        return len(self.contingencies)

    def _cached(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def bus_index(self) -> Dict[str, int]:
        return self._cached("bus_index", lambda: {b.id: i for i, b in enumerate(self.buses)})

    @property
    def gen_bus(self) -> np.ndarray:
        """Indice du bus de chaque générateur."""
        return self._cached(
            "gen_bus",
            lambda: np.array([self.bus_index[g.bus] for g in self.generators], dtype=int),
        )

    @property
    def contingency_index(self) -> Dict[str, int]:
        """Identifiant de contingence -> état k (1-based)."""
        return self._cached(
            "ctg_index", lambda: {c.id: k + 1 for k, c in enumerate(self.contingencies)}
        )

    def bus_array(self, attr: str) -> np.ndarray:
        return self._cached(
            f"bus_{attr}", lambda: np.array([getattr(b, attr) for b in self.buses], dtype=float)
        )

    def gen_array(self, attr: str, k: int = 0) -> np.ndarray:
        """Attribut des générateurs actifs dans l'état k."""
        idx = self.topology(k).gen_idx
        values = self._cached(
            f"gen_{attr}",
            lambda: np.array([getattr(g, attr) for g in self.generators], dtype=float),
        )
        return values[idx]

    def penalties(self, k: int) -> PenaltyTables:
        if k > 0 and self.ctg_penalty_tables is not None:
            return self.ctg_penalty_tables
        return self.penalty_tables

    def contingency(self, k: int) -> ContingencyDef:
        self.check_state(k, allow_base=False)
        return self.contingencies[k - 1]

    def check_state(self, k: int, allow_base: bool = True) -> None:
        low = 0 if allow_base else 1
        if not isinstance(k, (int, np.integer)) or not (low <= k <= self.n_ctg):
            raise ValueError(f"State index {k} out of range [{low}, {self.n_ctg}]")

    # ------------------------------------------------------------------
    # Topology per state
    # ------------------------------------------------------------------

    def topology(self, k: int) -> StateTopology:
        """Topologie de l'état k (mise en cache)."""
        self.check_state(k)
        return self._cached(("topology", int(k)), lambda: self._build_topology(int(k)))

    def _build_topology(self, k: int) -> StateTopology:
        outage = self.contingencies[k - 1] if k > 0 else None
        gen_idx = [i for i, g in enumerate(self.generators)]
        line_idx = [i for i, _ in enumerate(self.lines)]
        xf_idx = [i for i, _ in enumerate(self.transformers)]

        if outage is not None:
            if outage.kind == "generator":
                gen_idx = [i for i in gen_idx if self.generators[i].id != outage.element]
            elif outage.kind == "line":
                line_idx = [i for i in line_idx if self.lines[i].id != outage.element]
            else:
                xf_idx = [i for i in xf_idx if self.transformers[i].id != outage.element]

        ref_buses = self._island_references(line_idx, xf_idx)
        if len(ref_buses) > 1:
            logger.debug(f"State {k}: network split into {len(ref_buses)} islands")

        return StateTopology(
            k=k,
            gen_idx=np.array(gen_idx, dtype=int),
            line_idx=np.array(line_idx, dtype=int),
            xf_idx=np.array(xf_idx, dtype=int),
            ref_buses=ref_buses,
            outage=outage,
        )

    def _island_references(self, line_idx: Sequence[int], xf_idx: Sequence[int]) -> np.ndarray:
        """Premier bus (ordre du fichier) de chaque composante connexe."""
        rows: List[int] = []
        cols: List[int] = []
        for i in line_idx:
            rows.append(self.bus_index[self.lines[i].origin])
            cols.append(self.bus_index[self.lines[i].destination])
        for i in xf_idx:
            rows.append(self.bus_index[self.transformers[i].origin])
            cols.append(self.bus_index[self.transformers[i].destination])

        n = self.n_bus
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = connected_components(graph, directed=False)
        _, first = np.unique(labels, return_index=True)
        return np.sort(first)

    # ------------------------------------------------------------------
    # Misc
    # ------------------------------------------------------------------

    def total_load(self) -> Tuple[float, float]:
        return float(self.bus_array("load_p").sum()), float(self.bus_array("load_q").sum())

    def delta_bound(self) -> float:
        """Borne big-M sur Δ_k : somme des p̄ divisée par le plus petit α > 0."""
        alphas = [g.alpha for g in self.generators if g.alpha > 0]
        if not alphas:
            return 0.0
        return sum(g.p_hi for g in self.generators) / min(alphas)
