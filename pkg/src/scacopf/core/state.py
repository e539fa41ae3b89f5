"""
Vecteur d'état d'un état k (cas de base ou contingence) et sa mise à plat.

L'ordre des composantes du vecteur plat est fixe :
v, θ, σ^{P+}, σ^{P−}, σ^{Q+}, σ^{Q−} (par bus), p, q (par générateur actif),
σ^S (par branche active), Δ.
"""

from dataclasses import dataclass, replace
from typing import Dict

import numpy as np

from .network import NetworkCase

BUS_FIELDS = ("v", "theta", "sigma_p_plus", "sigma_p_minus", "sigma_q_plus", "sigma_q_minus")
GEN_FIELDS = ("p", "q")


@dataclass(frozen=True)
class StateLayout:
    """Positions des blocs dans le vecteur plat d'un état."""

    n_bus: int
    n_gen: int
    n_branch: int

    @classmethod
    def for_state(cls, case: NetworkCase, k: int) -> "StateLayout":
        topo = case.topology(k)
        return cls(case.n_bus, topo.n_gen, topo.n_branch)

    @property
    def size(self) -> int:
        return 6 * self.n_bus + 2 * self.n_gen + self.n_branch + 1

    @property
    def slices(self) -> Dict[str, slice]:
        out = {}
        start = 0
        for name in BUS_FIELDS:
            out[name] = slice(start, start + self.n_bus)
            start += self.n_bus
        for name in GEN_FIELDS:
            out[name] = slice(start, start + self.n_gen)
            start += self.n_gen
        out["sigma_s"] = slice(start, start + self.n_branch)
        start += self.n_branch
        out["delta"] = slice(start, start + 1)
        return out

    def index(self, name: str, position: int = 0) -> int:
        return self.slices[name].start + position


@dataclass
class StateVector:
    """
    Toutes les variables de décision d'un état k.

    Propriété exclusive de son détenteur : les opérations d'évaluation ne le modifient pas.
    """

    v: np.ndarray
    theta: np.ndarray
    sigma_p_plus: np.ndarray
    sigma_p_minus: np.ndarray
    sigma_q_plus: np.ndarray
    sigma_q_minus: np.ndarray
    p: np.ndarray
    q: np.ndarray
    sigma_s: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        for name in BUS_FIELDS + GEN_FIELDS + ("sigma_s",):
            setattr(self, name, np.array(getattr(self, name), dtype=float).reshape(-1))
        self.delta = float(self.delta)

    @property
    def layout(self) -> StateLayout:
        return StateLayout(len(self.v), len(self.p), len(self.sigma_s))

    @classmethod
    def zeros(cls, case: NetworkCase, k: int) -> "StateVector":
        return cls.from_array(np.zeros(StateLayout.for_state(case, k).size),
                              StateLayout.for_state(case, k))

    @classmethod
    def from_array(cls, values: np.ndarray, layout: StateLayout) -> "StateVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (layout.size,):
            raise ValueError(f"Expected a flat state of size {layout.size}, got {values.shape}")
        parts = {name: values[sl].copy() for name, sl in layout.slices.items()}
        parts["delta"] = float(parts["delta"][0])
        return cls(**parts)

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [getattr(self, name) for name in BUS_FIELDS + GEN_FIELDS]
            + [self.sigma_s, [self.delta]]
        )

    def copy(self, **changes) -> "StateVector":
        fields = {name: np.array(getattr(self, name)) for name in BUS_FIELDS + GEN_FIELDS}
        fields["sigma_s"] = np.array(self.sigma_s)
        fields["delta"] = self.delta
        return replace(self, **{**fields, **changes})

    def check_dimensions(self, case: NetworkCase, k: int) -> None:
        """
        Raises:
            ValueError: Si les dimensions ne correspondent pas aux équipements de l'état k
        """
        expected = StateLayout.for_state(case, k)
        if self.layout != expected:
            raise ValueError(
                f"StateVector dimensions {self.layout} do not match state {k} ({expected})"
            )
