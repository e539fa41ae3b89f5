"""
Fonctions d'écoulement de puissance AC des branches (lignes et transformateurs).

Chaque extrémité de branche suit la même forme générique :

    p = a_p·u² + u·w·(c_p·cos ψ + s_p·sin ψ)
    q = a_q·u² + u·w·(c_q·cos ψ + s_q·sin ψ)

avec u la tension du bus côté extrémité, w celle du bus opposé, ψ = θ_self − θ_other ∓ φ.
Le transformateur est le modèle π standard à rapport τ et déphasage φ ; avec τ = 1 et φ = 0
les coefficients sont exactement ceux d'une ligne.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .network import Line, NetworkCase, Transformer

logger = logging.getLogger(__name__)


# ==============================================================================
# BRANCH COEFFICIENTS
# ==============================================================================

def _coefficients(g, b, b_ch, tap, shift):
    """Coefficients (origine, destination) du modèle π générique."""
    g = np.asarray(g, dtype=float)
    b = np.asarray(b, dtype=float)
    b_ch = np.asarray(b_ch, dtype=float)
    tap = np.asarray(tap, dtype=float)
    return {
        "ap_o": g / tap**2,
        "ap_d": g,
        "aq_o": -(b + b_ch / 2.0) / tap**2,
        "aq_d": -(b + b_ch / 2.0),
        "c_p": -g / tap,
        "s_p": -b / tap,
        "c_q": b / tap,
        "s_q": -g / tap,
        "shift": np.asarray(shift, dtype=float),
    }


def _end_values(a_p, a_q, c_p, s_p, c_q, s_q, u, w, psi):
    cos_psi, sin_psi = np.cos(psi), np.sin(psi)
    p = a_p * u**2 + u * w * (c_p * cos_psi + s_p * sin_psi)
    q = a_q * u**2 + u * w * (c_q * cos_psi + s_q * sin_psi)
    return p, q


def _flows(coef, v_o, v_d, th_o, th_d):
    psi_o = th_o - th_d - coef["shift"]
    psi_d = th_d - th_o + coef["shift"]
    p_o, q_o = _end_values(
        coef["ap_o"], coef["aq_o"], coef["c_p"], coef["s_p"], coef["c_q"], coef["s_q"],
        v_o, v_d, psi_o,
    )
    p_d, q_d = _end_values(
        coef["ap_d"], coef["aq_d"], coef["c_p"], coef["s_p"], coef["c_q"], coef["s_q"],
        v_d, v_o, psi_d,
    )
    return p_o, q_o, p_d, q_d


def _check_voltages(v_o, v_d) -> None:
    if np.any(np.asarray(v_o) <= 0) or np.any(np.asarray(v_d) <= 0):
        raise ValueError("Voltage magnitudes must be > 0")


def line_flow(line: Line, v_o, v_d, th_o, th_d) -> Tuple[float, float, float, float]:
    """
    Flux (p^o, q^o, p^d, q^d) d'une ligne.

    Args:
        line: Ligne
        v_o, v_d: Tensions aux bus origine / destination (p.u., > 0)
        th_o, th_d: Angles (radians)

    Returns:
        Tuple (p^o, q^o, p^d, q^d)
    """
    _check_voltages(v_o, v_d)
    coef = _coefficients(line.g, line.b, line.b_ch, 1.0, 0.0)
    return tuple(float(x) for x in _flows(coef, v_o, v_d, th_o, th_d))


def transformer_flow(xf: Transformer, v_o, v_d, th_o, th_d) -> Tuple[float, float, float, float]:
    """
    Flux (p^o, q^o, p^d, q^d) d'un transformateur (modèle π, rapport côté origine).

    Avec tap=1 et shift=0 le résultat est identique à line_flow.
    """
    _check_voltages(v_o, v_d)
    coef = _coefficients(xf.g, xf.b, xf.b_ch, xf.tap, xf.shift)
    return tuple(float(x) for x in _flows(coef, v_o, v_d, th_o, th_d))


# ==============================================================================
# VECTORIZED BRANCH SET OF ONE STATE
# ==============================================================================

@dataclass(frozen=True)
class BranchArrays:
    """
    Branches actives d'un état, lignes puis transformateurs, sous forme de tableaux.

    La limite d'une extrémité s'écrit sqrt(p² + q²) <= rate_v·v_end + rate_s + σ^S :
    rate_v = R̄ pour une ligne (limite en courant), rate_s = s̄ pour un transformateur.
    """

    ids: Tuple[str, ...]
    is_line: np.ndarray
    f: np.ndarray
    t: np.ndarray
    coef: dict
    rate_v: np.ndarray
    rate_s: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ids)

    @classmethod
    def for_state(cls, case: NetworkCase, k: int) -> "BranchArrays":
        """Branches de l'état k (mis en cache dans le cas)."""
        return case._cached(("branches", int(k)), lambda: cls._build(case, int(k)))

    @classmethod
    def _build(cls, case: NetworkCase, k: int) -> "BranchArrays":
        topo = case.topology(k)
        lines = [case.lines[i] for i in topo.line_idx]
        xfs = [case.transformers[i] for i in topo.xf_idx]
        branches = lines + xfs
        bus = case.bus_index

        def field(attr, default):
            return np.array([getattr(e, attr, default) for e in branches], dtype=float)

        coef = _coefficients(
            field("g", 0.0), field("b", 0.0), field("b_ch", 0.0),
            np.array([1.0] * len(lines) + [x.tap for x in xfs]),
            np.array([0.0] * len(lines) + [x.shift for x in xfs]),
        )
        if k == 0:
            r_line = [e.r_max_base for e in lines]
            s_xf = [x.s_max_base for x in xfs]
        else:
            r_line = [e.r_max_ctg for e in lines]
            s_xf = [x.s_max_ctg for x in xfs]

        return cls(
            ids=tuple(e.id for e in branches),
            is_line=np.array([True] * len(lines) + [False] * len(xfs), dtype=bool),
            f=np.array([bus[e.origin] for e in branches], dtype=int),
            t=np.array([bus[e.destination] for e in branches], dtype=int),
            coef=coef,
            rate_v=np.array(r_line + [0.0] * len(xfs), dtype=float),
            rate_s=np.array([0.0] * len(lines) + s_xf, dtype=float),
        )

    def flows(self, v: np.ndarray, theta: np.ndarray):
        """Flux (p_o, q_o, p_d, q_d) de toutes les branches."""
        return _flows(self.coef, v[self.f], v[self.t], theta[self.f], theta[self.t])

    def end_terms(self, v: np.ndarray, theta: np.ndarray, side: str) -> "EndTerms":
        """Valeurs et dérivées d'une extrémité ('o' ou 'd')."""
        c = self.coef
        if side == "o":
            self_bus, other_bus, sign = self.f, self.t, -1.0
            a_p, a_q = c["ap_o"], c["aq_o"]
        else:
            self_bus, other_bus, sign = self.t, self.f, 1.0
            a_p, a_q = c["ap_d"], c["aq_d"]
        u, w = v[self_bus], v[other_bus]
        psi = theta[self_bus] - theta[other_bus] + sign * c["shift"]
        return EndTerms.compute(
            self_bus, other_bus, u, w, psi, a_p, a_q, c["c_p"], c["s_p"], c["c_q"], c["s_q"]
        )


@dataclass
class EndTerms:
    """
    Flux d'une extrémité et dérivées locales.

    L'ordre local des variables est (u, w, θ_self, θ_other) ; grad_* est (N, 4) et
    hess_* est (N, 4, 4).
    """

    self_bus: np.ndarray
    other_bus: np.ndarray
    u: np.ndarray
    p: np.ndarray
    q: np.ndarray
    grad_p: np.ndarray
    grad_q: np.ndarray
    hess_p: np.ndarray
    hess_q: np.ndarray

    @staticmethod
    def _derivatives(alpha, c, s, u, w, cos_psi, sin_psi):
        K = c * cos_psi + s * sin_psi
        Kp = -c * sin_psi + s * cos_psi
        value = alpha * u**2 + u * w * K

        n = len(u)
        grad = np.empty((n, 4))
        grad[:, 0] = 2.0 * alpha * u + w * K
        grad[:, 1] = u * K
        grad[:, 2] = u * w * Kp
        grad[:, 3] = -u * w * Kp

        hess = np.zeros((n, 4, 4))
        hess[:, 0, 0] = 2.0 * alpha
        hess[:, 0, 1] = hess[:, 1, 0] = K
        hess[:, 0, 2] = hess[:, 2, 0] = w * Kp
        hess[:, 0, 3] = hess[:, 3, 0] = -w * Kp
        hess[:, 1, 2] = hess[:, 2, 1] = u * Kp
        hess[:, 1, 3] = hess[:, 3, 1] = -u * Kp
        hess[:, 2, 2] = -u * w * K
        hess[:, 3, 3] = -u * w * K
        hess[:, 2, 3] = hess[:, 3, 2] = u * w * K
        return value, grad, hess

    @classmethod
    def compute(cls, self_bus, other_bus, u, w, psi, a_p, a_q, c_p, s_p, c_q, s_q):
        cos_psi, sin_psi = np.cos(psi), np.sin(psi)
        p, grad_p, hess_p = cls._derivatives(a_p, c_p, s_p, u, w, cos_psi, sin_psi)
        q, grad_q, hess_q = cls._derivatives(a_q, c_q, s_q, u, w, cos_psi, sin_psi)
        return cls(self_bus, other_bus, u, p, q, grad_p, grad_q, hess_p, hess_q)
