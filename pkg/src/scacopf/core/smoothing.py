"""
Lissage softplus des contraintes disjonctives.

F^ε(x) = ε·ln(1 + exp(x/ε)) approche max(0, x) avec 0 <= F^ε(x) − max(0, x) <= ε·ln 2.
On en déduit :
- la réponse active lissée p^ε(p_g0 + α_g Δ) ≈ proj_[p̲, p̄](p_g0 + α_g Δ)
- la relaxation lisse S^ε_gk de l'ensemble PV/PQ S_gk (variables auxiliaires v⁺, v⁻)

Toutes les fonctions sont vectorisées (numpy) et sans débordement pour ε petit.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import expit

from .evaluation import reactive_set_distance

logger = logging.getLogger(__name__)

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class SmoothingParams:
    """
    Paramètres de lissage et de recours.

    Args:
        epsilon: Échelle de lissage ε (> 0)
        mu: Seuil de violation des disjonctions μ (> 0)
    """

    DEFAULT_EPSILON = 1e-6
    DEFAULT_MU = 1e-4

    epsilon: float = DEFAULT_EPSILON
    mu: float = DEFAULT_MU

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0 (got {self.epsilon})")
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0 (got {self.mu})")


# ==============================================================================
# SOFTPLUS
# ==============================================================================

OVERFLOW_RATIO = 30.0


def softplus(x, eps: float):
    """
    ε·ln(1 + exp(x/ε)), calculé sans débordement.

    Pour x/ε > 30 on utilise x + ε·ln(1 + exp(−x/ε)).
    """
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x)
    ratio = flat / eps
    out = np.empty_like(ratio)
    large = ratio > OVERFLOW_RATIO
    out[large] = flat[large] + eps * np.log1p(np.exp(-ratio[large]))
    out[~large] = eps * np.log1p(np.exp(ratio[~large]))
    return out.reshape(x.shape) if x.ndim else float(out[0])


def softplus_derivatives(x, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """Dérivées première et seconde de F^ε : σ(x/ε) et σ(x/ε)(1 − σ(x/ε))/ε."""
    s = expit(np.asarray(x, dtype=float) / eps)
    return s, s * (1.0 - s) / eps


# ==============================================================================
# ACTIVE RESPONSE
# ==============================================================================

def smooth_response_full(p_g0, alpha, delta, p_lo, p_hi, eps: float):
    """
    Réponse active lissée p̲ + ε·ln[1 + exp((p̄−p̲)/ε) / (1 + exp((p̄−p_g0−αΔ)/ε))].

    Calculée sous la forme équivalente p̲ + F^ε(p̄ − F^ε(p̄ − u) − p̲), u = p_g0 + αΔ.
    """
    u = np.asarray(p_g0, dtype=float) + np.asarray(alpha, dtype=float) * np.asarray(delta)
    inner = p_hi - softplus(p_hi - u, eps) - p_lo
    return p_lo + softplus(inner, eps)


def smooth_response_upper(p_g0, alpha, delta, p_hi, eps: float):
    """Variante borne haute seule : p̄ − ε·ln[1 + exp((p̄ − p_g0 − αΔ)/ε)]."""
    u = np.asarray(p_g0, dtype=float) + np.asarray(alpha, dtype=float) * np.asarray(delta)
    return p_hi - softplus(p_hi - u, eps)


def smooth_response_derivatives(u, p_lo, p_hi, eps: float):
    """
    Valeur, dérivée première et seconde de u ↦ p^ε(u).

    Returns:
        Tuple (valeur, d/du, d²/du²)
    """
    u = np.asarray(u, dtype=float)
    w = p_hi - u
    f1_w, f2_w = softplus_derivatives(w, eps)
    m = p_hi - softplus(w, eps) - p_lo
    f1_m, f2_m = softplus_derivatives(m, eps)
    value = p_lo + softplus(m, eps)
    first = f1_m * f1_w
    second = f2_m * f1_w**2 - f1_m * f2_w
    return value, first, second


# ==============================================================================
# REACTIVE / VOLTAGE RELAXATION
# ==============================================================================

def reactive_relaxation_residuals(q, v, v_plus, v_minus, q_lo, q_hi, v0, eps: float):
    """
    Résidus de la relaxation lisse du couple (q, v).

    Returns:
        Tuple (résidu d'égalité v − v0 − v⁺ + v⁻,
               v⁺ − F^ε(v⁺ − q + q̲) − ε ln 2,
               v⁻ − F^ε(v⁻ + q − q̄) − ε ln 2)
        les deux derniers étant satisfaits lorsqu'ils sont <= 0
    """
    q = np.asarray(q, dtype=float)
    v_plus = np.asarray(v_plus, dtype=float)
    v_minus = np.asarray(v_minus, dtype=float)
    eq = np.asarray(v, dtype=float) - v0 - v_plus + v_minus
    upper = v_plus - softplus(v_plus - q + q_lo, eps) - eps * LN2
    lower = v_minus - softplus(v_minus + q - q_hi, eps) - eps * LN2
    return eq, upper, lower


def hausdorff_gap_estimate(q_lo, q_hi, v_lo, v_hi, v0, eps: float, resolution: int = 100) -> float:
    """
    Estime sup_{(q,v) ∈ S^ε} dist((q, v), S) par énumération d'une grille (q, v⁺, v⁻).

    Args:
        q_lo, q_hi, v_lo, v_hi: Bornes réactive et de tension
        v0: Tension de consigne du cas de base
        eps: Échelle de lissage
        resolution: Nombre de points par axe (>= 10)

    Returns:
        Plus grande distance à S parmi les points de grille satisfaisant S^ε

    Raises:
        ValueError: Si resolution < 10
    """
    if resolution < 10:
        raise ValueError(f"Grid resolution must be >= 10 (got {resolution})")

    span = v_hi - v_lo
    q_axis = np.linspace(q_lo, q_hi, resolution)
    dv_axis = np.linspace(0.0, span, resolution)
    gap = 0.0
    # une tranche q à la fois pour limiter la mémoire
    vp, vm = np.meshgrid(dv_axis, dv_axis, indexing="ij")
    vp, vm = vp.ravel(), vm.ravel()
    for q in q_axis:
        v = v0 + vp - vm
        _, upper, lower = reactive_relaxation_residuals(q, v, vp, vm, q_lo, q_hi, v0, eps)
        inside = (upper <= 0.0) & (lower <= 0.0) & (v >= v_lo) & (v <= v_hi)
        if not inside.any():
            continue
        dist = reactive_set_distance(q, v[inside], q_lo, q_hi, v_lo, v_hi, v0)
        gap = max(gap, float(dist.max()))
    logger.debug(f"Hausdorff gap estimate (eps={eps:g}, grid={resolution}): {gap:.3e}")
    return gap
