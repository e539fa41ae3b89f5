"""
Solveur NLP lisse : méthode de points intérieurs primal-dual (slacks sur les inégalités).

Problème traité :

    min f(x)  s.c.  g(x) = 0,  h(x) <= 0,  lb <= x <= ub

Les bornes sont traitées comme des inégalités linéaires, les variables fixées (lb = ub)
sont éliminées du système de Newton. Le système KKT est régularisé (correction d'inertie)
pour rester utilisable sur des sous-problèmes non convexes. Le solveur est re-entrant :
aucun état partagé entre deux appels.
"""

import logging
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigvalsh_tridiagonal, ldl
from scipy.optimize import BFGS
from scipy.sparse.linalg import MatrixRankWarning, spsolve

logger = logging.getLogger(__name__)

FIXED_TOL = 1e-14
BOUND_TOL = 1e-12


class NlpStatus(str, Enum):
    CONVERGED = "converged"
    ITERATION_LIMIT = "iteration-limit"
    TIME_LIMIT = "time-limit"
    NUMERICAL_FAILURE = "numerical-failure"


# ==============================================================================
# PROBLEM / RESULT
# ==============================================================================

def _no_constraints(x: np.ndarray) -> np.ndarray:
    return np.zeros(0)


@dataclass
class NlpProblem:
    """
    Problème NLP défini par ses évaluateurs.

    Les jacobiennes renvoient des matrices creuses (m, n). Le hessien du lagrangien,
    hessian(x, lam_eq, mu_ineq, obj_factor), est optionnel : à défaut une approximation
    BFGS amortie est utilisée.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    lb: np.ndarray
    ub: np.ndarray
    eq_constraints: Callable[[np.ndarray], np.ndarray] = _no_constraints
    eq_jacobian: Optional[Callable[[np.ndarray], sp.spmatrix]] = None
    ineq_constraints: Callable[[np.ndarray], np.ndarray] = _no_constraints
    ineq_jacobian: Optional[Callable[[np.ndarray], sp.spmatrix]] = None
    hessian: Optional[Callable[..., sp.spmatrix]] = None
    n_eq: int = 0
    n_ineq: int = 0
    name: str = "nlp"

    def __post_init__(self):
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        if self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError(f"{self.name}: bounds must have shape ({self.n},)")
        if np.any(self.lb > self.ub):
            bad = np.flatnonzero(self.lb > self.ub)[:5]
            raise ValueError(f"{self.name}: infeasible box bounds at variables {bad.tolist()}")
        if self.n_eq and self.eq_jacobian is None:
            raise ValueError(f"{self.name}: equality constraints need a jacobian")
        if self.n_ineq and self.ineq_jacobian is None:
            raise ValueError(f"{self.name}: inequality constraints need a jacobian")

    def _jac(self, which: str, x: np.ndarray) -> sp.csr_matrix:
        m = self.n_eq if which == "eq" else self.n_ineq
        if m == 0:
            return sp.csr_matrix((0, self.n))
        fn = self.eq_jacobian if which == "eq" else self.ineq_jacobian
        return sp.csr_matrix(fn(x))


@dataclass
class NlpResult:
    """Résultat d'un appel à solve (point, multiplicateurs pour redémarrage à chaud)."""

    x: np.ndarray
    objective: float
    stationarity: float
    violation: float
    status: NlpStatus
    iterations: int
    wall_time: float
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == NlpStatus.CONVERGED


def check_descent(before: float, after: float) -> bool:
    """
    Certificat de descente : after <= before + 1e-10·(1 + |before|).

    Raises:
        ValueError: Si une des valeurs n'est pas finie
    """
    if not (np.isfinite(before) and np.isfinite(after)):
        raise ValueError(f"check_descent needs finite values (got {before}, {after})")
    return bool(after <= before + 1e-10 * (1.0 + abs(before)))


# ==============================================================================
# INTERIOR-POINT SOLVER
# ==============================================================================

class _EvaluationError(RuntimeError):
    pass


class _InteriorPoint:
    """Une exécution de l'algorithme sur le sous-espace des variables libres."""

    XI = 0.99995
    SIGMA = 0.1
    Z0 = 1.0
    ALPHA_MIN = 1e-10
    BOUND_PUSH = 1e-2
    WARM_PUSH = 1e-6
    DENSE_LIMIT = 2500
    DELTA_W_FIRST = 1e-4
    DELTA_W_MAX = 1e20

    def __init__(self, problem: NlpProblem, x_full: np.ndarray, tol: float):
        self.problem = problem
        self.tol = tol
        lb, ub = problem.lb, problem.ub
        self.fixed = np.isfinite(lb) & np.isfinite(ub) & (ub - lb <= FIXED_TOL)
        self.free = np.flatnonzero(~self.fixed)
        self.x_full = x_full.copy()
        self.x_full[self.fixed] = lb[self.fixed]
        self.lbf, self.ubf = lb[self.free], ub[self.free]
        self.iu = np.flatnonzero(np.isfinite(self.ubf))
        self.il = np.flatnonzero(np.isfinite(self.lbf))
        nx = len(self.free)
        self.bound_jac = sp.vstack([
            sp.csr_matrix((np.ones(len(self.iu)), (np.arange(len(self.iu)), self.iu)),
                          shape=(len(self.iu), nx)),
            sp.csr_matrix((-np.ones(len(self.il)), (np.arange(len(self.il)), self.il)),
                          shape=(len(self.il), nx)),
        ]).tocsr()
        self.scale = 1.0
        self.delta_w_last = 0.0

    @property
    def nx(self) -> int:
        return len(self.free)

    def full(self, xf: np.ndarray) -> np.ndarray:
        x = self.x_full.copy()
        x[self.free] = xf
        return x

    def push_inside(self, xf: np.ndarray) -> np.ndarray:
        """Écarte le point de départ des bornes (démarrage à froid)."""
        lo, hi = self.lbf, self.ubf
        xf = np.clip(xf, lo, hi)
        with np.errstate(invalid="ignore"):
            width = hi - lo
            push_lo = np.minimum(self.BOUND_PUSH * np.maximum(1.0, np.abs(lo)),
                                 np.where(np.isfinite(width), self.BOUND_PUSH * width, np.inf))
            push_hi = np.minimum(self.BOUND_PUSH * np.maximum(1.0, np.abs(hi)),
                                 np.where(np.isfinite(width), self.BOUND_PUSH * width, np.inf))
        xf = np.where(np.isfinite(lo), np.maximum(xf, lo + push_lo), xf)
        xf = np.where(np.isfinite(hi), np.minimum(xf, hi - push_hi), xf)
        return xf

    def evaluate(self, xf: np.ndarray):
        """f, ∇f, g, Jg, h, Jh sur les variables libres (objectif mis à l'échelle)."""
        p = self.problem
        x = self.full(xf)
        try:
            with np.errstate(all="ignore"):
                f = float(p.objective(x)) * self.scale
                df = np.asarray(p.gradient(x), dtype=float)[self.free] * self.scale
                g = np.asarray(p.eq_constraints(x), dtype=float).reshape(-1)
                jg = p._jac("eq", x).tocsc()[:, self.free].tocsr()
                hn = np.asarray(p.ineq_constraints(x), dtype=float).reshape(-1)
                jhn = p._jac("ineq", x).tocsc()[:, self.free].tocsr()
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
            raise _EvaluationError(f"evaluator raised {type(e).__name__}: {e}") from e

        h = np.concatenate([hn, xf[self.iu] - self.ubf[self.iu], self.lbf[self.il] - xf[self.il]])
        jh = sp.vstack([jhn, self.bound_jac]).tocsr()
        values = [f, df, g, h, jg.data, jh.data]
        if not all(np.all(np.isfinite(v)) for v in values):
            raise _EvaluationError("non-finite value returned by an evaluator")
        return f, df, g, jg, h, jh, len(hn)

    def lagrangian_hessian(self, xf, lam, mu_nl) -> sp.csr_matrix:
        x = self.full(xf)
        try:
            with np.errstate(all="ignore"):
                hess = sp.csr_matrix(self.problem.hessian(x, lam, mu_nl, self.scale))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
            raise _EvaluationError(f"hessian raised {type(e).__name__}: {e}") from e
        hess = hess.tocsc()[:, self.free].tocsr()[self.free, :]
        if not np.all(np.isfinite(hess.data)):
            raise _EvaluationError("non-finite hessian")
        return hess

    # ------------------------------------------------------------------
    # Newton system
    # ------------------------------------------------------------------

    def solve_kkt(self, m_mat: sp.csr_matrix, jg: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
        nx, neq = self.nx, jg.shape[0]
        if nx + neq <= self.DENSE_LIMIT:
            return self._solve_dense(m_mat.toarray(), jg.toarray(), rhs)
        return self._solve_sparse(m_mat, jg, rhs)

    def _inertia(self, kkt: np.ndarray):
        _, d, _ = ldl(kkt, lower=True)
        eig = eigvalsh_tridiagonal(np.diag(d).copy(), np.diag(d, -1).copy())
        cutoff = 1e-13 * max(1.0, float(np.abs(eig).max()) if len(eig) else 1.0)
        return int((eig > cutoff).sum()), int((eig < -cutoff).sum())

    def _solve_dense(self, m_mat: np.ndarray, jg: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        nx, neq = self.nx, jg.shape[0]
        delta_w, delta_c = 0.0, 0.0
        while True:
            kkt = np.block([
                [m_mat + delta_w * np.eye(nx), jg.T],
                [jg, -delta_c * np.eye(neq)],
            ])
            n_pos, n_neg = self._inertia(kkt)
            if n_pos == nx and n_neg == neq:
                break
            if n_pos + n_neg < nx + neq and delta_c == 0.0:
                delta_c = 1e-8
            if delta_w == 0.0:
                delta_w = self.DELTA_W_FIRST if self.delta_w_last == 0.0 else max(
                    1e-20, self.delta_w_last / 3.0)
            else:
                delta_w *= 10.0
            if delta_w > self.DELTA_W_MAX:
                raise np.linalg.LinAlgError("inertia correction failed")
        self.delta_w_last = delta_w
        return np.linalg.solve(kkt, rhs)

    def _solve_sparse(self, m_mat: sp.csr_matrix, jg: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
        nx, neq = self.nx, jg.shape[0]
        for delta in (0.0, 1e-8, 1e-6, 1e-4, 1e-2):
            kkt = sp.bmat([
                [m_mat + delta * sp.identity(nx), jg.T],
                [jg, -delta * sp.identity(neq) if neq else None],
            ], format="csc")
            with warnings.catch_warnings():
                warnings.simplefilter("error", MatrixRankWarning)
                try:
                    step = spsolve(kkt, rhs)
                except MatrixRankWarning:
                    continue
            if np.all(np.isfinite(step)):
                return step
        raise np.linalg.LinAlgError("singular KKT system")

    # ------------------------------------------------------------------
    # Main loop
    # ------------------------------------------------------------------

    def run(self, xf, warm: Optional[NlpResult], max_iter: int, deadline: Optional[float]):
        tol = self.tol
        f, df, g, jg, h, jh, n_nl = self.evaluate(xf)
        self.scale = min(1.0, 100.0 / max(1e-12, float(np.abs(df).max()) if len(df) else 0.0))
        f, df, g, jg, h, jh, n_nl = self.evaluate(xf)
        neq, niq = len(g), len(h)

        use_warm = (
            warm is not None and len(warm.lam) == neq and len(warm.mu) == niq
            and len(warm.z) == niq
        )
        if use_warm:
            lam = warm.lam.copy()
            z = np.maximum(warm.z, np.finfo(float).tiny)
            mu = np.maximum(warm.mu, np.finfo(float).tiny)
        else:
            lam = np.zeros(neq)
            z = np.maximum(self.Z0, -h)
            mu = np.full(niq, self.Z0)
        gamma = self.SIGMA * float(z @ mu) / niq if niq else 0.0

        bfgs = None
        if self.problem.hessian is None:
            bfgs = BFGS(exception_strategy="damp_update")
            bfgs.initialize(self.nx, "hess")

        def conditions(f_prev):
            lx = df + jg.T @ lam + jh.T @ mu
            x_norm = float(np.abs(xf).max()) if len(xf) else 0.0
            feas = max(float(np.abs(g).max()) if neq else 0.0, float(h.max()) if niq else 0.0, 0.0)
            grad = float(np.abs(lx).max()) / (
                1.0 + max(float(np.abs(lam).max()) if neq else 0.0,
                          float(np.abs(mu).max()) if niq else 0.0))
            comp = float(z @ mu) / (1.0 + x_norm) if niq else 0.0
            cost = 0.0 if f_prev is None else abs(f - f_prev) / (1.0 + abs(f_prev))
            return lx, feas, grad, comp, cost

        iterations = 0
        status = NlpStatus.ITERATION_LIMIT
        message = ""
        f_prev = None
        best = None
        while True:
            lx, feas, grad, comp, cost = conditions(f_prev)
            merit = (feas if feas > tol else 0.0, f)
            if best is None or merit < best[0]:
                best = (merit, xf.copy(), lam.copy(), mu.copy(), z.copy(), grad, feas)
            if feas <= tol and grad <= tol and comp <= tol and cost <= tol:
                status = NlpStatus.CONVERGED
                break
            if iterations >= max_iter:
                status = NlpStatus.ITERATION_LIMIT
                break
            if deadline is not None and time.perf_counter() >= deadline:
                status = NlpStatus.TIME_LIMIT
                break
            if iterations == 0 and use_warm:
                # le point chaud n'est pas optimal : on relâche la complémentarité
                z = np.maximum(z, self.WARM_PUSH)
                mu = np.maximum(mu, self.WARM_PUSH)
                gamma = self.SIGMA * float(z @ mu) / niq if niq else 0.0
            iterations += 1

            try:
                if bfgs is None:
                    hess = self.lagrangian_hessian(xf, lam[: self.problem.n_eq], mu[:n_nl])
                else:
                    hess = sp.csr_matrix(bfgs.get_matrix())
                zinv = 1.0 / z
                m_mat = (hess + jh.T @ sp.diags(mu * zinv) @ jh).tocsr()
                n_vec = lx + jh.T @ (zinv * (mu * h + gamma))
                step = self.solve_kkt(m_mat, jg, np.concatenate([-n_vec, -g]))
            except (_EvaluationError, np.linalg.LinAlgError, ValueError) as e:
                status, message = NlpStatus.NUMERICAL_FAILURE, str(e)
                break

            dx, dlam = step[: self.nx], step[self.nx:]
            dz = -h - z - jh @ dx
            dmu = -mu + zinv * (gamma - mu * dz)

            neg = dz < 0
            alpha_p = min(self.XI * float(np.min(z[neg] / -dz[neg])), 1.0) if neg.any() else 1.0
            neg = dmu < 0
            alpha_d = min(self.XI * float(np.min(mu[neg] / -dmu[neg])), 1.0) if neg.any() else 1.0

            xf_new = xf + alpha_p * dx
            z = z + alpha_p * dz
            lam = lam + alpha_d * dlam
            mu = mu + alpha_d * dmu
            if niq:
                gamma = self.SIGMA * float(z @ mu) / niq

            f_prev = f
            lx_old = df + jg.T @ lam + jh.T @ mu
            try:
                f, df, g, jg, h, jh, n_nl = self.evaluate(xf_new)
            except _EvaluationError as e:
                status, message = NlpStatus.NUMERICAL_FAILURE, str(e)
                break
            if bfgs is not None:
                bfgs.update(xf_new - xf, df + jg.T @ lam + jh.T @ mu - lx_old)
            xf = xf_new

            if alpha_p < self.ALPHA_MIN or alpha_d < self.ALPHA_MIN:
                status, message = NlpStatus.NUMERICAL_FAILURE, "step size too small"
                break
            if niq and (gamma < np.finfo(float).eps or gamma > 1.0 / np.finfo(float).eps):
                status, message = NlpStatus.NUMERICAL_FAILURE, f"barrier parameter {gamma:.3e}"
                break

        if status == NlpStatus.CONVERGED:
            return xf, lam, mu, z, grad, status, iterations, message
        _, xb, lb_, mb, zb, gb, _ = best
        return xb, lb_, mb, zb, gb, status, iterations, message


def solve(
    problem: NlpProblem,
    start: Union[np.ndarray, NlpResult],
    tol: float = 1e-6,
    max_iter: int = 500,
    time_limit: Optional[float] = None,
) -> NlpResult:
    """
    Cherche un point stationnaire (KKT) du problème.

    Args:
        problem: Problème NLP
        start: Point de départ, ou résultat précédent (redémarrage à chaud, multiplicateurs inclus)
        tol: Tolérance sur faisabilité, stationnarité et complémentarité
        max_iter: Nombre maximal d'itérations
        time_limit: Limite de temps (secondes), None = illimité

    Returns:
        NlpResult ; en cas d'échec, meilleur itéré rencontré avec le statut correspondant.
        Aucune exception n'est levée pour un échec numérique.
    """
    t0 = time.perf_counter()
    deadline = None if time_limit is None else t0 + time_limit
    warm = start if isinstance(start, NlpResult) else None
    x0 = np.asarray(warm.x if warm is not None else start, dtype=float).reshape(-1).copy()
    if x0.shape != (problem.n,):
        raise ValueError(f"{problem.name}: start point has shape {x0.shape}, expected ({problem.n},)")
    bad = ~np.isfinite(x0)
    x0[bad] = 0.0
    x0 = np.clip(x0, problem.lb, problem.ub)

    ipm = _InteriorPoint(problem, x0, tol)
    attempts = [warm, None] if warm is not None else [None]
    outcome = None
    total_iterations = 0
    for attempt in attempts:
        xf = x0[ipm.free] if attempt is not None else ipm.push_inside(x0[ipm.free])
        try:
            outcome = ipm.run(xf, attempt, max_iter - total_iterations, deadline)
        except _EvaluationError as e:
            outcome = (xf, np.zeros(problem.n_eq), np.zeros(0), np.zeros(0), np.inf,
                       NlpStatus.NUMERICAL_FAILURE, 0, str(e))
        total_iterations += outcome[6]
        if outcome[5] in (NlpStatus.CONVERGED, NlpStatus.TIME_LIMIT):
            break
        if attempt is not None:
            logger.debug(f"{problem.name}: warm start failed ({outcome[5].value}), cold restart")

    xf, lam, mu, z, grad, status, _, message = outcome
    x = np.clip(ipm.full(xf), problem.lb, problem.ub)
    objective_value, violation = _measure(problem, x)
    if status == NlpStatus.CONVERGED and violation > tol:
        status = NlpStatus.ITERATION_LIMIT
        message = f"violation {violation:.2e} after bound projection"
    if not np.isfinite(objective_value):
        status = NlpStatus.NUMERICAL_FAILURE

    result = NlpResult(
        x=x,
        objective=objective_value,
        stationarity=float(grad),
        violation=violation,
        status=status,
        iterations=total_iterations,
        wall_time=time.perf_counter() - t0,
        lam=lam,
        mu=mu,
        z=z,
        message=message,
    )
    log = logger.debug if result.converged else logger.warning
    log(
        f"{problem.name}: {status.value} after {total_iterations} iterations "
        f"(f={objective_value:.6g}, viol={violation:.2e}, stat={result.stationarity:.2e}, "
        f"{result.wall_time:.3f}s)"
    )
    return result


def _measure(problem: NlpProblem, x: np.ndarray):
    """Objectif et violation maximale des contraintes au point x."""
    try:
        with np.errstate(all="ignore"):
            f = float(problem.objective(x))
            g = np.asarray(problem.eq_constraints(x), dtype=float)
            h = np.asarray(problem.ineq_constraints(x), dtype=float)
    except (ArithmeticError, ValueError):
        return np.nan, np.inf
    viol = max(
        float(np.abs(g).max()) if g.size else 0.0,
        float(h.max()) if h.size else 0.0,
        0.0,
    )
    if not np.isfinite(viol):
        viol = np.inf
    return f, viol
