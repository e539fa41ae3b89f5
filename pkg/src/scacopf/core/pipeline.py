"""
Pipeline complet : phase I (solution du cas de base sous limite de temps) et phase II
(solutions de toutes les contingences).

Phase I : solution plate écrite immédiatement, ACOPF de base préliminaire, classement des
contingences, sous-ensemble K', ADMM deux niveaux ; le fichier de base est remplacé après
chaque tour externe tant que l'échéance (limite − marge) n'est pas atteinte.

Phase II : reclassement sur la base finale, solutions par défaut pour toutes les
contingences, puis recours résolus dans l'ordre du classement par le manager/workers/writer.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
import pandas as pd

from ..api.case_source import load_case
from ..utils import solution_io
from ..utils.export import to_csv
from .admm import AdmmConfig, AdmmResult, BaseStateBlock, build_relaxation, run_admm
from .evaluation import flat_start, generation_cost, objective, penalty_cost
from .network import NetworkCase
from .parallel import CompletionReport, ResultMessage, TaskMessage, manager_loop
from .recourse import RecourseOptions, RecourseResult, default_solution, solve_contingency
from .screening import rank, ranking_frame, select_subset
from .smoothing import SmoothingParams
from .state import StateVector

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, str], None]


@dataclass(frozen=True)
class RunConfig:
    """
    Configuration d'une exécution.

    Args:
        case_path: Fichier de cas (chemin, URL ou `bundled:case5`)
        out_dir: Répertoire de sortie
        mode: phase1, phase2, full ou rank
        phase1_time_limit: Limite de la phase I (secondes)
        ctg_time_limit: Budget par contingence (secondes) ; la phase II dispose de
            ctg_time_limit × |K| au total, et chaque résolution de ctg_time_limit × workers
        workers: Nombre de workers W
        deadline_margin: Marge de sécurité avant la limite de phase I (plafonnée à 25 %)
    """

    DEFAULT_PHASE1_LIMIT = 45 * 60.0
    DEFAULT_CTG_LIMIT = 2.0
    DEFAULT_MARGIN = 60.0
    MODES = ("phase1", "phase2", "full", "rank")

    case_path: str
    out_dir: str = "out"
    mode: str = "full"
    phase1_time_limit: float = DEFAULT_PHASE1_LIMIT
    ctg_time_limit: float = DEFAULT_CTG_LIMIT
    workers: int = 1
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    recourse: RecourseOptions = field(default_factory=RecourseOptions)
    seed: int = 0
    deadline_margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        _validate_run_config(self)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def phase1_margin(self) -> float:
        return min(self.deadline_margin, 0.25 * self.phase1_time_limit)


def _validate_run_config(config: RunConfig) -> None:
    """
    Raises:
        ValueError: Paramètre invalide
    """
    if config.mode not in RunConfig.MODES:
        raise ValueError(f"mode must be one of {RunConfig.MODES} (got '{config.mode}')")
    if not config.phase1_time_limit > 0:
        raise ValueError(f"phase1_time_limit must be > 0 (got {config.phase1_time_limit})")
    if not config.ctg_time_limit > 0:
        raise ValueError(f"ctg_time_limit must be > 0 (got {config.ctg_time_limit})")
    if config.workers < 1:
        raise ValueError(f"workers must be >= 1 (got {config.workers})")
    if config.deadline_margin < 0:
        raise ValueError(f"deadline_margin must be >= 0 (got {config.deadline_margin})")


def _progress(progress_callback: Optional[ProgressCallback]):
    def update_progress(pct: int, msg: str):
        logger.info(f"[{pct}%] {msg}")
        if progress_callback:
            progress_callback(pct, msg)

    return update_progress


# ==============================================================================
# PHASE I
# ==============================================================================

@dataclass
class Phase1Report:
    base: StateVector
    ranking: pd.DataFrame
    selected: List[str]
    admm: Optional[AdmmResult]
    fallback_used: bool
    reason: str
    wall_time: float
    base_file: Path
    writes: int = 0


class _BaseFileWriter:
    """
    Remplace le fichier de base tant que l'échéance n'est pas atteinte.

    `last` est toujours l'état présent sur disque ; `writes` ne compte pas la solution plate.
    """

    def __init__(self, path: Path, case: NetworkCase, deadline: float):
        self.path = path
        self.case = case
        self.deadline = deadline
        self.writes = 0
        self.last: Optional[StateVector] = None

    def write_flat_start(self) -> StateVector:
        """Solution plate, écrite sans condition d'échéance."""
        flat = flat_start(self.case, 0)
        solution_io.write_base_solution(self.path, self.case, flat)
        self.last = flat.copy()
        return flat

    def __call__(self, base: StateVector, label: str) -> bool:
        if time.perf_counter() >= self.deadline:
            logger.warning(f"Deadline reached, base solution from {label} not written")
            return False
        solution_io.write_base_solution(self.path, self.case, base)
        self.last = base.copy()
        self.writes += 1
        logger.info(f"Base solution written ({label})")
        return True


def run_phase1(
    config: RunConfig,
    case: Optional[NetworkCase] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> Phase1Report:
    """
    Phase I : solution du cas de base par l'ADMM deux niveaux sous limite de temps.

    Args:
        config: Configuration d'exécution
        case: Cas déjà chargé (sinon lu depuis config.case_path)
        progress_callback: Callback optionnel (progress_pct, message)

    Returns:
        Phase1Report ; fallback_used si la base écrite est la solution plate
    """
    update_progress = _progress(progress_callback)
    t0 = time.perf_counter()
    deadline = t0 + config.phase1_time_limit - config.phase1_margin()
    np.random.seed(config.seed)

    case = case or load_case(config.case_path)
    out = config.out_path
    out.mkdir(parents=True, exist_ok=True)
    write_base = _BaseFileWriter(out / solution_io.BASE_FILE, case, deadline)

    update_progress(5, "Writing flat-start base solution")
    estimate = write_base.write_flat_start()
    prelim_solved, reason = False, "flat-start"

    def remaining() -> float:
        return max(deadline - time.perf_counter(), 1e-3)

    admm_cfg = replace(config.admm, workers=config.workers)
    update_progress(10, "Solving preliminary base ACOPF")
    try:
        prelim = BaseStateBlock(case, replace(admm_cfg, nlp_time_limit=remaining()))
        if prelim.solved:
            estimate, prelim_solved = prelim.state(), True
            if write_base(estimate, "preliminary base ACOPF"):
                reason = "preliminary"
        else:
            logger.warning("Preliminary base ACOPF did not converge, ranking on the flat start")
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
        logger.error(f"Preliminary base solve failed: {e}")

    update_progress(25, "Ranking contingencies")
    ranked = rank(case, estimate)
    ranking = ranking_frame(ranked)
    solution_io.write_ranking(out / solution_io.RANKING_FILE, ranking)
    subset = select_subset(case, ranked, config.workers)
    selected = [r.contingency_id for r in subset]
    logger.info(f"Contingency subset K' ({len(selected)}): {', '.join(selected)}")

    result: Optional[AdmmResult] = None
    if not selected:
        reason = "no-contingency" if write_base.writes else reason
    elif time.perf_counter() >= deadline:
        logger.warning("Deadline reached before the ADMM could start")
    else:
        update_progress(35, f"Running two-level ADMM on {len(selected)} contingencies")

        def on_round(state):
            candidate = state.base_solution()
            if candidate is not None:
                write_base(candidate, f"ADMM round {state.r}")
            solution_io.write_diagnostics(out / solution_io.DIAGNOSTICS_FILE, state.diagnostics.frame())

        try:
            ks = [case.contingency_index[c] for c in selected]
            state = build_relaxation(
                case, ks, replace(admm_cfg, nlp_time_limit=admm_cfg.nlp_time_limit or remaining()),
                base_start=estimate if prelim_solved else None,
            )
            result = run_admm(state, deadline=deadline, on_round=on_round)
            if result.base is not None and write_base(result.base, "final ADMM iterate"):
                reason = result.reason
            if not result.converged:
                logger.warning(f"ADMM stopped without consensus ({result.reason}, {result.consensus:.3e})")
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
            logger.error(f"ADMM failed: {e}")

    update_progress(95, "Finalizing base solution")
    # la base rendue est celle du fichier, jamais un itéré refusé à l'échéance
    base = write_base.last
    fallback_used = write_base.writes == 0
    if fallback_used:
        reason = "flat-start"
        logger.warning("No solution written before the deadline, base file holds the flat start")
    wall = time.perf_counter() - t0
    logger.info(
        f"Phase I done in {wall:.2f}s: generation cost {generation_cost(case, base):.6g}, "
        f"base penalty {penalty_cost(case, 0, base):.6g} ({reason})"
    )
    update_progress(100, "Phase I complete")
    return Phase1Report(base, ranking, selected, result, fallback_used, reason, wall,
                        write_base.path, write_base.writes)


# ==============================================================================
# PHASE II
# ==============================================================================

@dataclass
class Phase2Report:
    results: List[RecourseResult]
    summary: pd.DataFrame
    completion: CompletionReport
    objective: float
    fallback_used: bool
    wall_time: float


def _status_of(result: RecourseResult) -> str:
    return "fallback" if result.flagged else "ok"


def run_phase2(
    config: RunConfig,
    base: Optional[StateVector] = None,
    case: Optional[NetworkCase] = None,
    progress_callback: Optional[ProgressCallback] = None,
    solve: Optional[Callable[[TaskMessage], RecourseResult]] = None,
) -> Phase2Report:
    """
    Phase II : recours de toutes les contingences, dans l'ordre du classement.

    Args:
        config: Configuration d'exécution
        base: Solution de base (sinon lue depuis le fichier de base du répertoire de sortie)
        case: Cas déjà chargé
        progress_callback: Callback optionnel (progress_pct, message)
        solve: Résolution d'une tâche (par défaut solve_contingency)

    Raises:
        ValueError: Fichier de base absent ou invalide
    """
    update_progress = _progress(progress_callback)
    t0 = time.perf_counter()
    case = case or load_case(config.case_path)
    out = config.out_path
    out.mkdir(parents=True, exist_ok=True)
    if base is None:
        base = solution_io.read_base_solution(out / solution_io.BASE_FILE, case)

    update_progress(5, "Ranking contingencies on the final base solution")
    ranked = rank(case, base)
    solution_io.write_ranking(out / solution_io.RANKING_FILE, ranking_frame(ranked))

    update_progress(10, "Preparing default solutions")
    defaults = {}
    for k in range(1, case.n_ctg + 1):
        defaults[k] = default_solution(case, k, base)
    default_messages = [
        ResultMessage(k, r.contingency_id, r, "default") for k, r in sorted(defaults.items())
    ]

    deadline = t0 + config.ctg_time_limit * max(case.n_ctg, 1)
    per_task = config.ctg_time_limit * config.workers
    if solve is None:
        def solve(task: TaskMessage) -> RecourseResult:
            # aucune résolution ne dépasse l'échéance de la phase
            budget = min(per_task, max(deadline - time.perf_counter(), 1e-3))
            options = replace(config.recourse, time_limit=budget)
            return solve_contingency(case, task.k, base, config.smoothing, options)

    def fallback(task: TaskMessage, why: str) -> RecourseResult:
        return default_solution(case, task.k, base, status=why)

    tasks = [TaskMessage(case.contingency_index[r.contingency_id], r.contingency_id) for r in ranked]
    writer = solution_io.ContingencySolutionWriter(out / solution_io.CTG_FILE, case)
    update_progress(15, f"Solving {len(tasks)} contingencies with {config.workers} worker(s)")
    completion = manager_loop(
        tasks, solve, fallback, writer,
        workers=config.workers,
        deadline=deadline,
        defaults=default_messages,
        status_of=_status_of,
    )

    results = [writer.results.get(k, defaults[k]) for k in sorted(defaults)]
    summary = pd.DataFrame([
        {
            "k": r.k, "contingency_id": r.contingency_id, "penalty": r.penalty,
            "path": r.path.value, "status": r.nlp_status, "iterations": r.iterations,
            "wall_time": r.wall_time,
        }
        for r in results
    ])
    (out / solution_io.SUMMARY_FILE).write_bytes(to_csv(summary))

    total = objective(case, base, [r.penalty for r in results])
    fallback_used = any(r.flagged for r in results) or not completion.complete
    wall = time.perf_counter() - t0
    update_progress(100, f"Phase II complete: objective {total:.6g} in {wall:.2f}s")
    return Phase2Report(results, summary, completion, total, fallback_used, wall)


@dataclass
class RunSummary:
    contingencies: pd.DataFrame
    totals: dict


def summarize_run(out_dir, case: NetworkCase) -> RunSummary:
    """
    Relit les fichiers de sortie et recalcule l'objectif à partir des états écrits.

    Raises:
        ValueError: Fichier de base ou de contingences absent / invalide
    """
    out = Path(out_dir)
    base = solution_io.read_base_solution(out / solution_io.BASE_FILE, case)
    records = solution_io.read_ctg_solutions(out / solution_io.CTG_FILE, case)
    missing = [case.contingencies[k - 1].id for k in range(1, case.n_ctg + 1) if k not in records]
    if missing:
        raise ValueError(f"Contingency solutions missing for {', '.join(missing)}")

    rows = []
    for k in sorted(records):
        rec = records[k]
        rows.append({
            "k": k, "contingency_id": rec.contingency_id, "path": rec.path,
            "penalty": penalty_cost(case, k, rec.state), "recorded_penalty": rec.penalty,
        })
    frame = pd.DataFrame(rows, columns=["k", "contingency_id", "path", "penalty", "recorded_penalty"])
    penalties = frame["penalty"].tolist()
    totals = {
        "generation_cost": generation_cost(case, base),
        "base_penalty": penalty_cost(case, 0, base),
        "mean_ctg_penalty": float(np.mean(penalties)) if penalties else 0.0,
        "objective": objective(case, base, penalties),
        "fallbacks": int((frame["path"] == "fallback").sum()),
    }
    return RunSummary(frame, totals)


def run_full(
    config: RunConfig,
    case: Optional[NetworkCase] = None,
    progress_callback: Optional[ProgressCallback] = None,
):
    """Phase I puis phase II sur la base obtenue."""
    case = case or load_case(config.case_path)
    phase1 = run_phase1(config, case, progress_callback)
    phase2 = run_phase2(config, phase1.base, case, progress_callback)
    return phase1, phase2
