"""
Interface en ligne de commande SCACOPF.

Sous-commandes : phase1, phase2, full, rank, report, validate, dashboard.
Codes de sortie : 0 succès, 1 solution de repli utilisée, 2 entrée invalide.
"""

import argparse
import logging
import subprocess
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .api.case_source import load_case
from .core.admm import AdmmConfig, BaseStateBlock
from .core.model import Coupling
from .core.pipeline import RunConfig, run_full, run_phase1, run_phase2, summarize_run
from .core.recourse import RecourseOptions
from .core.screening import rank, ranking_frame
from .core.smoothing import SmoothingParams
from .core.validator import CaseValidationError
from .utils import solution_io
from .utils.export import EXPORT_FORMATS, export, get_report_stats

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FALLBACK = 1
EXIT_INVALID = 2


def setup_logging(out_dir: Optional[str], verbose: bool = False) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Path(out_dir) / "scacopf.log"))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


# ==============================================================================
# PARSER
# ==============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", default="bundled:case5", help="Fichier de cas (chemin, URL ou bundled:case5)")
    common.add_argument("--out", default="out", help="Répertoire de sortie")
    common.add_argument("--workers", type=int, default=1, help="Nombre de workers")
    common.add_argument("--time-limit", type=float, default=RunConfig.DEFAULT_PHASE1_LIMIT,
                        help="Limite de temps de la phase I (s)")
    common.add_argument("--ctg-time", type=float, default=RunConfig.DEFAULT_CTG_LIMIT,
                        help="Budget par contingence en phase II (s)")
    common.add_argument("--epsilon", type=float, default=SmoothingParams.DEFAULT_EPSILON,
                        help="Échelle de lissage ε")
    common.add_argument("--mu", type=float, default=SmoothingParams.DEFAULT_MU,
                        help="Seuil de violation μ des disjonctions")
    common.add_argument("--beta0", type=float, default=AdmmConfig.DEFAULT_BETA0, help="Pénalité initiale β0")
    common.add_argument("--tau", type=float, default=AdmmConfig.DEFAULT_TAU, help="Rapport ρ/β")
    common.add_argument("--coupling", choices=[Coupling.SMOOTHED.value, Coupling.BIGM.value],
                        default=Coupling.BIGM.value, help="Couplage des blocs de contingence")
    common.add_argument("--seed", type=int, default=0, help="Graine")
    common.add_argument("-v", "--verbose", action="store_true", help="Logs de debug")

    parser = argparse.ArgumentParser(
        prog="scacopf", description="SC-ACOPF : ADMM deux niveaux, classement et recours des contingences"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("phase1", parents=[common], help="Solution du cas de base (ADMM)")
    sub.add_parser("phase2", parents=[common], help="Solutions des contingences")
    sub.add_parser("full", parents=[common], help="Phase I puis phase II")
    sub.add_parser("rank", parents=[common], help="Classement des contingences")
    report = sub.add_parser("report", parents=[common], help="Bilan d'une exécution")
    report.add_argument("--export", choices=EXPORT_FORMATS, help="Exporte le bilan des contingences")
    sub.add_parser("validate", parents=[common], help="Contrôle du fichier de cas")
    sub.add_parser("dashboard", parents=[common], help="Tableau de bord Streamlit")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    Raises:
        ValueError: Paramètre invalide
    """
    smoothing = SmoothingParams(epsilon=args.epsilon, mu=args.mu)
    admm = AdmmConfig(
        tau=args.tau, beta0=args.beta0, coupling=Coupling(args.coupling),
        epsilon=args.epsilon, workers=args.workers,
    )
    mode = args.command if args.command in RunConfig.MODES else "full"
    return RunConfig(
        case_path=args.case, out_dir=args.out, mode=mode,
        phase1_time_limit=args.time_limit, ctg_time_limit=args.ctg_time, workers=args.workers,
        admm=admm, smoothing=smoothing, recourse=RecourseOptions(), seed=args.seed,
    )


# ==============================================================================
# COMMANDS
# ==============================================================================

def cmd_validate(args) -> int:
    try:
        case = load_case(args.case)
    except CaseValidationError as e:
        for problem in e.problems:
            print(f"ERROR {problem}")
        return EXIT_INVALID
    print(
        f"OK {case.name}: {case.n_bus} buses, {case.n_gen} generators, "
        f"{len(case.lines)} lines, {len(case.transformers)} transformers, {case.n_ctg} contingencies"
    )
    return EXIT_OK


def cmd_rank(args, config: RunConfig) -> int:
    case = load_case(config.case_path)
    base_file = config.out_path / solution_io.BASE_FILE
    if base_file.exists():
        base = solution_io.read_base_solution(base_file, case)
    else:
        logger.info("No base solution on file, solving the base ACOPF for ranking")
        base = BaseStateBlock(case, config.admm).state()
    frame = ranking_frame(rank(case, base))
    solution_io.write_ranking(config.out_path / solution_io.RANKING_FILE, frame)
    for row in frame.itertuples(index=False):
        print(f"{row.rank} {row.contingency_id} {row.kind} {row.severity:.10g}")
    return EXIT_OK


def cmd_report(args, config: RunConfig) -> int:
    case = load_case(config.case_path)
    summary = summarize_run(config.out_path, case)
    print(f"Case {case.name}")
    for key, value in summary.totals.items():
        print(f"  {key}: {value:.10g}" if isinstance(value, float) else f"  {key}: {value}")
    print(summary.contingencies.to_string(index=False))

    stats = get_report_stats(summary.contingencies)
    logger.debug(f"Report stats: {stats}")

    diagnostics = solution_io.read_diagnostics(config.out_path / solution_io.DIAGNOSTICS_FILE)
    if not diagnostics.empty:
        last = diagnostics.iloc[-1]
        print(
            f"ADMM: {len(diagnostics)} inner iterations, {int(diagnostics['r'].max())} rounds, "
            f"final L={last['al_value']:.10g}, max r_k={last['r_max']:.3e}, "
            f"certificates {'ok' if bool(diagnostics['certificates_ok'].all()) else 'FAILED'}"
        )
    if args.export:
        path = config.out_path / f"report.{args.export}"
        path.write_bytes(export(summary.contingencies, args.export))
        print(f"Exported {path}")
    return EXIT_FALLBACK if summary.totals["fallbacks"] else EXIT_OK


def cmd_dashboard(args) -> int:
    app = Path(__file__).with_name("app.py")
    return subprocess.call(["streamlit", "run", str(app), "--", "--out", args.out])


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.out if args.command not in ("validate", "dashboard") else None, args.verbose)

    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "dashboard":
            return cmd_dashboard(args)

        config = config_from_args(args)
        if args.command == "rank":
            return cmd_rank(args, config)
        if args.command == "report":
            return cmd_report(args, config)
        if args.command == "phase1":
            report = run_phase1(config)
            return EXIT_FALLBACK if report.fallback_used else EXIT_OK
        if args.command == "phase2":
            report = run_phase2(config)
            return EXIT_FALLBACK if report.fallback_used else EXIT_OK
        phase1, phase2 = run_full(config)
        return EXIT_FALLBACK if (phase1.fallback_used or phase2.fallback_used) else EXIT_OK
    except CaseValidationError as e:
        for problem in e.problems:
            logger.error(problem)
        return EXIT_INVALID
    except ValueError as e:
        logger.error(str(e))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
