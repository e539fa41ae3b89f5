"""
Application Streamlit - Tableau de bord SCACOPF.

Lance une exécution (phase I + phase II) ou relit un répertoire de sortie, et affiche la
convergence de l'ADMM, le classement des contingences et leurs pénalités.
"""

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path

import pandas as pd
import streamlit as st

from scacopf.api.case_source import load_case
from scacopf.core.pipeline import RunConfig, run_full, summarize_run
from scacopf.utils import solution_io
from scacopf.utils.export import EXPORT_FORMATS, export, get_report_stats, report_workbook

_MIME_TYPES = {
    "csv": "text/csv",
    "xlsx": "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
    "json": "application/json",
    "parquet": "application/octet-stream",
}


def _default_out_dir() -> str:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--out", default="out")
    args, _ = parser.parse_known_args(sys.argv[1:])
    return args.out


# ============================================================
# LOGGING CONFIGURATION
# ============================================================

_LOG_DIR = Path(_default_out_dir())
_LOG_DIR.mkdir(parents=True, exist_ok=True)

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[
        logging.StreamHandler(),
        logging.FileHandler(_LOG_DIR / "scacopf.log"),
    ],
)

logger = logging.getLogger(__name__)


# ============================================================
# STATE MANAGEMENT
# ============================================================

class AppState:
    """Gère l'état global de l'application."""

    STEP_CONFIG = 1
    STEP_RUN = 2
    STEP_RESULT = 3

    @staticmethod
    def init():
        if "app_state" not in st.session_state:
            out_dir = _default_out_dir()
            has_results = (Path(out_dir) / solution_io.CTG_FILE).exists()
            st.session_state.app_state = {
                "current_step": AppState.STEP_RESULT if has_results else AppState.STEP_CONFIG,
                "run_logs": [],
                "config": {
                    "case": "bundled:case5",
                    "out_dir": out_dir,
                    "workers": 1,
                    "time_limit": 120.0,
                    "ctg_time": 2.0,
                },
            }

    @staticmethod
    def get(key):
        return st.session_state.app_state.get(key)

    @staticmethod
    def set(key, value):
        st.session_state.app_state[key] = value

    @staticmethod
    def update_config(key, value):
        st.session_state.app_state["config"][key] = value

    @staticmethod
    def set_step(step):
        st.session_state.app_state["current_step"] = step


# ============================================================
# UI COMPONENTS
# ============================================================

def render_sidebar():
    with st.sidebar:
        st.title("⚡ SCACOPF")
        config = AppState.get("config")
        case = st.text_input("Fichier de cas", value=config["case"])
        out_dir = st.text_input("Répertoire de sortie", value=config["out_dir"])
        AppState.update_config("case", case)
        AppState.update_config("out_dir", out_dir)

        st.markdown("---")
        if st.button("⚙️ Nouvelle exécution", use_container_width=True):
            AppState.set_step(AppState.STEP_CONFIG)
        if st.button("📂 Relire les résultats", use_container_width=True):
            AppState.set_step(AppState.STEP_RESULT)


def render_config():
    st.header("1️⃣ Configuration")
    config = AppState.get("config")
    c1, c2, c3 = st.columns(3)
    AppState.update_config("workers", c1.number_input("Workers", 1, 64, int(config["workers"])))
    AppState.update_config(
        "time_limit", c2.number_input("Limite phase I (s)", 1.0, 7200.0, float(config["time_limit"]))
    )
    AppState.update_config(
        "ctg_time", c3.number_input("Budget par contingence (s)", 0.1, 600.0, float(config["ctg_time"]))
    )
    if st.button("🚀 Lancer", type="primary"):
        AppState.set_step(AppState.STEP_RUN)
        st.rerun()


def run_process():
    st.header("2️⃣ Exécution en cours...")
    config = AppState.get("config")
    progress_bar = st.progress(0)
    status_text = st.empty()
    with st.expander("📋 Logs en temps réel", expanded=True):
        log_area = st.empty()
    logs = []

    def progress_callback(pct, msg):
        progress_bar.progress(min(max(pct, 0), 100) / 100)
        status_text.markdown(f"**{msg}**")
        logs.append(f"[{datetime.now().strftime('%H:%M:%S')}] {msg}")
        log_area.code("\n".join(logs[-20:]), language="log")

    try:
        run_config = RunConfig(
            case_path=config["case"], out_dir=config["out_dir"], workers=int(config["workers"]),
            phase1_time_limit=float(config["time_limit"]), ctg_time_limit=float(config["ctg_time"]),
        )
        run_full(run_config, progress_callback=progress_callback)
        logger.info(f"Dashboard run finished, results in {config['out_dir']}")
        AppState.set("run_logs", logs)
        AppState.set_step(AppState.STEP_RESULT)
        st.rerun()
    except Exception as e:
        logger.error(f"Dashboard run failed: {e}")
        st.error(f"Une erreur est survenue : {str(e)}")
        st.exception(e)


def render_result():
    st.header("3️⃣ Résultats")
    config = AppState.get("config")
    out = Path(config["out_dir"])
    try:
        case = load_case(config["case"])
        summary = summarize_run(out, case)
    except ValueError as e:
        st.warning(f"Aucun résultat exploitable dans {out} : {e}")
        return

    run_logs = AppState.get("run_logs")
    if run_logs:
        with st.expander("📋 Logs d'exécution", expanded=False):
            st.code("\n".join(run_logs), language="log")

    stats = get_report_stats(summary.contingencies)
    c1, c2, c3, c4 = st.columns(4)
    c1.metric("Objectif", f"{summary.totals['objective']:.6g}")
    c2.metric("Coût de production", f"{summary.totals['generation_cost']:.6g}")
    c3.metric("Contingences", stats["nb_contingences"])
    c4.metric("Replis", summary.totals["fallbacks"])

    diagnostics = solution_io.read_diagnostics(out / solution_io.DIAGNOSTICS_FILE)
    ranking_file = out / solution_io.RANKING_FILE
    ranking = solution_io.read_ranking(ranking_file) if ranking_file.exists() else pd.DataFrame()

    tab1, tab2, tab3, tab4 = st.tabs(["📈 ADMM", "🏷️ Classement", "🛠️ Contingences", "💾 Export"])
    with tab1:
        if diagnostics.empty:
            st.info("Pas de diagnostics ADMM dans ce répertoire.")
        else:
            st.subheader("Lagrangien augmenté")
            st.line_chart(diagnostics.set_index("t")[["al_value"]])
            st.subheader("Résidus")
            st.line_chart(diagnostics.set_index("t")[["s_max", "r_max"]])
            if not bool(diagnostics["certificates_ok"].all()):
                st.warning("Certains certificats de descente ont échoué.")
    with tab2:
        st.dataframe(ranking, use_container_width=True)
    with tab3:
        st.dataframe(summary.contingencies, use_container_width=True)
        if not summary.contingencies.empty:
            st.bar_chart(summary.contingencies.set_index("contingency_id")[["penalty"]])
    with tab4:
        filename = f"scacopf_{case.name}_{datetime.now().strftime('%Y%m%d_%H%M')}"
        st.caption("Le classeur Excel regroupe le bilan, le classement et les diagnostics ADMM.")
        for column, fmt in zip(st.columns(len(EXPORT_FORMATS)), EXPORT_FORMATS):
            if fmt == "xlsx":
                data = report_workbook(summary.contingencies, ranking, diagnostics)
            else:
                data = export(summary.contingencies, fmt)
            column.download_button(
                f"📥 {fmt.upper()}", data=data, file_name=f"{filename}.{fmt}",
                mime=_MIME_TYPES[fmt], use_container_width=True,
            )


# ============================================================
# MAIN
# ============================================================

def main():
    st.set_page_config(page_title="SCACOPF", page_icon="⚡", layout="wide")
    AppState.init()
    render_sidebar()
    st.markdown("<h1>⚡ SCACOPF</h1>", unsafe_allow_html=True)

    step = AppState.get("current_step")
    if step == AppState.STEP_CONFIG:
        render_config()
    elif step == AppState.STEP_RUN:
        run_process()
    elif step == AppState.STEP_RESULT:
        render_result()


if __name__ == "__main__":
    main()
