"""
Export des tableaux d'une exécution : bilan des contingences, classement, diagnostics ADMM.

Formats : CSV, classeur Excel (une feuille par tableau), JSON (records), Parquet.
"""

import functools
import logging
from io import BytesIO
from typing import Callable, Dict, Mapping, Optional, Union

import pandas as pd
from openpyxl.utils import get_column_letter

logger = logging.getLogger(__name__)

EXPORT_FORMATS = ("csv", "xlsx", "json", "parquet")

# Excel : 31 caractères max par nom de feuille
_SHEET_NAME_MAX = 31
_COLUMN_WIDTH_MAX = 50

Tables = Union[pd.DataFrame, Mapping[str, pd.DataFrame]]


def _as_sheets(tables: Tables, default_name: str = "Report") -> Dict[str, pd.DataFrame]:
    if isinstance(tables, pd.DataFrame):
        return {default_name: tables}
    return {str(name)[:_SHEET_NAME_MAX]: frame for name, frame in tables.items()}


def _logged(fmt: str) -> Callable:
    """Trace la taille exportée, ou l'erreur avant de la relancer."""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(tables, *args, **kwargs):
            try:
                data = func(tables, *args, **kwargs)
            except Exception as e:
                logger.error(f"Error exporting to {fmt}: {e}")
                raise
            sheets = _as_sheets(tables)
            rows = sum(len(frame) for frame in sheets.values())
            logger.info(f"Exported {fmt}: {rows} rows in {len(sheets)} table(s), {len(data)} bytes")
            return data

        return wrapper

    return decorator


@_logged("CSV")
def to_csv(df: pd.DataFrame) -> bytes:
    """Bilan en CSV UTF-8, sans index."""
    return df.to_csv(index=False).encode("utf-8")


def _autofit(worksheet, frame: pd.DataFrame) -> None:
    for col_idx, column in enumerate(frame.columns, start=1):
        cells = frame[column].astype(str).str.len()
        width = max(int(cells.max()) if len(cells) else 0, len(str(column)))
        worksheet.column_dimensions[get_column_letter(col_idx)].width = min(width, _COLUMN_WIDTH_MAX) + 2


@_logged("Excel")
def to_excel(tables: Tables) -> bytes:
    """
    Classeur Excel, une feuille par tableau.

    Args:
        tables: DataFrame unique (feuille `Report`) ou dict nom de feuille -> DataFrame

    Returns:
        Bytes du fichier .xlsx (en-têtes figés, largeurs ajustées)
    """
    buffer = BytesIO()
    with pd.ExcelWriter(buffer, engine="openpyxl") as writer:
        for name, frame in _as_sheets(tables).items():
            frame.to_excel(writer, sheet_name=name, index=False)
            worksheet = writer.sheets[name]
            worksheet.freeze_panes = "A2"
            _autofit(worksheet, frame)
    return buffer.getvalue()


@_logged("JSON")
def to_json(df: pd.DataFrame) -> str:
    return df.to_json(orient="records", indent=2, force_ascii=False)


@_logged("Parquet")
def to_parquet(df: pd.DataFrame) -> bytes:
    buffer = BytesIO()
    df.to_parquet(buffer, engine="pyarrow", index=False)
    return buffer.getvalue()


_WRITERS: Dict[str, Callable[[pd.DataFrame], Union[bytes, str]]] = {
    "csv": to_csv,
    "xlsx": to_excel,
    "json": to_json,
    "parquet": to_parquet,
}


def export(df: pd.DataFrame, fmt: str) -> bytes:
    """
    Exporte dans l'un des formats EXPORT_FORMATS.

    Raises:
        ValueError: Format inconnu
    """
    if fmt not in _WRITERS:
        raise ValueError(f"Unknown export format '{fmt}' (expected one of {', '.join(EXPORT_FORMATS)})")
    data = _WRITERS[fmt](df)
    return data.encode("utf-8") if isinstance(data, str) else data


def report_workbook(
    summary: pd.DataFrame,
    ranking: Optional[pd.DataFrame] = None,
    diagnostics: Optional[pd.DataFrame] = None,
) -> bytes:
    """Classeur complet d'une exécution ; les tableaux absents ou vides sont omis."""
    sheets = {"Contingences": summary}
    if ranking is not None and not ranking.empty:
        sheets["Classement"] = ranking
    if diagnostics is not None and not diagnostics.empty:
        sheets["ADMM"] = diagnostics
    return to_excel(sheets)


def get_report_stats(summary: pd.DataFrame) -> dict:
    """
    Statistiques d'un bilan des contingences (colonnes penalty, et si présentes path, wall_time).

    Returns:
        Dict : nombre de contingences, pénalités totale / moyenne / max, répartition par chemin,
        nombre de replis, temps max
    """
    if summary.empty:
        logger.warning("get_report_stats called on empty DataFrame")
        return {"nb_contingences": 0, "penalite_totale": 0.0, "penalite_moyenne": 0.0}

    penalty = summary["penalty"].astype(float)
    stats = {
        "nb_contingences": len(summary),
        "penalite_totale": float(penalty.sum()),
        "penalite_moyenne": float(penalty.mean()),
        "penalite_max": float(penalty.max()),
    }
    if "path" in summary.columns:
        counts = summary["path"].astype(str).value_counts().sort_index()
        stats["par_chemin"] = {path: int(n) for path, n in counts.items()}
        stats["nb_repli"] = int(counts.get("fallback", 0))
    if "wall_time" in summary.columns:
        stats["temps_max_s"] = float(summary["wall_time"].max())

    logger.debug(f"Report stats: {stats}")
    return stats
