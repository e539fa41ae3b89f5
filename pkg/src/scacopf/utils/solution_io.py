"""
Fichiers de sortie texte : solution du cas de base, solutions des contingences, classement et
diagnostics ADMM.

Format ligne à ligne, sections introduites par `--<nom>`, une ligne d'en-tête de colonnes puis
une ligne par équipement (identifiants sans espaces). Les réels sont écrits en représentation
exacte (repr), donc deux exécutions identiques produisent des fichiers identiques octet à octet.
Toute écriture passe par un fichier temporaire renommé (remplacement atomique).
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import pandas as pd

from ..core.network import NetworkCase
from ..core.power_flow import BranchArrays
from ..core.state import BUS_FIELDS, GEN_FIELDS, StateVector

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BASE_FILE = "base_solution.txt"
CTG_FILE = "ctg_solutions.txt"
RANKING_FILE = "ranking.txt"
DIAGNOSTICS_FILE = "diagnostics.jsonl"
SUMMARY_FILE = "ctg_summary.csv"


def write_text_atomic(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path


def _num(x: float) -> str:
    return repr(float(x))


# ==============================================================================
# STATE SECTIONS
# ==============================================================================

def _render_state(case: NetworkCase, k: int, sv: StateVector) -> List[str]:
    sv.check_dimensions(case, k)
    topo = case.topology(k)
    lines = ["--bus", "id " + " ".join(BUS_FIELDS)]
    for i, bus in enumerate(case.buses):
        lines.append(" ".join([bus.id] + [_num(getattr(sv, f)[i]) for f in BUS_FIELDS]))
    lines += ["--generator", "id " + " ".join(GEN_FIELDS)]
    for j, g in enumerate(topo.gen_idx):
        lines.append(" ".join([case.generators[g].id, _num(sv.p[j]), _num(sv.q[j])]))
    lines += ["--branch", "id sigma_s"]
    for e, bid in enumerate(BranchArrays.for_state(case, k).ids):
        lines.append(f"{bid} {_num(sv.sigma_s[e])}")
    lines += ["--delta", _num(sv.delta)]
    return lines


def _parse_state(case: NetworkCase, k: int, lines: Sequence[str]) -> StateVector:
    """
    Raises:
        ValueError: Section manquante, équipement inconnu ou absent
    """
    sections: Dict[str, List[str]] = {}
    current = None
    for line in lines:
        if line.startswith("--"):
            current = line[2:].strip()
            sections[current] = []
        elif current is not None and line.strip():
            sections[current].append(line)
    missing = {"bus", "generator", "branch", "delta"} - set(sections)
    if missing:
        raise ValueError(f"Solution for state {k} misses section(s) {sorted(missing)}")

    def table(name: str, ids: Sequence[str]) -> Dict[str, List[float]]:
        rows = {}
        for line in sections[name][1:]:
            parts = line.split()
            rows[parts[0]] = [float(x) for x in parts[1:]]
        unknown = set(rows) - set(ids)
        absent = [i for i in ids if i not in rows]
        if unknown or absent:
            raise ValueError(
                f"State {k}, section {name}: unknown {sorted(unknown)}, missing {absent}"
            )
        return rows

    sv = StateVector.zeros(case, k)
    buses = table("bus", [b.id for b in case.buses])
    for i, bus in enumerate(case.buses):
        for f, value in zip(BUS_FIELDS, buses[bus.id]):
            getattr(sv, f)[i] = value
    topo = case.topology(k)
    gen_ids = [case.generators[g].id for g in topo.gen_idx]
    gens = table("generator", gen_ids)
    sv.p[:] = [gens[g][0] for g in gen_ids]
    sv.q[:] = [gens[g][1] for g in gen_ids]
    branch_ids = list(BranchArrays.for_state(case, k).ids)
    branches = table("branch", branch_ids)
    sv.sigma_s[:] = [branches[b][0] for b in branch_ids]
    sv.delta = float(sections["delta"][0])
    return sv


# ==============================================================================
# BASE SOLUTION
# ==============================================================================

def write_base_solution(path: PathLike, case: NetworkCase, base: StateVector) -> Path:
    """Écrit la solution du cas de base (remplacement atomique)."""
    text = "\n".join(["# scacopf base solution", f"case {case.name}"] + _render_state(case, 0, base))
    out = write_text_atomic(path, text + "\n")
    logger.debug(f"Base solution written to {out}")
    return out


def read_base_solution(path: PathLike, case: NetworkCase) -> StateVector:
    """
    Raises:
        ValueError: Fichier absent ou invalide
    """
    path = Path(path)
    if not path.exists():
        raise ValueError(f"Base solution file not found: {path}")
    return _parse_state(case, 0, path.read_text(encoding="utf-8").splitlines())


# ==============================================================================
# CONTINGENCY SOLUTIONS
# ==============================================================================

@dataclass(frozen=True)
class ContingencyRecord:
    """Solution de contingence telle qu'écrite (sans temps de calcul)."""

    k: int
    contingency_id: str
    path: str
    penalty: float
    state: StateVector


def render_contingency(case: NetworkCase, record: ContingencyRecord) -> List[str]:
    header = (
        f"--contingency {record.contingency_id} k={record.k} path={record.path} "
        f"penalty={_num(record.penalty)}"
    )
    return [header] + _render_state(case, record.k, record.state) + ["--end"]


def write_ctg_solutions(path: PathLike, case: NetworkCase, records: Iterable[ContingencyRecord]) -> Path:
    """Écrit toutes les solutions, triées par k."""
    lines = ["# scacopf contingency solutions", f"case {case.name}"]
    for record in sorted(records, key=lambda r: r.k):
        lines += render_contingency(case, record)
    return write_text_atomic(path, "\n".join(lines) + "\n")


def read_ctg_solutions(path: PathLike, case: NetworkCase) -> Dict[int, ContingencyRecord]:
    """
    Raises:
        ValueError: Fichier absent, bloc mal formé ou contingence inconnue
    """
    path = Path(path)
    if not path.exists():
        raise ValueError(f"Contingency solution file not found: {path}")
    records: Dict[int, ContingencyRecord] = {}
    block: List[str] = []
    header = None
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("--contingency"):
            header, block = line.split()[1:], []
        elif line.startswith("--end"):
            if header is None:
                raise ValueError(f"{path}: '--end' without a contingency header")
            meta = dict(part.split("=", 1) for part in header[1:])
            ctg_id, k = header[0], int(meta["k"])
            if case.contingency_index.get(ctg_id) != k:
                raise ValueError(f"{path}: contingency {ctg_id} does not match state {k}")
            records[k] = ContingencyRecord(
                k, ctg_id, meta["path"], float(meta["penalty"]), _parse_state(case, k, block)
            )
            header = None
        elif header is not None:
            block.append(line)
    return records


class ContingencySolutionWriter:
    """
    Writer de la phase II : garde la dernière solution reçue par contingence et réécrit le
    fichier complet (trié par k) à chaque lot. Le fichier contient toujours une solution par
    contingence dès que les solutions par défaut ont été écrites.
    """

    def __init__(self, path: PathLike, case: NetworkCase):
        self.path = Path(path)
        self.case = case
        self.records: Dict[int, ContingencyRecord] = {}
        self.results: Dict[int, Any] = {}
        self.written = 0
        self.batches = 0

    def __call__(self, batch) -> None:
        records, results = dict(self.records), dict(self.results)
        for message in batch:
            result = message.record
            results[message.k] = result
            records[message.k] = ContingencyRecord(
                message.k, message.contingency_id, result.path.value, result.penalty, result.state
            )
        write_ctg_solutions(self.path, self.case, records.values())
        # état mis à jour seulement une fois le fichier remplacé
        self.records, self.results = records, results
        self.written += len(batch)
        self.batches += 1
        logger.debug(f"Writer flushed {len(batch)} solutions ({len(self.records)} contingencies on file)")


# ==============================================================================
# RANKING AND DIAGNOSTICS
# ==============================================================================

def write_ranking(path: PathLike, ranking: pd.DataFrame) -> Path:
    """Une ligne par contingence : rang, identifiant, type, sévérité, drapeau."""
    lines = [
        f"{int(row.rank)} {row.contingency_id} {row.kind} {_num(row.severity)} {int(bool(row.flagged))}"
        for row in ranking.itertuples(index=False)
    ]
    return write_text_atomic(path, "\n".join(lines) + ("\n" if lines else ""))


def read_ranking(path: PathLike) -> pd.DataFrame:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        rank, ctg_id, kind, severity, flagged = line.split()
        rows.append({
            "contingency_id": ctg_id, "kind": kind, "severity": float(severity),
            "rank": int(rank), "flagged": bool(int(flagged)),
        })
    return pd.DataFrame(rows, columns=["contingency_id", "kind", "severity", "rank", "flagged"])


def write_diagnostics(path: PathLike, frame: pd.DataFrame) -> Path:
    """Diagnostics ADMM, une ligne JSON par itération interne."""
    text = frame.to_json(orient="records", lines=True) if not frame.empty else ""
    return write_text_atomic(path, text if text.endswith("\n") or not text else text + "\n")


def read_diagnostics(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.exists() or not path.read_text(encoding="utf-8").strip():
        return pd.DataFrame()
    return pd.read_json(path, orient="records", lines=True)
