"""
Chargement des fichiers de cas réseau (JSON, unités physiques) depuis un chemin local ou une URL.

Le fichier utilise MW, MVAr, MVA, $/MW et des impédances en per-unit ; tout est converti en
per-unit sur s_base au chargement. Voir docs/case_format.md.

Features:
- Téléchargement http(s) avec retry et backoff exponentiel
- Conversion MW -> p.u. des bornes, charges, limites et coûts
- Tables de pénalité par défaut si absentes
"""

import json
import logging
import math
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Union

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from ..core.network import (
    Bus,
    ContingencyDef,
    Generator,
    Line,
    NetworkCase,
    PenaltyTables,
    PwlCost,
    Transformer,
)

logger = logging.getLogger(__name__)

BUNDLED_CASES = ("case5",)


# ==============================================================================
# REMOTE SOURCE
# ==============================================================================

class CaseSource:
    """
    Source de fichiers de cas : chemin local, URL http(s) ou cas embarqué (`bundled:case5`).
    """

    DEFAULT_TIMEOUT = 30

    def __init__(self, timeout: int = DEFAULT_TIMEOUT):
        self.timeout = timeout
        self.session = requests.Session()

        retry_strategy = Retry(
            total=5,
            backoff_factor=2,
            status_forcelist=[429, 500, 502, 503, 504],
            allowed_methods=["GET"],
        )
        adapter = HTTPAdapter(max_retries=retry_strategy, pool_connections=4, pool_maxsize=4)
        self.session.mount("http://", adapter)
        self.session.mount("https://", adapter)

    def fetch(self, location: Union[str, Path]) -> Dict[str, Any]:
        """
        Lit le JSON brut d'un cas.

        Raises:
            ValueError: Fichier introuvable, téléchargement en échec ou JSON invalide
        """
        location = str(location)
        if location.startswith(("http://", "https://")):
            return self._download(location)
        if location.startswith("bundled:"):
            name = location.split(":", 1)[1]
            if name not in BUNDLED_CASES:
                raise ValueError(f"Unknown bundled case '{name}' (available: {', '.join(BUNDLED_CASES)})")
            text = resources.files("scacopf").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
            return self._parse(text, location)
        path = Path(location)
        if not path.exists():
            raise ValueError(f"Case file not found: {path}")
        return self._parse(path.read_text(encoding="utf-8"), location)

    def _download(self, url: str) -> Dict[str, Any]:
        try:
            logger.info(f"Downloading case from {url}")
            response = self.session.get(url, timeout=self.timeout)
            response.raise_for_status()
        except requests.exceptions.Timeout as e:
            logger.error(f"Case download timed out after {self.timeout}s: {e}")
            raise ValueError(f"Case download timed out: {url}") from e
        except requests.exceptions.HTTPError as e:
            logger.error(f"Case download failed with HTTP {e.response.status_code}: {e}")
            raise ValueError(f"Case download failed ({e.response.status_code}): {url}") from e
        except requests.exceptions.RequestException as e:
            logger.error(f"Case download error: {e}")
            raise ValueError(f"Case download error: {url}") from e
        return self._parse(response.text, url)

    @staticmethod
    def _parse(text: str, origin: str) -> Dict[str, Any]:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValueError(f"{origin}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ValueError(f"{origin}: case file must hold a JSON object")
        return data


# ==============================================================================
# CONVERSION
# ==============================================================================

def _pwl(raw: Dict[str, Any], s_base: float, what: str) -> PwlCost:
    try:
        lengths = [math.inf if v is None else float(v) for v in raw["lengths"]]
        return PwlCost(tuple(lengths), tuple(raw["slopes"])).scaled(1.0 / s_base, s_base)
    except KeyError as e:
        raise ValueError(f"{what}: missing cost field {e}") from e


def _penalties(raw: Optional[Dict[str, Any]], s_base: float) -> Optional[PenaltyTables]:
    if raw is None:
        return None
    default = PenaltyTables.default(s_base)
    tables = {
        name: _pwl(raw[name], s_base, f"penalty '{name}'") if name in raw else getattr(default, name)
        for name in ("p", "q", "s_line", "s_transformer")
    }
    return PenaltyTables(**tables)


def _admittance(raw: Dict[str, Any], what: str):
    if "g" in raw and "b" in raw:
        return float(raw["g"]), float(raw["b"])
    r, x = float(raw.get("r", 0.0)), float(raw.get("x", 0.0))
    z2 = r * r + x * x
    if z2 <= 0:
        raise ValueError(f"{what}: need (g, b) or a nonzero (r, x)")
    return r / z2, -x / z2


def case_from_dict(data: Dict[str, Any]) -> NetworkCase:
    """
    Construit un NetworkCase (per-unit) à partir du JSON en unités physiques.

    Raises:
        ValueError: Champ manquant ou cas invalide (CaseValidationError)
    """
    try:
        s_base = float(data.get("s_base", 100.0))
        pu = 1.0 / s_base
        buses = [
            Bus(b["id"], float(b["v_lo"]), float(b["v_hi"]),
                float(b.get("load_p", 0.0)) * pu, float(b.get("load_q", 0.0)) * pu)
            for b in data["buses"]
        ]
        generators = [
            Generator(
                g["id"], g["bus"],
                float(g["p_lo"]) * pu, float(g["p_hi"]) * pu,
                float(g["q_lo"]) * pu, float(g["q_hi"]) * pu,
                float(g.get("alpha", 0.0)),
                _pwl(g["cost"], s_base, f"generator '{g['id']}'"),
            )
            for g in data["generators"]
        ]
        lines = []
        for e in data.get("lines", []):
            g, b = _admittance(e, f"line '{e['id']}'")
            rate = float(e["rate_base"]) * pu
            lines.append(Line(
                e["id"], e["from"], e["to"], g, b, float(e.get("b_ch", 0.0)),
                rate, float(e.get("rate_ctg", e["rate_base"])) * pu,
            ))
        transformers = []
        for x in data.get("transformers", []):
            g, b = _admittance(x, f"transformer '{x['id']}'")
            rate = float(x["rate_base"]) * pu
            transformers.append(Transformer(
                x["id"], x["from"], x["to"], g, b, float(x.get("b_ch", 0.0)),
                float(x.get("tap", 1.0)), math.radians(float(x.get("shift", 0.0))),
                rate, float(x.get("rate_ctg", x["rate_base"])) * pu,
            ))
        contingencies = [ContingencyDef(c["id"], c["kind"], c["element"]) for c in data.get("contingencies", [])]
        penalties = _penalties(data.get("penalties"), s_base) or PenaltyTables.default(s_base)
        ctg_penalties = _penalties(data.get("ctg_penalties"), s_base)
    except KeyError as e:
        raise ValueError(f"Case file misses required field {e}") from e
    except (TypeError, AttributeError) as e:
        raise ValueError(f"Case file has a malformed entry: {e}") from e

    case = NetworkCase(
        buses=buses,
        generators=generators,
        lines=lines,
        transformers=transformers,
        contingencies=contingencies,
        s_base=s_base,
        penalty_tables=penalties,
        delta_weight=float(data.get("delta_weight", 0.5)),
        name=str(data.get("name", "case")),
        ctg_penalty_tables=ctg_penalties,
    )
    logger.info(
        f"Loaded case '{case.name}': {case.n_bus} buses, {case.n_gen} generators, "
        f"{len(lines)} lines, {len(transformers)} transformers, {case.n_ctg} contingencies"
    )
    return case


def load_case(location: Union[str, Path], source: Optional[CaseSource] = None) -> NetworkCase:
    """
    Charge et valide un cas réseau.

    Args:
        location: Chemin local, URL http(s) ou `bundled:<nom>`
        source: Source à utiliser (défaut : CaseSource())

    Raises:
        ValueError: Cas introuvable ou invalide
    """
    return case_from_dict((source or CaseSource()).fetch(location))
