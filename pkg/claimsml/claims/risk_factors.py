"""claimsml: Risk-factor Mapping

Maps billing codes to named Covid-19 risk factors through inclusive
alphanumeric prefix ranges. A code matches a range (lo, hi) when its leading
characters sort between ``lo`` and ``hi`` at their respective lengths, so
``C00``..``D49`` catches ``C341`` and ``D0900`` but not ``D50``.

The default map is package data (``claimsml/data/risk_factors.tsv``).
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np

from claimsml.claims.codes import CodeSystem, MedicalCode
from claimsml.claims.preprocessing import DEFAULT_AGE_TABLE, AgeBucketTable
from claimsml.claims.records import PatientHistory, Sex
from claimsml.errors import SchemaError

logger = logging.getLogger(__name__)

DEFAULT_RISK_MAP_PATH = Path(__file__).resolve().parent.parent / "data" / "risk_factors.tsv"
DEFAULT_RISK_COUNT = 25

_PREFIX = re.compile(r"^[0-9A-Z]+$")


@dataclass(frozen=True)
class RiskFactorEntry:
    risk_name: str
    system: CodeSystem
    prefix_lo: str
    prefix_hi: str

    def matches(self, code: MedicalCode) -> bool:
        if code.system is not self.system:
            return False
        value = code.value
        return (value[:len(self.prefix_lo)] >= self.prefix_lo
                and value[:len(self.prefix_hi)] <= self.prefix_hi)

    def overlaps(self, other: "RiskFactorEntry") -> bool:
        if other.system is not self.system:
            return False
        n = min(len(self.prefix_lo), len(self.prefix_hi), len(other.prefix_lo), len(other.prefix_hi))
        return self.prefix_lo[:n] <= other.prefix_hi[:n] and other.prefix_lo[:n] <= self.prefix_hi[:n]


class RiskFactorMap:
    """Ordered risk names plus their prefix ranges.

    Risk order is the order of first appearance in the source file and fixes
    the column order of ``map_risk_factors``.
    """

    def __init__(self, entries: Iterable[RiskFactorEntry]):
        self.entries = tuple(entries)
        names: list[str] = []
        for entry in self.entries:
            if entry.risk_name not in names:
                names.append(entry.risk_name)
        self.risk_names = tuple(names)
        self._index = {name: i for i, name in enumerate(self.risk_names)}

    def __len__(self) -> int:
        return len(self.risk_names)

    def __eq__(self, other) -> bool:
        return isinstance(other, RiskFactorMap) and other.entries == self.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    # ── Loading ──────────────────────────────────────────────────────────

    @classmethod
    def load(cls, path: str | Path, expected_count: int | None = None) -> "RiskFactorMap":
        path = Path(path)
        entries: list[RiskFactorEntry] = []
        lines: list[int] = []
        with path.open(encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                text = raw.rstrip("\n").rstrip("\r")
                if not text.strip() or text.lstrip().startswith("#"):
                    continue
                entries.append(_parse_line(text, str(path), lineno))
                lines.append(lineno)
        risk_map = cls(entries)
        risk_map.validate(str(path), lines)
        if expected_count is not None and len(risk_map) != expected_count:
            raise SchemaError(f"expected {expected_count} risk names, found {len(risk_map)}", str(path))
        logger.debug("risk map loaded", extra={"fields": {"path": str(path), "risks": len(risk_map)}})
        return risk_map

    @classmethod
    def default(cls) -> "RiskFactorMap":
        return _default_map()

    def validate(self, path: str | None = None, lines: list[int] | None = None) -> None:
        """Reject ranges that overlap another range of the same risk."""
        for i, a in enumerate(self.entries):
            for j in range(i):
                b = self.entries[j]
                if a.risk_name == b.risk_name and a.overlaps(b):
                    raise SchemaError(
                        f"range {a.prefix_lo}-{a.prefix_hi} overlaps {b.prefix_lo}-{b.prefix_hi} "
                        f"for risk {a.risk_name!r}",
                        path,
                        lines[i] if lines else None,
                    )

    # ── Queries ──────────────────────────────────────────────────────────

    def lookup(self, code: MedicalCode) -> frozenset[str]:
        """Names of every risk whose ranges contain ``code`` (possibly empty)."""
        return frozenset(e.risk_name for e in self.entries if e.matches(code))

    def index_of(self, risk_name: str) -> int:
        return self._index[risk_name]

    def entries_for(self, risk_name: str) -> tuple[RiskFactorEntry, ...]:
        return tuple(e for e in self.entries if e.risk_name == risk_name)

    def fingerprint(self) -> str:
        """SHA-256 over the canonical entry list."""
        digest = hashlib.sha256()
        for e in self.entries:
            digest.update(f"{e.risk_name}\t{e.system.value}\t{e.prefix_lo}\t{e.prefix_hi}\n".encode())
        return digest.hexdigest()


def _parse_line(text: str, path: str, lineno: int) -> RiskFactorEntry:
    cols = text.split("\t")
    if len(cols) != 4:
        raise SchemaError(f"expected 4 tab-separated columns, found {len(cols)}", path, lineno)
    name, system_name, lo, hi = (c.strip() for c in cols)
    if not name:
        raise SchemaError("empty risk_name", path, lineno)
    try:
        system = CodeSystem.parse(system_name)
    except ValueError:
        raise SchemaError(f"unknown code system {system_name!r}", path, lineno) from None
    lo, hi = lo.upper(), hi.upper()
    for value in (lo, hi):
        if not _PREFIX.match(value):
            raise SchemaError(f"prefix {value!r} is not alphanumeric", path, lineno)
    n = min(len(lo), len(hi))
    if lo[:n] > hi[:n]:
        raise SchemaError(f"prefix_lo {lo} sorts after prefix_hi {hi}", path, lineno)
    return RiskFactorEntry(name, system, lo, hi)


@lru_cache(maxsize=1)
def _default_map() -> RiskFactorMap:
    return RiskFactorMap.load(DEFAULT_RISK_MAP_PATH, expected_count=DEFAULT_RISK_COUNT)


def map_risk_factors(
    history: PatientHistory,
    risk_map: RiskFactorMap,
    age_table: AgeBucketTable = DEFAULT_AGE_TABLE,
) -> np.ndarray:
    """Binary risk indicators followed by the age-bucket ordinal and a male indicator."""
    features = np.zeros(len(risk_map) + 2, dtype=np.float64)
    for code in set(history.codes()):
        for name in risk_map.lookup(code):
            features[risk_map.index_of(name)] = 1.0
    features[-2] = age_table.bucket(history.age_years).ordinal
    features[-1] = 1.0 if history.sex is Sex.M else 0.0
    return features


def risk_feature_names(risk_map: RiskFactorMap) -> list[str]:
    return [*risk_map.risk_names, "age_bucket", "sex_male"]
