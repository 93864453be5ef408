"""claimsml: Corpus Store

JSON Lines persistence for patient histories. One object per line:

    {"patient_id": ..., "age": ..., "sex": "F"|"M", "anchor_date": "YYYY-MM-DD"|null,
     "claims": [{"claim_id", "service_date", "is_hospitalization", "primary_dx",
                 "dx": [...], "px": [...], "rx": [...]}]}

Reading is streaming; writing is byte-stable for equal records.
"""

from __future__ import annotations

import datetime
import json
import logging
from pathlib import Path
from typing import Iterable, Iterator

from claimsml.claims.codes import CodeSystem, parse_code
from claimsml.claims.records import Claim, PatientHistory, Sex
from claimsml.errors import ArtifactError, FormatError, SchemaError

logger = logging.getLogger(__name__)


def history_to_dict(history: PatientHistory) -> dict:
    """JSON-serialisable form of one history, keys in schema order."""
    return {
        "patient_id": history.patient_id,
        "age": history.age_years,
        "sex": history.sex.value,
        "anchor_date": history.anchor_date.isoformat() if history.anchor_date else None,
        "claims": [
            {
                "claim_id": c.claim_id,
                "service_date": c.service_date.isoformat(),
                "is_hospitalization": c.is_hospitalization,
                "primary_dx": c.primary_diagnosis.value if c.primary_diagnosis else None,
                "dx": [code.value for code in c.diagnoses],
                "px": [code.value for code in c.procedures],
                "rx": [code.value for code in c.medications],
            }
            for c in history.claims
        ],
    }


def _date(value, field: str) -> datetime.date:
    if not isinstance(value, str):
        raise ValueError(f"{field} must be an ISO date string")
    return datetime.date.fromisoformat(value)


def _flag(value, field: str) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"{field} must be a JSON boolean")
    return value


def _codes(obj: dict, key: str, system: CodeSystem) -> list:
    values = obj.get(key, [])
    if not isinstance(values, list):
        raise ValueError(f"{key} must be a list")
    return [parse_code(system, v) for v in values]


def history_from_dict(obj: dict) -> PatientHistory:
    """Inverse of ``history_to_dict``; raises ValueError/KeyError/FormatError on bad input."""
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    claims = []
    for c in obj["claims"]:
        primary = c.get("primary_dx")
        claims.append(Claim(
            claim_id=str(c["claim_id"]),
            service_date=_date(c["service_date"], "service_date"),
            diagnoses=_codes(c, "dx", CodeSystem.DIAGNOSIS),
            procedures=_codes(c, "px", CodeSystem.PROCEDURE),
            medications=_codes(c, "rx", CodeSystem.MEDICATION),
            primary_diagnosis=parse_code(CodeSystem.DIAGNOSIS, primary) if primary else None,
            is_hospitalization=_flag(c.get("is_hospitalization", False), "is_hospitalization"),
        ))
    age = obj["age"]
    if not isinstance(age, int) or isinstance(age, bool):
        raise ValueError("age must be an integer")
    anchor = obj.get("anchor_date")
    return PatientHistory(
        patient_id=str(obj["patient_id"]),
        age_years=age,
        sex=Sex(obj["sex"]),
        claims=tuple(claims),
        anchor_date=_date(anchor, "anchor_date") if anchor is not None else None,
    )


def load_claims_corpus(path: str | Path) -> Iterator[PatientHistory]:
    """Stream histories from a JSONL corpus; blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(path, "corpus not found")
    with path.open("rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise SchemaError(f"invalid UTF-8 at byte {e.start}", str(path), lineno) from None
            if not line.strip():
                continue
            try:
                yield history_from_dict(json.loads(line))
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON: {e.msg}", str(path), lineno) from None
            except KeyError as e:
                raise SchemaError(f"missing field {e.args[0]!r}", str(path), lineno) from None
            except (TypeError, ValueError, FormatError) as e:
                raise SchemaError(str(e), str(path), lineno) from None


def save_claims_corpus(records: Iterable[PatientHistory], path: str | Path) -> int:
    """Write histories as JSONL; returns the number of records written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(history_to_dict(record), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
            n += 1
    logger.info("corpus written", extra={"fields": {"path": str(path), "records": n}})
    return n
