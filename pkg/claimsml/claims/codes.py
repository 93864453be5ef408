"""claimsml: Medical Code Parsing

Format validation for the three billing code systems carried on a claim:
ICD-10-CM diagnoses, HCPCS/CPT procedures and NDC medications. Validation is
about format only; no code dictionary is consulted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from claimsml.errors import FormatError


class CodeSystem(str, Enum):
    DIAGNOSIS = "dx"
    PROCEDURE = "px"
    MEDICATION = "rx"

    @property
    def display(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, name: str) -> "CodeSystem":
        """Accept the short (``dx``) or long (``diagnosis``) spelling, any case."""
        key = name.strip().lower()
        for system in cls:
            if key in (system.value, system.name.lower()):
                return system
        raise ValueError(f"unknown code system {name!r}")


_DISPLAY = {
    CodeSystem.DIAGNOSIS: "Diagnosis(ICD-10-CM)",
    CodeSystem.PROCEDURE: "Procedure(HCPCS/CPT)",
    CodeSystem.MEDICATION: "Medication(NDC)",
}

# ── Format patterns (applied to normalized values) ──────────────────────────
DIAGNOSIS_PATTERN = re.compile(r"^[A-Z][0-9][0-9A-Z][0-9A-Z]{0,4}$")
PROCEDURE_PATTERN = re.compile(
    r"^(?:[A-Z][0-9]{4}"      # HCPCS Level II, e.g. A7003
    r"|[0-9]{5}"              # CPT, e.g. 99214
    r"|[0-9]{4}[A-Z])$"       # CPT Category II, e.g. 1160F
)
# 10/11-digit package NDC once hyphens are removed.
MEDICATION_PATTERN = re.compile(r"^[0-9]{10,11}$")

PATTERNS = {
    CodeSystem.DIAGNOSIS: DIAGNOSIS_PATTERN,
    CodeSystem.PROCEDURE: PROCEDURE_PATTERN,
    CodeSystem.MEDICATION: MEDICATION_PATTERN,
}

_STRIP = re.compile(r"[\s.\-]")


def normalize_code(raw: str) -> str:
    """Uppercase and drop whitespace, dots and hyphens. Idempotent."""
    return _STRIP.sub("", raw).upper()


@dataclass(frozen=True, order=True)
class MedicalCode:
    system: CodeSystem
    value: str

    @property
    def token(self) -> str:
        """Narrative surface form, e.g. ``DX_R062``."""
        return _TOKEN_PREFIX[self.system] + self.value

    def __str__(self) -> str:
        return self.value


_TOKEN_PREFIX = {
    CodeSystem.DIAGNOSIS: "DX_",
    CodeSystem.PROCEDURE: "PX_",
    CodeSystem.MEDICATION: "RX_",
}


def parse_code(system: CodeSystem | str, raw: str) -> MedicalCode:
    """Normalize ``raw`` and validate it against ``system``'s format.

    Raises FormatError naming the pattern and the offending input.
    """
    if not isinstance(system, CodeSystem):
        system = CodeSystem.parse(system)
    pattern = PATTERNS[system]
    if raw is None or not str(raw).strip():
        raise FormatError(system.display, "" if raw is None else str(raw), pattern.pattern)
    value = normalize_code(str(raw))
    if not pattern.match(value):
        raise FormatError(system.display, str(raw), pattern.pattern)
    return MedicalCode(system, value)


def is_valid_code(system: CodeSystem, raw: str) -> bool:
    try:
        parse_code(system, raw)
    except FormatError:
        return False
    return True


def code_from_token(surface: str) -> MedicalCode:
    """Inverse of ``MedicalCode.token`` for code tokens."""
    for system, prefix in _TOKEN_PREFIX.items():
        if surface.startswith(prefix):
            return parse_code(system, surface[len(prefix):])
    raise ValueError(f"{surface!r} is not a code token")
