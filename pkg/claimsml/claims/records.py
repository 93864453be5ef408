"""claimsml: Claims Records

Immutable claim, patient-history and labeled-example types.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator

from claimsml.claims.codes import CodeSystem, MedicalCode


class Sex(str, Enum):
    F = "F"
    M = "M"


class Label(str, Enum):
    HOSPITALIZED = "Hospitalized"
    NOT_HOSPITALIZED = "NotHospitalized"
    INDETERMINATE = "Indeterminate"

    @property
    def as_int(self) -> int:
        if self is Label.INDETERMINATE:
            raise ValueError("Indeterminate has no numeric value")
        return 1 if self is Label.HOSPITALIZED else 0


@dataclass(frozen=True)
class Claim:
    claim_id: str
    service_date: datetime.date
    diagnoses: tuple[MedicalCode, ...] = ()
    procedures: tuple[MedicalCode, ...] = ()
    medications: tuple[MedicalCode, ...] = ()
    primary_diagnosis: MedicalCode | None = None
    is_hospitalization: bool = False

    def __post_init__(self):
        # Accept lists from callers; store tuples.
        for name in ("diagnoses", "procedures", "medications"):
            value = getattr(self, name)
            if not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
        if not (self.diagnoses or self.procedures or self.medications):
            raise ValueError(f"claim {self.claim_id}: at least one code is required")
        for system, codes in (
            (CodeSystem.DIAGNOSIS, self.diagnoses),
            (CodeSystem.PROCEDURE, self.procedures),
            (CodeSystem.MEDICATION, self.medications),
        ):
            for code in codes:
                if code.system is not system:
                    raise ValueError(f"claim {self.claim_id}: {code.value} is not a {system.display} code")
        if self.primary_diagnosis is not None and self.primary_diagnosis not in self.diagnoses:
            raise ValueError(f"claim {self.claim_id}: primary diagnosis {self.primary_diagnosis.value} "
                             "is not among its diagnoses")

    def codes(self) -> Iterator[MedicalCode]:
        """All code occurrences: diagnoses, then procedures, then medications."""
        yield from self.diagnoses
        yield from self.procedures
        yield from self.medications

    @property
    def n_codes(self) -> int:
        return len(self.diagnoses) + len(self.procedures) + len(self.medications)


@dataclass(frozen=True)
class PatientHistory:
    patient_id: str
    age_years: int
    sex: Sex
    claims: tuple[Claim, ...] = ()
    anchor_date: datetime.date | None = None

    def __post_init__(self):
        if not isinstance(self.claims, tuple):
            object.__setattr__(self, "claims", tuple(self.claims))
        if not isinstance(self.sex, Sex):
            object.__setattr__(self, "sex", Sex(self.sex))
        if self.age_years < 0:
            raise ValueError(f"patient {self.patient_id}: age must be >= 0")
        dates = [c.service_date for c in self.claims]
        if dates != sorted(dates):
            raise ValueError(f"patient {self.patient_id}: claims must be sorted by service_date")

    def codes(self) -> Iterator[MedicalCode]:
        for claim in self.claims:
            yield from claim.codes()

    def with_claims(self, claims) -> "PatientHistory":
        return PatientHistory(self.patient_id, self.age_years, self.sex, tuple(claims), self.anchor_date)

    def map_codes(self, fn: Callable[[MedicalCode], MedicalCode | None]) -> "PatientHistory":
        """Apply ``fn`` to every code occurrence; ``None`` drops the occurrence.

        Claims left without codes are dropped. A dropped primary diagnosis
        falls back to the claim's first remaining diagnosis.
        """
        claims = []
        for claim in self.claims:
            dx = [m for m in (fn(c) for c in claim.diagnoses) if m is not None]
            px = [m for m in (fn(c) for c in claim.procedures) if m is not None]
            rx = [m for m in (fn(c) for c in claim.medications) if m is not None]
            if not (dx or px or rx):
                continue
            primary = fn(claim.primary_diagnosis) if claim.primary_diagnosis is not None else None
            if primary is not None and primary not in dx:
                primary = None
            if primary is None and claim.primary_diagnosis is not None and dx:
                primary = dx[0]
            claims.append(Claim(claim.claim_id, claim.service_date, tuple(dx), tuple(px), tuple(rx),
                                primary, claim.is_hospitalization))
        return self.with_claims(claims)


@dataclass(frozen=True)
class LabeledExample:
    history: PatientHistory
    label: Label = field(default=Label.NOT_HOSPITALIZED)

    def __post_init__(self):
        if self.label is Label.INDETERMINATE:
            raise ValueError("indeterminate examples are excluded from the cohort")

    @property
    def y(self) -> int:
        return self.label.as_int
