"""claimsml: Cohort Preprocessing

Leakage filter, hospitalization labeling and age discretization. All
functions are pure; dates are calendar dates.
"""

from __future__ import annotations

import datetime
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from claimsml import config
from claimsml.claims.codes import CodeSystem, MedicalCode, parse_code
from claimsml.claims.records import Claim, Label, LabeledExample, PatientHistory

logger = logging.getLogger(__name__)


# ── Age buckets ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class AgeBucket:
    ordinal: int
    lower: int
    upper: int | None   # inclusive; None for the open-ended last bucket

    @property
    def name(self) -> str:
        if self.upper is None:
            return f"{self.lower}+"
        return f"{self.lower}-{self.upper}"

    def contains(self, age_years: int) -> bool:
        return age_years >= self.lower and (self.upper is None or age_years <= self.upper)


class AgeBucketTable:
    """Partition of [0, inf) into integer-year buckets given their lower bounds."""

    def __init__(self, lower_bounds: Sequence[int] = config.AGE_BUCKET_LOWER_BOUNDS):
        bounds = tuple(int(b) for b in lower_bounds)
        if not bounds or bounds[0] != 0:
            raise ValueError("age bucket table must start at 0")
        if list(bounds) != sorted(set(bounds)):
            raise ValueError("age bucket lower bounds must be strictly increasing")
        self.lower_bounds = bounds
        self.buckets = tuple(
            AgeBucket(i, lo, (bounds[i + 1] - 1) if i + 1 < len(bounds) else None)
            for i, lo in enumerate(bounds)
        )

    def __len__(self) -> int:
        return len(self.buckets)

    def __iter__(self):
        return iter(self.buckets)

    def __eq__(self, other) -> bool:
        return isinstance(other, AgeBucketTable) and other.lower_bounds == self.lower_bounds

    def __hash__(self) -> int:
        return hash(self.lower_bounds)

    def bucket(self, age_years: int) -> AgeBucket:
        if age_years < 0:
            raise ValueError("age must be >= 0")
        index = 0
        for i, lo in enumerate(self.lower_bounds):
            if age_years >= lo:
                index = i
            else:
                break
        return self.buckets[index]


DEFAULT_AGE_TABLE = AgeBucketTable()


def discretize_age(age_years: int, table: AgeBucketTable = DEFAULT_AGE_TABLE) -> AgeBucket:
    """The unique bucket of ``table`` containing ``age_years``."""
    return table.bucket(age_years)


# ── Leakage filter ───────────────────────────────────────────────────────────

def years_before(day: datetime.date, years: int) -> datetime.date:
    """Calendar-year subtraction; Feb 29 maps to Feb 28."""
    try:
        return day.replace(year=day.year - years)
    except ValueError:
        return day.replace(year=day.year - years, day=28)


def lookback_window(anchor_date: datetime.date) -> tuple[datetime.date, datetime.date]:
    """Inclusive first day and exclusive last day of the usable history."""
    start = years_before(anchor_date, config.LOOKBACK_YEARS)
    cutoff = anchor_date - datetime.timedelta(days=config.LEAKAGE_WINDOW_DAYS)
    return start, cutoff


def apply_leakage_filter(claims: Iterable[Claim], anchor_date: datetime.date) -> list[Claim]:
    """Keep claims with anchor - 3y <= service_date < anchor - 7d, in order."""
    start, cutoff = lookback_window(anchor_date)
    return [c for c in claims if start <= c.service_date < cutoff]


# ── Labeling ─────────────────────────────────────────────────────────────────

def default_covid_codes(codes: Iterable[str] = config.COVID_CODES) -> frozenset[MedicalCode]:
    return frozenset(parse_code(CodeSystem.DIAGNOSIS, c) for c in codes)


def derive_label(
    claims: Iterable[Claim],
    anchor_date: datetime.date,
    covid_codes: frozenset[MedicalCode] | set[MedicalCode],
) -> Label:
    """Label a patient from the unfiltered claim record.

    Hospitalized: a post-anchor hospitalization whose primary diagnosis is a
    Covid code. NotHospitalized: any post-anchor non-hospitalization claim, or
    no claim at all within 30 days after the anchor. Anything else is
    Indeterminate.
    """
    post = [c for c in claims if c.service_date > anchor_date]
    if any(c.is_hospitalization and c.primary_diagnosis in covid_codes for c in post):
        return Label.HOSPITALIZED
    if any(not c.is_hospitalization for c in post):
        return Label.NOT_HOSPITALIZED
    horizon = anchor_date + datetime.timedelta(days=config.LABEL_WINDOW_DAYS)
    if not any(c.service_date <= horizon for c in post):
        return Label.NOT_HOSPITALIZED
    return Label.INDETERMINATE


@dataclass
class CohortStats:
    kept: int = 0
    hospitalized: int = 0
    not_hospitalized: int = 0
    indeterminate: int = 0
    dropped_no_anchor: int = 0

    @property
    def positive_rate(self) -> float:
        return self.hospitalized / self.kept if self.kept else 0.0

    def as_dict(self) -> dict:
        return {
            "kept": self.kept,
            "hospitalized": self.hospitalized,
            "not_hospitalized": self.not_hospitalized,
            "indeterminate": self.indeterminate,
            "dropped_no_anchor": self.dropped_no_anchor,
        }


def build_cohort(
    records: Iterable[PatientHistory],
    covid_codes=None,
) -> tuple[list[LabeledExample], CohortStats]:
    """Label, filter and collect a cohort; Indeterminate records are excluded and counted."""
    covid_codes = default_covid_codes() if covid_codes is None else frozenset(covid_codes)
    stats = CohortStats()
    examples: list[LabeledExample] = []
    for record in records:
        if record.anchor_date is None:
            stats.dropped_no_anchor += 1
            continue
        label = derive_label(record.claims, record.anchor_date, covid_codes)
        if label is Label.INDETERMINATE:
            stats.indeterminate += 1
            continue
        kept = apply_leakage_filter(record.claims, record.anchor_date)
        examples.append(LabeledExample(record.with_claims(kept), label))
        stats.kept += 1
        if label is Label.HOSPITALIZED:
            stats.hospitalized += 1
        else:
            stats.not_hospitalized += 1
    logger.info("cohort built", extra={"fields": stats.as_dict()})
    return examples, stats
