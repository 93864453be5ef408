"""claimsml: Synthetic Claims Generator

Two products: a pretraining corpus (histories without anchor) and a Covid
cohort (histories with anchor, post-anchor label claims and occasional
leakage claims). Both are generated in partitions of ``partition_size``
patients; partition ``p`` of stream ``s`` draws from its own PCG64 stream
seeded with ``(seed, s, p, k)``, so any partition can be regenerated alone.

The hospitalization probability of a cohort patient is

    sigmoid(intercept + sum(log_odds of active profiles)
            + age_coefficient * age_bucket_ordinal + sex_coefficient * male)

and ``oracle_probability`` recovers it from a leakage-filtered history.
"""

from __future__ import annotations

import datetime
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np

from claimsml.claims.codes import CodeSystem, MedicalCode
from claimsml.claims.preprocessing import (
    DEFAULT_AGE_TABLE,
    AgeBucketTable,
    apply_leakage_filter,
    default_covid_codes,
    derive_label,
    years_before,
)
from claimsml.claims.records import Claim, Label, LabeledExample, PatientHistory, Sex
from claimsml.claims.risk_factors import RiskFactorMap
from claimsml.errors import NotAttributableError
from claimsml.synthgen.profiles import (
    COVID_DX,
    COVID_TEST_PX,
    EXPOSURE_DX,
    INPATIENT_PX,
    OFFICE_VISIT_PX,
    RESERVED_CODES,
    CodeSpace,
    GeneratorConfig,
    build_code_space,
)
from claimsml.utils import make_rng, sigmoid

logger = logging.getLogger(__name__)

# RNG stream ids
PRETRAIN_STREAM = 1
COHORT_STREAM = 2
CALIBRATION_STREAM = 3

MAX_AGE = 95
MEAN_EXTRA_CLAIMS = 4.0
CALIBRATION_SAMPLE = 20_000
OFFICE_VISIT_RATE = 0.6

PRETRAIN_START = datetime.date(2019, 1, 1)
PRETRAIN_END = datetime.date(2020, 2, 29)
ANCHOR_START = datetime.date(2020, 3, 1)
ANCHOR_SPAN_DAYS = 300

_DX = CodeSystem.DIAGNOSIS
_PX = CodeSystem.PROCEDURE
_RESERVED = frozenset(MedicalCode(CodeSystem(s), v) for s, v in RESERVED_CODES)


@dataclass(frozen=True)
class LatentPatient:
    """Demographics and active condition indices before any claim is drawn."""

    index: int
    patient_id: str
    age_years: int
    sex: Sex
    active: tuple[int, ...]


@dataclass
class _Draft:
    service_date: datetime.date
    dx: list
    px: list
    rx: list
    primary: MedicalCode | None
    hospitalization: bool = False


# ── Latent draws ─────────────────────────────────────────────────────────────

def _prevalences(space: CodeSpace) -> np.ndarray:
    return np.array([p.base_prevalence for p in space.profiles])


def _log_odds(space: CodeSpace) -> np.ndarray:
    return np.array([p.log_odds_hospitalization for p in space.profiles])


def _latent_partition(gen: GeneratorConfig, stream: int, partition: int, start: int, stop: int,
                      prefix: str, prevalences: np.ndarray) -> list[LatentPatient]:
    rng = make_rng(gen.seed, stream, partition, 0)
    out = []
    for index in range(start, stop):
        age = int(rng.integers(0, MAX_AGE))
        sex = Sex.M if rng.random() < 0.5 else Sex.F
        active = tuple(int(i) for i in np.flatnonzero(rng.random(len(prevalences)) < prevalences))
        out.append(LatentPatient(index, f"{prefix}{index:08d}", age, sex, active))
    return out


def sample_patients(gen: GeneratorConfig, stream: int = COHORT_STREAM, n: int | None = None,
                    risk_map: RiskFactorMap | None = None) -> Iterator[LatentPatient]:
    """The latent draw behind a generated corpus (cohort stream by default)."""
    space = build_code_space(gen, risk_map)
    prevalences = _prevalences(space)
    n = gen.n_patients if n is None else n
    prefix = "P" if stream == PRETRAIN_STREAM else "C"
    for partition, start in enumerate(range(0, n, gen.partition_size)):
        stop = min(start + gen.partition_size, n)
        yield from _latent_partition(gen, stream, partition, start, stop, prefix, prevalences)


def latent_score(patient: LatentPatient, gen: GeneratorConfig, log_odds: np.ndarray,
                 age_table: AgeBucketTable = DEFAULT_AGE_TABLE) -> float:
    """Linear score without the intercept."""
    score = float(log_odds[list(patient.active)].sum()) if patient.active else 0.0
    score += gen.age_coefficient * age_table.bucket(patient.age_years).ordinal
    score += gen.sex_coefficient * (1.0 if patient.sex is Sex.M else 0.0)
    return score


def resolved_intercept(gen: GeneratorConfig, risk_map: RiskFactorMap | None = None,
                       age_table: AgeBucketTable = DEFAULT_AGE_TABLE) -> float:
    """The configured intercept, or the calibrated one when it is null."""
    if gen.intercept is not None:
        return float(gen.intercept)
    return _calibrated_intercept(gen, risk_map, age_table)


@lru_cache(maxsize=16)
def _calibrated_intercept(gen: GeneratorConfig, risk_map: RiskFactorMap | None,
                          age_table: AgeBucketTable) -> float:
    """Bisection so that the mean oracle probability hits the target rate."""
    log_odds = _log_odds(build_code_space(gen, risk_map))
    scores = np.array([latent_score(p, gen, log_odds, age_table)
                       for p in sample_patients(gen, CALIBRATION_STREAM, CALIBRATION_SAMPLE, risk_map)])
    lo, hi = -30.0, 30.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.mean(sigmoid(mid + scores)) < gen.target_positive_rate:
            lo = mid
        else:
            hi = mid
    intercept = 0.5 * (lo + hi)
    logger.info("intercept calibrated", extra={"fields": {
        "intercept": intercept, "target": gen.target_positive_rate, "sample": len(scores)}})
    return intercept


# ── Claim emission ───────────────────────────────────────────────────────────

def _pick(rng: np.random.Generator, pool: tuple, k: int) -> list:
    k = min(k, len(pool))
    if k <= 0:
        return []
    return [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]


def _emit(rng: np.random.Generator, space: CodeSpace, condition: int, noise_rate: float,
          service_date: datetime.date) -> _Draft:
    """One claim from condition ``condition``'s pools, or from the noise pool when it is -1."""
    if condition >= 0:
        profile = space.profiles[condition]
        pools = (profile.dx_pool, profile.px_pool, profile.rx_pool)
    else:
        pools = (space.noise_dx, space.noise_px, space.noise_rx)
    dx = _pick(rng, pools[0], int(rng.integers(1, 4)))
    px = _pick(rng, pools[1], int(rng.integers(0, 3)))
    rx = _pick(rng, pools[2], int(rng.integers(0, 3)))
    if rng.random() < noise_rate:
        system = int(rng.integers(0, 3))
        noise_pool = (space.noise_dx, space.noise_px, space.noise_rx)[system]
        code = noise_pool[int(rng.integers(0, len(noise_pool)))]
        target = (dx, px, rx)[system]
        if code not in target:
            target.append(code)
    return _Draft(service_date, dx, px, rx, dx[0])


def _conditions_per_claim(rng: np.random.Generator, active: tuple[int, ...], n_claims: int) -> list[int]:
    """Every active condition gets at least one claim; the rest are uniform over active ones."""
    if not active:
        return [-1] * n_claims
    n_claims = max(n_claims, len(active))
    extra = rng.choice(np.array(active), size=n_claims - len(active)).tolist() if n_claims > len(active) else []
    assignment = list(active) + [int(c) for c in extra]
    return [assignment[i] for i in rng.permutation(len(assignment))]


def _finalize(patient: LatentPatient, drafts: list[_Draft], anchor: datetime.date | None) -> PatientHistory:
    drafts = sorted(drafts, key=lambda d: d.service_date)
    claims = tuple(
        Claim(
            claim_id=f"{patient.patient_id}-{k:03d}",
            service_date=d.service_date,
            diagnoses=tuple(d.dx),
            procedures=tuple(d.px),
            medications=tuple(d.rx),
            primary_diagnosis=d.primary,
            is_hospitalization=d.hospitalization,
        )
        for k, d in enumerate(drafts)
    )
    return PatientHistory(patient.patient_id, patient.age_years, patient.sex, claims, anchor)


def _dates(rng: np.random.Generator, start: datetime.date, end: datetime.date, n: int) -> list[datetime.date]:
    span = (end - start).days + 1
    return [start + datetime.timedelta(days=int(d)) for d in np.sort(rng.integers(0, span, size=n))]


# ── Pretraining corpus ───────────────────────────────────────────────────────

def generate_pretrain_corpus(gen: GeneratorConfig, risk_map: RiskFactorMap | None = None) -> Iterator[PatientHistory]:
    """Histories without anchor whose claims total exactly ``n_pretrain_claims``."""
    space = build_code_space(gen, risk_map)
    prevalences = _prevalences(space)
    remaining = gen.n_pretrain_claims
    partition = 0
    n_patients = 0
    while remaining > 0:
        start = partition * gen.partition_size
        latent = _latent_partition(gen, PRETRAIN_STREAM, partition, start, start + gen.partition_size,
                                   "P", prevalences)
        rng = make_rng(gen.seed, PRETRAIN_STREAM, partition, 1)
        for patient in latent:
            n_claims = 1 + int(rng.poisson(MEAN_EXTRA_CLAIMS))
            conditions = _conditions_per_claim(rng, patient.active, n_claims)
            dates = _dates(rng, PRETRAIN_START, PRETRAIN_END, len(conditions))
            drafts = [_emit(rng, space, c, gen.noise_code_rate, day) for c, day in zip(conditions, dates)]
            drafts = drafts[:remaining]
            remaining -= len(drafts)
            n_patients += 1
            yield _finalize(patient, drafts, None)
            if remaining == 0:
                break
        partition += 1
    logger.info("pretraining corpus generated", extra={"fields": {
        "patients": n_patients, "claims": gen.n_pretrain_claims, "partitions": partition}})


# ── Cohort ───────────────────────────────────────────────────────────────────

def _label_claims(rng: np.random.Generator, space: CodeSpace, anchor: datetime.date,
                  hospitalized: bool, indeterminate: bool) -> list[_Draft]:
    covid = MedicalCode(_DX, COVID_DX)
    inpatient = MedicalCode(_PX, INPATIENT_PX)
    if indeterminate:
        other = space.noise_dx[int(rng.integers(0, len(space.noise_dx)))]
        day = anchor + datetime.timedelta(days=int(rng.integers(1, 31)))
        return [_Draft(day, [other], [inpatient], [], other, hospitalization=True)]
    if hospitalized:
        day = anchor + datetime.timedelta(days=int(rng.integers(1, 15)))
        return [_Draft(day, [covid], [inpatient], [], covid, hospitalization=True)]
    if rng.random() < OFFICE_VISIT_RATE:
        day = anchor + datetime.timedelta(days=int(rng.integers(1, 31)))
        return [_Draft(day, [covid], [MedicalCode(_PX, OFFICE_VISIT_PX)], [], covid)]
    return []


def _cohort_partition(gen: GeneratorConfig, space: CodeSpace, partition: int, start: int, stop: int,
                      intercept: float, age_table: AgeBucketTable) -> Iterator[PatientHistory]:
    log_odds = _log_odds(space)
    latent = _latent_partition(gen, COHORT_STREAM, partition, start, stop, "C", _prevalences(space))
    rng = make_rng(gen.seed, COHORT_STREAM, partition, 1)
    for patient in latent:
        p = float(sigmoid(intercept + latent_score(patient, gen, log_odds, age_table)))
        u_label, u_indeterminate, u_leak = rng.random(3)
        anchor = ANCHOR_START + datetime.timedelta(days=int(rng.integers(0, ANCHOR_SPAN_DAYS)))

        n_claims = 1 + int(rng.poisson(MEAN_EXTRA_CLAIMS))
        conditions = _conditions_per_claim(rng, patient.active, n_claims)
        window_start = years_before(anchor, 3)
        window_end = anchor - datetime.timedelta(days=8)
        dates = _dates(rng, window_start, window_end, len(conditions))
        drafts = [_emit(rng, space, c, gen.noise_code_rate, day) for c, day in zip(conditions, dates)]

        if u_leak < gen.leakage_claim_rate:
            day = anchor - datetime.timedelta(days=int(rng.integers(0, 8)))
            exposure = MedicalCode(_DX, EXPOSURE_DX)
            drafts.append(_Draft(day, [exposure], [MedicalCode(_PX, COVID_TEST_PX)], [], exposure))
        drafts.extend(_label_claims(rng, space, anchor, bool(u_label < p), bool(u_indeterminate < gen.indeterminate_rate)))
        yield _finalize(patient, drafts, anchor)


def generate_cohort_records(gen: GeneratorConfig, risk_map: RiskFactorMap | None = None,
                            age_table: AgeBucketTable = DEFAULT_AGE_TABLE) -> Iterator[PatientHistory]:
    """Unfiltered cohort records: anchor, pre-anchor history, leakage and label claims.

    ``risk_map`` seeds the default profiles and ``age_table`` buckets the age
    effect; the oracle must be given the same pair.
    """
    space = build_code_space(gen, risk_map)
    intercept = resolved_intercept(gen, risk_map, age_table)
    n_partitions = math.ceil(gen.n_patients / gen.partition_size)
    for partition in range(n_partitions):
        start = partition * gen.partition_size
        stop = min(start + gen.partition_size, gen.n_patients)
        yield from _cohort_partition(gen, space, partition, start, stop, intercept, age_table)
    logger.info("cohort generated", extra={"fields": {
        "patients": gen.n_patients, "partitions": n_partitions, "intercept": intercept}})


def generate_labeled_cohort(gen: GeneratorConfig, risk_map: RiskFactorMap | None = None,
                            age_table: AgeBucketTable = DEFAULT_AGE_TABLE) -> Iterator[LabeledExample]:
    """Labeled, leakage-filtered cohort; Indeterminate records are skipped."""
    covid_codes = default_covid_codes()
    for record in generate_cohort_records(gen, risk_map, age_table):
        label = derive_label(record.claims, record.anchor_date, covid_codes)
        if label is Label.INDETERMINATE:
            continue
        yield LabeledExample(record.with_claims(apply_leakage_filter(record.claims, record.anchor_date)), label)


# ── Oracle ───────────────────────────────────────────────────────────────────

@lru_cache(maxsize=8)
def _owner_table(gen: GeneratorConfig, risk_map: RiskFactorMap | None) -> dict[MedicalCode, int]:
    return build_code_space(gen, risk_map).owner()


def oracle_score(history: PatientHistory, gen: GeneratorConfig, risk_map: RiskFactorMap | None = None,
                 age_table: AgeBucketTable = DEFAULT_AGE_TABLE) -> float:
    """Log-odds of hospitalization for a history this config generated."""
    owner = _owner_table(gen, risk_map)
    space = build_code_space(gen, risk_map)
    present: set[int] = set()
    for code in history.codes():
        if code in _RESERVED:
            continue
        try:
            index = owner[code]
        except KeyError:
            raise NotAttributableError(
                f"patient {history.patient_id}: code {code.token} is not emitted by this generator config"
            ) from None
        if index >= 0:
            present.add(index)
    score = resolved_intercept(gen, risk_map, age_table)
    score += sum(space.profiles[i].log_odds_hospitalization for i in sorted(present))
    score += gen.age_coefficient * age_table.bucket(history.age_years).ordinal
    score += gen.sex_coefficient * (1.0 if history.sex is Sex.M else 0.0)
    return score


def oracle_probability(history: PatientHistory, gen: GeneratorConfig, risk_map: RiskFactorMap | None = None,
                       age_table: AgeBucketTable = DEFAULT_AGE_TABLE) -> float:
    """Exact Bayes probability of hospitalization."""
    return float(sigmoid(oracle_score(history, gen, risk_map, age_table)))
