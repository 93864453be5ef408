"""claimsml: High-risk Sanity Check

Builds synthetic histories that carry one code from every high-risk range
covered by the vocabulary, matched histories with the same number of
risk-free codes, and an empty history, then reports each model's mean
probability on each set.
"""

from __future__ import annotations

import datetime
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from claimsml import config
from claimsml.claims.codes import CodeSystem, MedicalCode, code_from_token
from claimsml.claims.records import Claim, PatientHistory, Sex
from claimsml.claims.risk_factors import RiskFactorMap
from claimsml.config import SanityConfig
from claimsml.models.base import DECISION_THRESHOLD, ModelKind, ProbabilisticClassifier
from claimsml.narrative.vocab import TokenKind, Vocabulary
from claimsml.utils import make_rng

logger = logging.getLogger(__name__)

ANCHOR = datetime.date(2020, 6, 1)
AGE_RANGE = (18, 90)
_KINDS = {k.value for k in ModelKind}


@dataclass(frozen=True)
class ModelSanity:
    high_risk_mean: float
    no_risk_mean: float
    empty_mean: float
    high_risk_above_threshold: float

    @property
    def margin(self) -> float:
        return self.high_risk_mean - self.no_risk_mean


@dataclass(frozen=True)
class SanityReport:
    models: dict[str, ModelSanity]
    covered_risks: tuple[str, ...]
    skipped_risks: tuple[str, ...]
    n_variations: int
    seed: int
    margin_over_svm: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "models": {k: {**asdict(v), "margin": v.margin} for k, v in self.models.items()},
            "covered_risks": list(self.covered_risks),
            "skipped_risks": list(self.skipped_risks),
            "n_variations": self.n_variations,
            "seed": self.seed,
            "margin_over_svm": dict(self.margin_over_svm),
        }


def _vocab_codes(vocab: Vocabulary) -> list[MedicalCode]:
    surfaces = [vocab.surface(int(i)) for kind in (TokenKind.DX, TokenKind.PX, TokenKind.RX)
                for i in vocab.ids_of_kind(kind)]
    return [code_from_token(s) for s in surfaces]


def risk_code_pools(risk_map: RiskFactorMap, vocab: Vocabulary) -> tuple[dict[str, list[MedicalCode]], list[MedicalCode]]:
    """Vocabulary codes per risk name, and the codes matching no risk (Covid codes excluded)."""
    covid = set(config.COVID_CODES)
    pools: dict[str, list[MedicalCode]] = {name: [] for name in risk_map.risk_names}
    neutral: list[MedicalCode] = []
    for code in _vocab_codes(vocab):
        names = risk_map.lookup(code)
        for name in names:
            pools[name].append(code)
        if not names and not (code.system is CodeSystem.DIAGNOSIS and code.value in covid):
            neutral.append(code)
    return pools, neutral


def _history(pid: str, age: int, sex: Sex, codes: list[MedicalCode]) -> PatientHistory:
    claims = []
    for k, code in enumerate(codes):
        day = ANCHOR - datetime.timedelta(days=30 * (len(codes) - k))
        kwargs = {
            CodeSystem.DIAGNOSIS: {"diagnoses": (code,), "primary_diagnosis": code},
            CodeSystem.PROCEDURE: {"procedures": (code,)},
            CodeSystem.MEDICATION: {"medications": (code,)},
        }[code.system]
        claims.append(Claim(f"{pid}-{k:03d}", day, **kwargs))
    return PatientHistory(pid, age, sex, tuple(claims), ANCHOR)


def build_sanity_histories(
    risk_map: RiskFactorMap,
    vocab: Vocabulary,
    cfg: SanityConfig = SanityConfig(),
) -> tuple[list[PatientHistory], list[PatientHistory], list[PatientHistory], list[str], list[str]]:
    """High-risk, no-risk and empty histories (one of each per variation) plus covered and skipped risks."""
    pools, neutral = risk_code_pools(risk_map, vocab)
    covered = [name for name in risk_map.risk_names if pools[name]]
    skipped = [name for name in risk_map.risk_names if not pools[name]]
    high, none, empty = [], [], []
    for v in range(cfg.n_variations):
        rng = make_rng(cfg.seed, v)
        age = int(rng.integers(AGE_RANGE[0], AGE_RANGE[1] + 1))
        sex = Sex.M if rng.random() < 0.5 else Sex.F
        risk_codes = [pools[name][int(rng.integers(len(pools[name])))] for name in covered]
        high.append(_history(f"H{v:04d}", age, sex, risk_codes))
        if neutral:
            picks = rng.choice(len(neutral), size=len(risk_codes), replace=len(risk_codes) > len(neutral))
            none.append(_history(f"N{v:04d}", age, sex, [neutral[int(i)] for i in picks]))
        else:
            none.append(_history(f"N{v:04d}", age, sex, []))
        empty.append(_history(f"E{v:04d}", age, sex, []))
    return high, none, empty, covered, skipped


def highrisk_sanity_check(
    classifiers: Mapping[str, ProbabilisticClassifier],
    risk_map: RiskFactorMap,
    vocab: Vocabulary,
    cfg: SanityConfig = SanityConfig(),
) -> SanityReport:
    high, none, empty, covered, skipped = build_sanity_histories(risk_map, vocab, cfg)
    if skipped:
        logger.warning("risks without vocabulary codes", extra={"fields": {"skipped": ",".join(skipped)}})
    results: dict[str, ModelSanity] = {}
    for name, model in classifiers.items():
        p_high = model.predict_proba(high)
        results[name] = ModelSanity(
            high_risk_mean=float(np.mean(p_high)),
            no_risk_mean=float(np.mean(model.predict_proba(none))),
            empty_mean=float(np.mean(model.predict_proba(empty))),
            high_risk_above_threshold=float(np.mean(p_high > DECISION_THRESHOLD) * 100.0),
        )
        logger.info("sanity", extra={"fields": {"model": name, "high": results[name].high_risk_mean,
                                                 "none": results[name].no_risk_mean}})
    margin_over_svm: dict[str, float] = {}
    svm = results.get(ModelKind.BOW_SVM.value)
    if svm is not None:
        for name, res in results.items():
            if name in _KINDS and ModelKind(name).pretrained:
                margin_over_svm[name] = res.high_risk_mean - svm.high_risk_mean
    return SanityReport(results, tuple(covered), tuple(skipped), cfg.n_variations, cfg.seed, margin_over_svm)
