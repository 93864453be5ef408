"""Builders for small hand-made claims data used across the test suite."""

from __future__ import annotations

import datetime
from types import SimpleNamespace
from typing import Sequence

import numpy as np

from claimsml.claims.codes import CodeSystem, MedicalCode, code_from_token, parse_code
from claimsml.claims.records import Claim, Label, LabeledExample, PatientHistory, Sex
from claimsml.narrative.vocab import SPECIALS, Vocabulary, demographic_tokens

ANCHOR = datetime.date(2020, 6, 1)


def dx(value: str) -> MedicalCode:
    return parse_code(CodeSystem.DIAGNOSIS, value)


def px(value: str) -> MedicalCode:
    return parse_code(CodeSystem.PROCEDURE, value)


def rx(value: str) -> MedicalCode:
    return parse_code(CodeSystem.MEDICATION, value)


def days_before(n: int, anchor: datetime.date = ANCHOR) -> datetime.date:
    return anchor - datetime.timedelta(days=n)


def days_after(n: int, anchor: datetime.date = ANCHOR) -> datetime.date:
    return anchor + datetime.timedelta(days=n)


def claim_on(claim_id: str, day: datetime.date, codes: Sequence[MedicalCode] = (),
             primary: MedicalCode | None = None, hospitalization: bool = False) -> Claim:
    """One claim; the first diagnosis is primary unless ``primary`` is given."""
    dxs = tuple(c for c in codes if c.system is CodeSystem.DIAGNOSIS)
    pxs = tuple(c for c in codes if c.system is CodeSystem.PROCEDURE)
    rxs = tuple(c for c in codes if c.system is CodeSystem.MEDICATION)
    if primary is None and dxs:
        primary = dxs[0]
    return Claim(claim_id, day, dxs, pxs, rxs, primary, hospitalization)


def history_of(patient_id: str, tokens: Sequence[str], age: int = 50, sex: Sex = Sex.F,
               anchor: datetime.date | None = ANCHOR) -> PatientHistory:
    """One single-code claim per token, 30 days apart, ending 30 days before the anchor."""
    end = anchor or ANCHOR
    claims = [
        claim_on(f"{patient_id}-{k:03d}", days_before(30 * (len(tokens) - k), end), [code_from_token(t)])
        for k, t in enumerate(tokens)
    ]
    return PatientHistory(patient_id, age, sex, tuple(claims), anchor)


def example_of(patient_id: str, tokens: Sequence[str], positive: bool, **kwargs) -> LabeledExample:
    label = Label.HOSPITALIZED if positive else Label.NOT_HOSPITALIZED
    return LabeledExample(history_of(patient_id, tokens, **kwargs), label)


def toy_vocab(tokens: Sequence[str]) -> Vocabulary:
    """Specials, every demographic token, then ``tokens`` in the given order."""
    surfaces = [*SPECIALS, *demographic_tokens(), *tokens]
    return Vocabulary(surfaces, [0] * 4 + [10] * (len(surfaces) - 4), min_count=1)


def separable_examples(n: int, positive_tokens: Sequence[str], negative_tokens: Sequence[str],
                       seed: int = 0) -> list[LabeledExample]:
    """Alternating classes; positives draw from ``positive_tokens`` only, negatives from ``negative_tokens``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        positive = i % 2 == 0
        pool = positive_tokens if positive else negative_tokens
        k = int(rng.integers(1, min(4, len(pool)) + 1))
        tokens = [pool[j] for j in rng.choice(len(pool), size=k, replace=False)]
        out.append(example_of(f"S{i:05d}", tokens, positive,
                              age=int(rng.integers(20, 80)), sex=Sex.M if rng.random() < 0.5 else Sex.F))
    return out


class ConstantClassifier:
    """Scores every history with the same probability."""

    kind = SimpleNamespace(value="constant")

    def __init__(self, p: float):
        self.p = p

    def predict_proba(self, histories):
        return np.full(len(histories), self.p)

    def predict_masked(self, history, tokens, masks):
        return np.full(len(masks), self.p)


class LinearTokenClassifier:
    """p = clip(bias + sum of weights of present tokens, 0, 1); used as a LIME oracle."""

    kind = SimpleNamespace(value="linear")

    def __init__(self, weights: dict[str, float], bias: float = 0.0):
        self.weights = weights
        self.bias = bias

    def _score(self, tokens):
        return float(np.clip(self.bias + sum(self.weights.get(t, 0.0) for t in set(tokens)), 0.0, 1.0))

    def predict_proba(self, histories):
        return np.array([self._score(c.token for c in h.codes()) for h in histories])

    def predict_masked(self, history, tokens, masks):
        present = {c.token for c in history.codes()}
        always = present - set(tokens)
        return np.array([self._score(always | {t for t, keep in zip(tokens, row) if keep})
                         for row in np.asarray(masks, dtype=bool)])
