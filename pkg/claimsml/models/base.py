"""claimsml: Classifier Contract

Every model maps a leakage-filtered history to P(Hospitalized). The batch
``predict_proba`` is the primary entry point; ``predict_masked`` scores
token-dropped variants of one history for local explanations.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import Counter
from enum import Enum
from typing import Sequence

import numpy as np

from claimsml.claims.records import LabeledExample, PatientHistory

DECISION_THRESHOLD = 0.5


class ModelKind(str, Enum):
    RISK_LOGIT = "risk-logit"
    BOW_SVM = "bow-svm"
    EMBED_GBM = "embed-gbm"
    MLM = "mlm"

    @property
    def pretrained(self) -> bool:
        return self in (ModelKind.EMBED_GBM, ModelKind.MLM)


def code_token_counts(history: PatientHistory) -> Counter:
    """Occurrence count of every code token in the history."""
    return Counter(code.token for code in history.codes())


def explanation_tokens(history: PatientHistory) -> list[str]:
    """Sorted distinct code tokens: the interpretable features of one history."""
    return sorted(code_token_counts(history))


def drop_tokens(history: PatientHistory, keep: set[str] | frozenset[str]) -> PatientHistory:
    """History restricted to code occurrences whose token is in ``keep``."""
    return history.map_codes(lambda code: code if code.token in keep else None)


def labels_of(examples: Sequence[LabeledExample]) -> np.ndarray:
    return np.array([e.y for e in examples], dtype=np.float64)


class ProbabilisticClassifier(ABC):
    kind: ModelKind

    @abstractmethod
    def predict_proba(self, histories: Sequence[PatientHistory]) -> np.ndarray:
        """P(Hospitalized) per history, each in [0, 1]."""

    def predict_one(self, history: PatientHistory) -> float:
        return float(self.predict_proba([history])[0])

    def predict(self, histories: Sequence[PatientHistory]) -> np.ndarray:
        return (self.predict_proba(histories) > DECISION_THRESHOLD).astype(np.int64)

    def predict_masked(self, history: PatientHistory, tokens: Sequence[str], masks: np.ndarray) -> np.ndarray:
        """Probabilities for variants of ``history`` keeping ``tokens[j]`` where ``masks[:, j]``.

        Tokens of the history that are not listed in ``tokens`` are always kept.
        """
        listed = set(tokens)
        always = {t for t in code_token_counts(history) if t not in listed}
        variants = [
            drop_tokens(history, always | {t for t, keep in zip(tokens, row) if keep})
            for row in np.asarray(masks, dtype=bool)
        ]
        return self.predict_proba(variants)

    @abstractmethod
    def sections(self) -> dict[str, np.ndarray]:
        """Named parameter arrays for the binary blob."""

    @abstractmethod
    def manifest_extras(self) -> dict:
        """Scalar parameters and config for the JSON manifest."""
