"""claimsml: Local Surrogate Explanations

The interpretable representation of a history is the presence of each of
its distinct code tokens. Perturbed samples drop random token subsets, the
classifier re-scores them, and a kernel-weighted ridge regression on the
presence vectors gives one importance per token.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import Ridge

from claimsml.claims.records import PatientHistory
from claimsml.config import LimeConfig
from claimsml.errors import ExplanationError
from claimsml.models.base import DECISION_THRESHOLD, ProbabilisticClassifier, explanation_tokens
from claimsml.utils import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Explanation:
    importances: dict[str, float]
    intercept: float
    prediction: float
    r2: float
    kernel_width: float
    n_samples: int
    seed: int

    def ranked(self) -> list[tuple[str, float]]:
        """Tokens by decreasing absolute importance, ties by token."""
        return sorted(self.importances.items(), key=lambda kv: (-abs(kv[1]), kv[0]))

    def as_dict(self) -> dict:
        return {
            "importances": dict(self.importances),
            "intercept": self.intercept,
            "prediction": self.prediction,
            "r2": self.r2,
            "kernel_width": self.kernel_width,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def kernel_weights(distances: np.ndarray, width: float) -> np.ndarray:
    return np.sqrt(np.exp(-(distances ** 2) / width ** 2))


def lime_explain(
    classifier: ProbabilisticClassifier,
    history: PatientHistory,
    cfg: LimeConfig = LimeConfig(),
    seed: int | None = None,
) -> Explanation:
    tokens = explanation_tokens(history)
    if not tokens:
        raise ExplanationError(f"patient {history.patient_id} has no code tokens to explain")
    seed = cfg.seed if seed is None else seed
    rng = make_rng(seed)
    d = len(tokens)
    masks = rng.random((cfg.n_samples, d)) >= cfg.drop_probability
    masks[0] = True
    preds = np.asarray(classifier.predict_masked(history, tokens, masks), dtype=np.float64)

    Z = masks.astype(np.float64)
    distances = 1.0 - Z.mean(axis=1)
    width = cfg.width_for(d)
    weights = kernel_weights(distances, width)
    surrogate = Ridge(alpha=cfg.ridge_alpha, fit_intercept=True)
    surrogate.fit(Z, preds, sample_weight=weights)
    r2 = float(surrogate.score(Z, preds, sample_weight=weights))
    return Explanation(
        importances={t: float(c) for t, c in zip(tokens, surrogate.coef_)},
        intercept=float(surrogate.intercept_),
        prediction=float(preds[0]),
        r2=r2,
        kernel_width=float(width),
        n_samples=cfg.n_samples,
        seed=seed,
    )


def select_explanation_sample(predictions, n_positive: int, n_negative: int, seed: int) -> np.ndarray:
    """Sorted indices of up to ``n_positive`` predicted positives and ``n_negative`` predicted negatives."""
    p = np.asarray(predictions, dtype=np.float64)
    rng = make_rng(seed)
    positives = np.flatnonzero(p > DECISION_THRESHOLD)
    negatives = np.flatnonzero(p <= DECISION_THRESHOLD)
    chosen = [
        rng.choice(pool, size=min(k, len(pool)), replace=False) if len(pool) else pool
        for pool, k in ((positives, n_positive), (negatives, n_negative))
    ]
    if len(chosen[0]) < n_positive or len(chosen[1]) < n_negative:
        logger.warning("explanation sample short", extra={"fields": {
            "positives": len(chosen[0]), "negatives": len(chosen[1])}})
    return np.sort(np.concatenate(chosen)).astype(np.int64)
