"""claimsml: Perturbation Stability

Scores each sampled test history and its perturbation, then compares

  - predict_prob_diff_mean: mean |p_original - p_perturbed| in percentage points
  - predict_agreement: percent of pairs with the same 0.5-threshold decision
  - var_importance_mse: mean squared difference of paired LIME importances

LIME importances are paired through the substitution map: an original token
pairs with its replacement, an unsubstituted token with itself.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from claimsml.claims.records import PatientHistory
from claimsml.config import LimeConfig, StabilityConfig
from claimsml.errors import ExplanationError
from claimsml.evaluation.lime import lime_explain
from claimsml.evaluation.perturb import Perturber
from claimsml.models.base import DECISION_THRESHOLD, ProbabilisticClassifier
from claimsml.utils import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StabilityReport:
    model: str
    predict_prob_diff_mean: float
    predict_agreement: float
    var_importance_mse: float
    n_pairs: int
    n_requested: int
    used_all: bool
    n_explained: int
    seed: int
    lime: dict

    def as_dict(self) -> dict:
        return asdict(self)


def sample_indices(n_available: int, n_requested: int, seed: int) -> tuple[np.ndarray, bool]:
    """Sorted sample without replacement; all indices (flagged) when too few are available."""
    if n_requested >= n_available:
        return np.arange(n_available, dtype=np.int64), True
    chosen = make_rng(seed).choice(n_available, size=n_requested, replace=False)
    return np.sort(chosen).astype(np.int64), False


def stability_eval(
    classifier: ProbabilisticClassifier,
    test: Sequence[PatientHistory],
    perturber: Perturber,
    cfg: StabilityConfig = StabilityConfig(),
    lime_cfg: LimeConfig = LimeConfig(),
    explain: bool = True,
) -> StabilityReport:
    if not test:
        raise ValueError("stability evaluation needs at least one test history")
    idx, used_all = sample_indices(len(test), cfg.n_pairs, cfg.seed)
    if used_all and cfg.n_pairs > len(test):
        logger.warning("fewer test histories than requested pairs", extra={"fields": {
            "requested": cfg.n_pairs, "available": len(test)}})
    pairs = [perturber(test[i]) for i in idx]
    p_orig = classifier.predict_proba([p.original for p in pairs])
    p_pert = classifier.predict_proba([p.perturbed for p in pairs])
    diff_mean = float(np.mean(np.abs(p_orig - p_pert)) * 100.0)
    agreement = float(np.mean((p_orig > DECISION_THRESHOLD) == (p_pert > DECISION_THRESHOLD)) * 100.0)

    sq_sum, n_terms, n_explained = 0.0, 0, 0
    if explain:
        for k, pair in enumerate(pairs):
            seed = lime_cfg.seed + int(idx[k])
            try:
                before = lime_explain(classifier, pair.original, lime_cfg, seed)
                after = lime_explain(classifier, pair.perturbed, lime_cfg, seed)
            except ExplanationError:
                continue
            n_explained += 1
            mapping = pair.token_map()
            for token, weight in before.importances.items():
                paired = after.importances.get(mapping.get(token, token), 0.0)
                sq_sum += (weight - paired) ** 2
                n_terms += 1
    mse = sq_sum / n_terms if n_terms else 0.0

    report = StabilityReport(
        model=classifier.kind.value,
        predict_prob_diff_mean=diff_mean,
        predict_agreement=agreement,
        var_importance_mse=mse,
        n_pairs=len(pairs),
        n_requested=cfg.n_pairs,
        used_all=used_all,
        n_explained=n_explained,
        seed=cfg.seed,
        lime=asdict(lime_cfg),
    )
    logger.info("stability", extra={"fields": {
        "model": report.model, "pairs": report.n_pairs, "diff_mean": diff_mean,
        "agreement": agreement, "mse": mse}})
    return report
