"""claimsml: Bag-of-Words Linear SVM

Binary presence of every vocabulary code token, a constant bias column, and an
L2-regularized hinge loss minimized with mini-batch Pegasos. Decision values
are mapped to probabilities by a Platt sigmoid fit on a held-out fold.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from claimsml.claims.records import LabeledExample, PatientHistory
from claimsml.config import SplitSpec, SvmConfig
from claimsml.errors import SplitError, TrainingError
from claimsml.models.base import ModelKind, ProbabilisticClassifier, code_token_counts, labels_of
from claimsml.models.split import split_train_test
from claimsml.narrative.vocab import Vocabulary
from claimsml.utils import make_rng, sigmoid

logger = logging.getLogger(__name__)

PLATT_MAX_ITER = 100
PLATT_MIN_STEP = 1e-10
PLATT_SIGMA = 1e-12
PLATT_EPS = 1e-5


def presence_matrix(histories: Sequence[PatientHistory], vocab: Vocabulary) -> sp.csr_matrix:
    """CSR matrix of shape (n, |V| + 1): code-token presence plus a trailing bias column of ones."""
    n_cols = len(vocab) + 1
    indptr = [0]
    indices: list[int] = []
    for history in histories:
        ids = sorted({vocab.id(t) for t in code_token_counts(history) if t in vocab})
        indices.extend(ids)
        indices.append(n_cols - 1)
        indptr.append(len(indices))
    data = np.ones(len(indices), dtype=np.float64)
    return sp.csr_matrix((data, np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
                         shape=(len(histories), n_cols))


def _signs(y: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(y) > 0, 1.0, -1.0)


def hinge_objective_and_subgrad(w: np.ndarray, X, y: np.ndarray, lam: float) -> tuple[float, np.ndarray]:
    """lam/2 * ||w||^2 + mean hinge and one subgradient (labels in {0, 1})."""
    s = _signs(y)
    margins = s * (X @ w)
    active = margins < 1.0
    loss = 0.5 * lam * float(w @ w) + float(np.mean(np.maximum(0.0, 1.0 - margins)))
    grad = lam * w - np.asarray(X.T @ (s * active)).ravel() / len(s)
    return loss, grad


def pegasos(X: sp.csr_matrix, y: np.ndarray, cfg: SvmConfig) -> np.ndarray:
    """Mini-batch Pegasos: step 1/(lam t), projection onto the ball of radius 1/sqrt(lam)."""
    n, d = X.shape
    s = _signs(y)
    w = np.zeros(d, dtype=np.float64)
    radius = 1.0 / np.sqrt(cfg.lam)
    rng = make_rng(cfg.seed, 1)
    t = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            t += 1
            batch = order[start:start + cfg.batch_size]
            eta = 1.0 / (cfg.lam * t)
            Xb, sb = X[batch], s[batch]
            violated = sb * (Xb @ w) < 1.0
            w *= 1.0 - eta * cfg.lam
            if violated.any():
                w += (eta / len(batch)) * np.asarray(Xb[violated].T @ sb[violated]).ravel()
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
        loss, _ = hinge_objective_and_subgrad(w, X, y, cfg.lam)
        logger.debug("pegasos epoch", extra={"fields": {"epoch": epoch + 1, "objective": loss}})
    return w


def _platt_objective(f: np.ndarray, t: np.ndarray, a: float, b: float) -> float:
    z = f * a + b
    return float(np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z))


def fit_platt(decision: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Sigmoid parameters (A, B) with P(y=1 | f) = 1 / (1 + exp(A f + B)).

    Newton's method with backtracking on the regularized targets
    (N+ + 1) / (N+ + 2) and 1 / (N- + 2).
    """
    f = np.asarray(decision, dtype=np.float64)
    y = np.asarray(y)
    prior1 = int(np.sum(y > 0))
    prior0 = len(y) - prior1
    t = np.where(y > 0, (prior1 + 1.0) / (prior1 + 2.0), 1.0 / (prior0 + 2.0))
    a, b = 0.0, float(np.log((prior0 + 1.0) / (prior1 + 1.0)))
    fval = _platt_objective(f, t, a, b)
    for _ in range(PLATT_MAX_ITER):
        z = f * a + b
        p = sigmoid(-z)
        d2 = p * (1.0 - p)
        d1 = t - p
        h11 = float(f @ (f * d2)) + PLATT_SIGMA
        h22 = float(d2.sum()) + PLATT_SIGMA
        h21 = float(f @ d2)
        g1 = float(f @ d1)
        g2 = float(d1.sum())
        if abs(g1) < PLATT_EPS and abs(g2) < PLATT_EPS:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= PLATT_MIN_STEP:
            new_a, new_b = a + step * da, b + step * db
            new_f = _platt_objective(f, t, new_a, new_b)
            if new_f < fval + 1e-4 * step * gd:
                a, b, fval = new_a, new_b, new_f
                break
            step /= 2.0
        else:
            logger.debug("platt line search stalled", extra={"fields": {"a": a, "b": b}})
            break
    return a, b


class BowSvmClassifier(ProbabilisticClassifier):
    kind = ModelKind.BOW_SVM

    def __init__(self, vocab: Vocabulary, weights: np.ndarray, platt_a: float, platt_b: float,
                 config: SvmConfig | None = None):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(vocab) + 1,):
            raise ValueError(f"expected {len(vocab) + 1} weights, got {weights.shape}")
        self.vocab = vocab
        self.weights = weights
        self.platt_a = float(platt_a)
        self.platt_b = float(platt_b)
        self.config = config or SvmConfig()

    @property
    def bias(self) -> float:
        return float(self.weights[-1])

    def token_weight(self, surface: str) -> float:
        return float(self.weights[self.vocab.id(surface)]) if surface in self.vocab else 0.0

    def decision_function(self, histories: Sequence[PatientHistory]) -> np.ndarray:
        return presence_matrix(histories, self.vocab) @ self.weights

    def _calibrate(self, decision: np.ndarray) -> np.ndarray:
        return np.atleast_1d(sigmoid(-(self.platt_a * decision + self.platt_b)))

    def predict_proba(self, histories: Sequence[PatientHistory]) -> np.ndarray:
        return self._calibrate(self.decision_function(histories))

    def predict_masked(self, history: PatientHistory, tokens: Sequence[str], masks: np.ndarray) -> np.ndarray:
        listed = set(tokens)
        base = self.bias + sum(self.token_weight(t) for t in code_token_counts(history) if t not in listed)
        contrib = np.array([self.token_weight(t) for t in tokens], dtype=np.float64)
        return self._calibrate(base + np.asarray(masks, dtype=np.float64) @ contrib)

    def sections(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "platt": np.array([self.platt_a, self.platt_b])}

    def manifest_extras(self) -> dict:
        return {"vocab_size": len(self.vocab)}


def train_bow_svm(
    train: Sequence[LabeledExample],
    vocab: Vocabulary,
    cfg: SvmConfig = SvmConfig(),
) -> BowSvmClassifier:
    if not train:
        raise TrainingError("bag-of-words SVM needs a nonempty training set")
    if len({e.y for e in train}) < 2:
        raise TrainingError("bag-of-words SVM needs both classes in the training set")
    try:
        fit_part, calib_part = split_train_test(
            train, SplitSpec(1.0 - cfg.calibration_fraction, True, cfg.seed))
    except SplitError as e:
        raise TrainingError(f"cannot hold out a calibration fold: {e}") from None

    X = presence_matrix([e.history for e in fit_part], vocab)
    y = labels_of(fit_part)
    w = pegasos(X, y, cfg)
    objective, _ = hinge_objective_and_subgrad(w, X, y, cfg.lam)

    calib_decision = presence_matrix([e.history for e in calib_part], vocab) @ w
    a, b = fit_platt(calib_decision, labels_of(calib_part))
    logger.info("bow svm trained", extra={"fields": {
        "fit": len(fit_part), "calibration": len(calib_part), "objective": objective,
        "platt_a": a, "platt_b": b}})
    return BowSvmClassifier(vocab, w, a, b, cfg)
