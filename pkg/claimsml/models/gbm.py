"""claimsml: Embedding Gradient Boosting

Gradient boosting on logistic loss over pooled-embedding history vectors.
Each stage fits a depth-limited regression tree to the residuals y - p with
an exhaustive midpoint split search, sets Newton leaf values and is shrunk by
the learning rate. A stage that would still raise the training loss is halved
until it does not; each reduction is logged at DEBUG.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numba import njit

from claimsml.claims.preprocessing import DEFAULT_AGE_TABLE, AgeBucketTable
from claimsml.claims.records import LabeledExample, PatientHistory, Sex
from claimsml.config import GbmConfig
from claimsml.embeddings.table import EmbeddingTable, featurize_many
from claimsml.errors import TrainingError
from claimsml.models.base import ModelKind, ProbabilisticClassifier, code_token_counts, labels_of
from claimsml.narrative.vocab import TokenKind
from claimsml.utils import log_loss, logit, make_rng, sigmoid

logger = logging.getLogger(__name__)

MAX_HALVINGS = 30
_HESSIAN_EPS = 1e-12
_RATE_CLIP = 1e-6


# ── Kernels ──────────────────────────────────────────────────────────────────

@njit(cache=True)
def _best_split(X, r, rows, min_leaf):
    n = rows.shape[0]
    total = 0.0
    for i in range(n):
        total += r[rows[i]]
    parent = total * total / n
    best_feature = -1
    best_threshold = 0.0
    best_gain = 0.0
    vals = np.empty(n)
    for f in range(X.shape[1]):
        for i in range(n):
            vals[i] = X[rows[i], f]
        order = np.argsort(vals, kind="mergesort")
        left = 0.0
        for i in range(n - 1):
            left += r[rows[order[i]]]
            n_left = i + 1
            n_right = n - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            lo = vals[order[i]]
            hi = vals[order[i + 1]]
            if lo == hi:
                continue
            right = total - left
            gain = left * left / n_left + right * right / n_right - parent
            if gain > best_gain + 1e-12:
                best_gain = gain
                best_feature = f
                best_threshold = 0.5 * (lo + hi)
    return best_feature, best_threshold, best_gain


@njit(cache=True)
def _predict_forest(X, feature, threshold, left, right, value, offsets):
    n = X.shape[0]
    out = np.zeros(n)
    for t in range(offsets.shape[0] - 1):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i] += value[base + node]
    return out


# ── Trees ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    gain: float


def find_best_split(X: np.ndarray, residuals: np.ndarray, min_samples_leaf: int = 1,
                    rows: np.ndarray | None = None) -> SplitCandidate | None:
    """Variance-reduction best split over every feature and midpoint; None if no valid split.

    Ties keep the first candidate in (feature, threshold) order.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    r = np.ascontiguousarray(residuals, dtype=np.float64)
    rows = np.arange(X.shape[0], dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    if len(rows) < 2:
        return None
    f, thr, gain = _best_split(X, r, rows, min_samples_leaf)
    if f < 0:
        return None
    return SplitCandidate(int(f), float(thr), float(gain))


@dataclass
class _TreeBuilder:
    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    value: list[float]

    @classmethod
    def empty(cls) -> "_TreeBuilder":
        return cls([], [], [], [], [])

    def grow(self, X, r, h, rows, depth: int, cfg: GbmConfig) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(r[rows].sum() / (h[rows].sum() + _HESSIAN_EPS)))
        if depth >= cfg.max_depth or len(rows) < 2 * cfg.min_samples_leaf:
            return node
        split = find_best_split(X, r, cfg.min_samples_leaf, rows)
        if split is None:
            return node
        goes_left = X[rows, split.feature] <= split.threshold
        self.feature[node] = split.feature
        self.threshold[node] = split.threshold
        self.left[node] = self.grow(X, r, h, rows[goes_left], depth + 1, cfg)
        self.right[node] = self.grow(X, r, h, rows[~goes_left], depth + 1, cfg)
        return node


# ── Classifier ───────────────────────────────────────────────────────────────

class EmbedGbmClassifier(ProbabilisticClassifier):
    kind = ModelKind.EMBED_GBM

    def __init__(self, table: EmbeddingTable, base_score: float, feature: np.ndarray, threshold: np.ndarray,
                 left: np.ndarray, right: np.ndarray, value: np.ndarray, offsets: np.ndarray,
                 age_table: AgeBucketTable = DEFAULT_AGE_TABLE, config: GbmConfig | None = None):
        self.table = table
        self.age_table = age_table
        self.base_score = float(base_score)
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.config = config or GbmConfig()

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def _forest(self, X: np.ndarray, start: int, stop: int) -> np.ndarray:
        offsets = self.offsets[start:stop + 1]
        return _predict_forest(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                               self.left, self.right, self.value, offsets)

    def decision_from_features(self, X: np.ndarray) -> np.ndarray:
        return self.base_score + self._forest(X, 0, self.n_trees)

    def staged_decision_function(self, X: np.ndarray) -> Iterator[np.ndarray]:
        """Decision values after stage 0 (base log-odds) through stage ``n_trees``."""
        F = np.full(X.shape[0], self.base_score)
        yield F.copy()
        for t in range(self.n_trees):
            F = F + self._forest(X, t, t + 1)
            yield F.copy()

    def predict_proba(self, histories: Sequence[PatientHistory]) -> np.ndarray:
        X = featurize_many(histories, self.table, self.age_table)
        return np.atleast_1d(sigmoid(self.decision_from_features(X)))

    def predict_masked(self, history: PatientHistory, tokens: Sequence[str], masks: np.ndarray) -> np.ndarray:
        vocab = self.table.vocab
        dim = self.table.dim
        counts = code_token_counts(history)
        position = {t: j for j, t in enumerate(tokens)}
        base_sum = np.zeros((3, dim))
        base_n = np.zeros(3)
        tok_sum = np.zeros((len(tokens), 3 * dim))
        tok_n = np.zeros((len(tokens), 3))
        for surface, count in counts.items():
            if surface not in vocab:
                continue
            token_id = vocab.id(surface)
            segment = vocab.kind(token_id) - TokenKind.DX
            vec = count * self.table.matrix[token_id].astype(np.float64)
            j = position.get(surface)
            if j is not None:
                tok_sum[j, segment * dim:(segment + 1) * dim] = vec
                tok_n[j, segment] = count
            else:
                base_sum[segment] += vec
                base_n[segment] += count
        masks = np.asarray(masks, dtype=np.float64)
        sums = base_sum.ravel()[None, :] + masks @ tok_sum
        ns = base_n[None, :] + masks @ tok_n
        ns_wide = np.repeat(ns, dim, axis=1)
        means = np.divide(sums, ns_wide, out=np.zeros_like(sums), where=ns_wide > 0)
        demo = np.array([self.age_table.bucket(history.age_years).ordinal, 1.0 if history.sex is Sex.M else 0.0])
        X = np.hstack([means, np.tile(demo, (len(masks), 1))])
        return np.atleast_1d(sigmoid(self.decision_from_features(X)))

    def sections(self) -> dict[str, np.ndarray]:
        return {
            "base_score": np.array([self.base_score]),
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "value": self.value,
            "offsets": self.offsets,
        }

    def manifest_extras(self) -> dict:
        return {"n_trees": self.n_trees, "embedding_dim": self.table.dim,
                "age_lower_bounds": list(self.age_table.lower_bounds)}


def fit_gbm(X: np.ndarray, y: np.ndarray, cfg: GbmConfig) -> tuple[float, dict[str, np.ndarray], list[float]]:
    """Boost on a feature matrix; returns base score, stacked tree arrays and the staged training loss."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    base = logit(float(np.clip(y.mean(), _RATE_CLIP, 1 - _RATE_CLIP)))
    F = np.full(n, base)
    losses = [log_loss(y, F)]
    feature, threshold, left, right, value = [], [], [], [], []
    offsets = [0]
    n_sub = max(1, int(round(cfg.subsample * n)))
    for m in range(cfg.n_trees):
        p = sigmoid(F)
        r = y - p
        h = p * (1.0 - p)
        if n_sub < n:
            rows = np.sort(make_rng(cfg.seed, m).choice(n, size=n_sub, replace=False)).astype(np.int64)
        else:
            rows = np.arange(n, dtype=np.int64)
        tree = _TreeBuilder.empty()
        tree.grow(X, r, h, rows, 0, cfg)
        leaf_values = np.asarray(tree.value)
        t_off = np.array([0, len(tree.feature)], dtype=np.int64)
        t_args = (np.asarray(tree.feature, dtype=np.int64), np.asarray(tree.threshold),
                  np.asarray(tree.left, dtype=np.int64), np.asarray(tree.right, dtype=np.int64))
        raw = _predict_forest(X, *t_args, leaf_values, t_off)

        shrink = cfg.learning_rate
        for _ in range(MAX_HALVINGS):
            if log_loss(y, F + shrink * raw) <= losses[-1]:
                break
            shrink /= 2.0
        else:
            if log_loss(y, F + shrink * raw) > losses[-1]:
                shrink = 0.0
        if shrink != cfg.learning_rate:
            logger.debug("gbm stage step reduced", extra={"fields": {
                "stage": m + 1, "shrink": shrink, "learning_rate": cfg.learning_rate}})
        F = F + shrink * raw
        losses.append(log_loss(y, F))

        feature.extend(tree.feature)
        threshold.extend(tree.threshold)
        left.extend(tree.left)
        right.extend(tree.right)
        value.extend((shrink * leaf_values).tolist())
        offsets.append(len(feature))
    arrays = {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "value": np.asarray(value, dtype=np.float64),
        "offsets": np.asarray(offsets, dtype=np.int64),
    }
    return base, arrays, losses


def train_embed_gbm(
    train: Sequence[LabeledExample],
    table: EmbeddingTable,
    cfg: GbmConfig = GbmConfig(),
    age_table: AgeBucketTable = DEFAULT_AGE_TABLE,
) -> EmbedGbmClassifier:
    if not train:
        raise TrainingError("embedding GBM needs a nonempty training set")
    X = featurize_many([e.history for e in train], table, age_table)
    y = labels_of(train)
    base, arrays, losses = fit_gbm(X, y, cfg)
    logger.info("embedding gbm trained", extra={"fields": {
        "trees": cfg.n_trees, "nodes": len(arrays["feature"]), "initial_loss": losses[0], "final_loss": losses[-1]}})
    return EmbedGbmClassifier(table, base, age_table=age_table, config=cfg, **arrays)
