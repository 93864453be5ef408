"""claimsml: Risk-factor Logistic Regression

Logistic regression on the 25 risk indicators plus age bucket and sex.
Features are standardized internally; the fit is full-batch gradient descent
on mean log-loss with an L2 penalty on the weights (not the intercept).
"""

from __future__ import annotations

import logging
import warnings
from typing import Sequence

import numpy as np

from claimsml.claims.codes import code_from_token
from claimsml.claims.preprocessing import DEFAULT_AGE_TABLE, AgeBucketTable
from claimsml.claims.records import LabeledExample, PatientHistory, Sex
from claimsml.claims.risk_factors import RiskFactorMap, map_risk_factors
from claimsml.config import LogitConfig
from claimsml.errors import ConvergenceWarning, TrainingError
from claimsml.models.base import ModelKind, ProbabilisticClassifier, code_token_counts, labels_of
from claimsml.utils import log_loss, logit, sigmoid

logger = logging.getLogger(__name__)

_RATE_CLIP = 1e-6


def logistic_loss_and_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean log-loss + l2/2 * ||w||^2 and its gradient; ``params`` is [w..., b]."""
    w, b = params[:-1], params[-1]
    z = X @ w + b
    loss = log_loss(y, z) + 0.5 * l2 * float(w @ w)
    r = sigmoid(z) - y
    grad = np.empty_like(params)
    grad[:-1] = X.T @ r / len(y) + l2 * w
    grad[-1] = r.mean()
    return loss, grad


class RiskLogitClassifier(ProbabilisticClassifier):
    kind = ModelKind.RISK_LOGIT

    def __init__(self, risk_map: RiskFactorMap, coef: np.ndarray, intercept: float,
                 mean: np.ndarray | None = None, scale: np.ndarray | None = None,
                 age_table: AgeBucketTable = DEFAULT_AGE_TABLE, config: LogitConfig | None = None):
        n = len(risk_map) + 2
        self.risk_map = risk_map
        self.age_table = age_table
        self.coef = np.asarray(coef, dtype=np.float64)
        self.intercept = float(intercept)
        self.mean = np.zeros(n) if mean is None else np.asarray(mean, dtype=np.float64)
        self.scale = np.ones(n) if scale is None else np.asarray(scale, dtype=np.float64)
        self.config = config or LogitConfig()
        if self.coef.shape != (n,):
            raise ValueError(f"expected {n} coefficients, got {self.coef.shape}")

    @property
    def raw_coefficients(self) -> np.ndarray:
        """Weights on unstandardized features."""
        return self.coef / self.scale

    def features(self, histories: Sequence[PatientHistory]) -> np.ndarray:
        return np.vstack([map_risk_factors(h, self.risk_map, self.age_table) for h in histories]) \
            if len(histories) else np.zeros((0, len(self.coef)))

    def _decision(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.mean) / self.scale) @ self.coef + self.intercept

    def predict_proba(self, histories: Sequence[PatientHistory]) -> np.ndarray:
        return np.atleast_1d(sigmoid(self._decision(self.features(histories))))

    def predict_masked(self, history: PatientHistory, tokens: Sequence[str], masks: np.ndarray) -> np.ndarray:
        n_risk = len(self.risk_map)
        listed = set(tokens)
        base = np.zeros(n_risk)
        for token in code_token_counts(history):
            if token not in listed:
                for name in self.risk_map.lookup(code_from_token(token)):
                    base[self.risk_map.index_of(name)] = 1.0
        member = np.zeros((len(tokens), n_risk))
        for j, token in enumerate(tokens):
            for name in self.risk_map.lookup(code_from_token(token)):
                member[j, self.risk_map.index_of(name)] = 1.0
        masks = np.asarray(masks, dtype=np.float64)
        risks = np.maximum(base[None, :], (masks @ member > 0).astype(np.float64))
        demo = np.array([self.age_table.bucket(history.age_years).ordinal, 1.0 if history.sex is Sex.M else 0.0])
        X = np.hstack([risks, np.tile(demo, (len(masks), 1))])
        return np.atleast_1d(sigmoid(self._decision(X)))

    def sections(self) -> dict[str, np.ndarray]:
        return {"coef": self.coef, "intercept": np.array([self.intercept]), "mean": self.mean, "scale": self.scale}

    def manifest_extras(self) -> dict:
        return {"risk_names": list(self.risk_map.risk_names), "age_lower_bounds": list(self.age_table.lower_bounds)}


def train_risk_logit(
    train: Sequence[LabeledExample],
    risk_map: RiskFactorMap,
    cfg: LogitConfig = LogitConfig(),
    age_table: AgeBucketTable = DEFAULT_AGE_TABLE,
) -> RiskLogitClassifier:
    if not train:
        raise TrainingError("risk-factor logit needs a nonempty training set")
    X = np.vstack([map_risk_factors(e.history, risk_map, age_table) for e in train])
    y = labels_of(train)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale

    base_rate = float(np.clip(y.mean(), _RATE_CLIP, 1 - _RATE_CLIP))
    params = np.zeros(Z.shape[1] + 1)
    params[-1] = logit(base_rate)
    loss = float("nan")
    converged = False
    for iteration in range(1, cfg.max_iter + 1):
        loss, grad = logistic_loss_and_grad(params, Z, y, cfg.l2)
        if float(np.max(np.abs(grad))) < cfg.tol:
            converged = True
            break
        params -= cfg.learning_rate * grad
    if not converged:
        logger.warning("risk logit did not converge", extra={"fields": {"iterations": cfg.max_iter, "loss": loss}})
        warnings.warn(f"risk logit stopped after {cfg.max_iter} iterations", ConvergenceWarning, stacklevel=2)
    else:
        logger.info("risk logit converged", extra={"fields": {"iterations": iteration, "loss": loss}})
    return RiskLogitClassifier(risk_map, params[:-1].copy(), float(params[-1]), mean, scale, age_table, cfg)
