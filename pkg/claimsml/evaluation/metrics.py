"""claimsml: Classification Metrics

Precision, recall, F1 and accuracy on the Hospitalized class at the 0.5
threshold, in percent; AUC is a fraction in [0, 1]. A ratio whose
denominator is zero is reported as None and named in ``undefined``.
It is never silently 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.metrics import confusion_matrix, roc_auc_score

from claimsml.models.base import DECISION_THRESHOLD


@dataclass(frozen=True)
class MetricsReport:
    n: int
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float | None
    recall: float | None
    f1: float | None
    accuracy: float
    auc: float | None
    undefined: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict:
        out = asdict(self)
        out["undefined"] = list(self.undefined)
        return out


def _percent(num: int, den: int) -> float | None:
    return 100.0 * num / den if den else None


def compute_metrics(predictions, labels) -> MetricsReport:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} must be equal-length vectors")
    if len(p) == 0:
        raise ValueError("metrics need at least one prediction")
    decided = (p > DECISION_THRESHOLD).astype(np.int64)
    tn, fp, fn, tp = (int(v) for v in confusion_matrix(y, decided, labels=[0, 1]).ravel())

    undefined = []
    precision = _percent(tp, tp + fp)
    recall = _percent(tp, tp + fn)
    if precision is None:
        undefined.append("precision")
    if recall is None:
        undefined.append("recall")
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    elif precision is not None and recall is not None:
        f1 = 0.0
    else:
        f1 = None
        undefined.append("f1")
    auc = float(roc_auc_score(y, p)) if len(np.unique(y)) == 2 else None
    if auc is None:
        undefined.append("auc")
    return MetricsReport(
        n=len(p), tp=tp, fp=fp, tn=tn, fn=fn,
        precision=precision, recall=recall, f1=f1,
        accuracy=100.0 * (tp + tn) / len(p), auc=auc,
        undefined=tuple(undefined),
    )
