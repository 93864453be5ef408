"""claimsml: Export Service

Report rendering. Every report is written twice: ``<stem>.json`` (sorted
keys, 2-space indent) and ``<stem>.txt`` (aligned columns).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from claimsml.evaluation.lime import Explanation
from claimsml.evaluation.metrics import MetricsReport
from claimsml.evaluation.sanity import SanityReport
from claimsml.evaluation.stability import StabilityReport

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.4f}".format


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def to_json(payload: dict) -> str:
    return json.dumps(_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def render_table(frame: pd.DataFrame) -> str:
    """Aligned plain-text table; missing values print as ``n/a``."""
    if frame.empty:
        return "(empty)\n"
    return frame.to_string(float_format=FLOAT_FORMAT, na_rep="n/a") + "\n"


def write_report(stem: str | Path, payload: dict, frame: pd.DataFrame) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    json_path = stem.with_suffix(".json")
    text_path = stem.with_suffix(".txt")
    json_path.write_text(to_json(payload), encoding="utf-8")
    text_path.write_text(render_table(frame), encoding="utf-8")
    logger.info("report written", extra={"fields": {"json": str(json_path), "text": str(text_path)}})
    return json_path, text_path


# ── Frames ───────────────────────────────────────────────────────────────────

def _na(value):
    return np.nan if value is None else value


def metrics_frame(reports: Mapping[str, MetricsReport]) -> pd.DataFrame:
    rows = {
        name: {"precision": _na(r.precision), "recall": _na(r.recall), "f1": _na(r.f1), "accuracy": r.accuracy,
               "auc": _na(r.auc), "tp": r.tp, "fp": r.fp, "tn": r.tn, "fn": r.fn, "n": r.n}
        for name, r in reports.items()
    }
    return pd.DataFrame.from_dict(rows, orient="index").rename_axis("model")


def stability_frame(reports: Sequence[StabilityReport]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"model": r.model, "prob_diff_mean": r.predict_prob_diff_mean, "agreement": r.predict_agreement,
          "importance_mse": r.var_importance_mse, "pairs": r.n_pairs} for r in reports]
    ).set_index("model")


def sanity_frame(report: SanityReport) -> pd.DataFrame:
    rows = {
        name: {"high_risk": s.high_risk_mean * 100.0, "no_risk": s.no_risk_mean * 100.0,
               "empty": s.empty_mean * 100.0, "margin": s.margin * 100.0,
               "high_above_0.5": s.high_risk_above_threshold,
               "over_svm": report.margin_over_svm[name] * 100.0 if name in report.margin_over_svm else np.nan}
        for name, s in report.models.items()
    }
    return pd.DataFrame.from_dict(rows, orient="index").rename_axis("model")


def explanation_frame(patient_ids: Sequence[str], explanations: Sequence[Explanation], top: int = 5) -> pd.DataFrame:
    """One row per (patient, token) for the ``top`` tokens by absolute importance."""
    rows = []
    for pid, exp in zip(patient_ids, explanations):
        for rank, (token, weight) in enumerate(exp.ranked()[:top], start=1):
            rows.append({"patient": pid, "prediction": exp.prediction, "rank": rank,
                         "token": token, "importance": weight, "r2": exp.r2})
    return pd.DataFrame(rows, columns=["patient", "prediction", "rank", "token", "importance", "r2"])
