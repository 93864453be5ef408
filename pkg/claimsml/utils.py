"""claimsml: Utility Functions."""

from __future__ import annotations

import datetime
import logging
import os
import sys

import numpy as np


class KeyValueFormatter(logging.Formatter):
    """Render records as ``ts=... level=... logger=... msg="..." k=v`` lines."""

    def format(self, record: logging.LogRecord) -> str:
        ts = datetime.datetime.fromtimestamp(record.created, tz=datetime.timezone.utc)
        parts = [
            f"ts={ts.isoformat(timespec='milliseconds')}",
            f"level={record.levelname}",
            f"logger={record.name}",
            f"msg={_quote(record.getMessage())}",
        ]
        for key, value in sorted(getattr(record, "fields", {}).items()):
            parts.append(f"{key}={_quote(value)}")
        if record.exc_info:
            parts.append(f"exc={_quote(self.formatException(record.exc_info))}")
        return " ".join(parts)


def _quote(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    text = str(value)
    if text and not any(c in text for c in ' "=\n\t'):
        return text
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def setup_logging(level: str | int = "INFO") -> None:
    """Install a single key=value stderr handler on the package logger."""
    logger = logging.getLogger("claimsml")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False


def setup_env(threads: int, deterministic: bool) -> None:
    """Pin thread pools before numba or torch spin up their own."""
    os.environ["KMP_DUPLICATE_LIB_OK"] = "TRUE"
    os.environ.setdefault("OMP_NUM_THREADS", str(threads))
    import numba
    import torch

    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    torch.set_num_threads(threads)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator for one named stream (e.g. partition index) of ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))


def sigmoid(z):
    """Numerically stable logistic function for scalars and arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def log_loss(y: np.ndarray, z: np.ndarray) -> float:
    """Mean binary cross-entropy of labels ``y`` against logits ``z``."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))
