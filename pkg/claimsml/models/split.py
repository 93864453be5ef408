"""claimsml: Train/Test Split"""

from __future__ import annotations

import logging
import math
from typing import Sequence

from claimsml.claims.records import LabeledExample
from claimsml.config import SplitSpec
from claimsml.errors import SplitError
from claimsml.utils import make_rng

logger = logging.getLogger(__name__)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_train_test(
    examples: Sequence[LabeledExample],
    spec: SplitSpec,
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Seeded, disjoint and exhaustive split.

    Under stratification each class contributes round-half-up(fraction * n_c)
    examples to train, clamped to [1, n_c - 1] so both sides see the class.
    Both sides keep the input order.
    """
    n = len(examples)
    if n == 0:
        raise SplitError("cannot split an empty example set")
    rng = make_rng(spec.seed)
    train_idx: list[int] = []
    if spec.stratify_by_label:
        for label in sorted({e.y for e in examples}):
            members = [i for i, e in enumerate(examples) if e.y == label]
            if len(members) < 2:
                raise SplitError(f"class {label} has {len(members)} example(s); stratification needs at least 2")
            k = min(max(_round_half_up(spec.train_fraction * len(members)), 1), len(members) - 1)
            if spec.train_fraction >= 1.0:
                k = len(members)
            chosen = rng.permutation(len(members))[:k]
            train_idx.extend(members[i] for i in chosen)
    else:
        k = _round_half_up(spec.train_fraction * n)
        train_idx = rng.permutation(n)[:k].tolist()

    in_train = set(int(i) for i in train_idx)
    train = [e for i, e in enumerate(examples) if i in in_train]
    test = [e for i, e in enumerate(examples) if i not in in_train]
    if not train or not test:
        raise SplitError(f"split of {n} examples at fraction {spec.train_fraction} leaves an empty side")
    logger.info("split", extra={"fields": {
        "train": len(train), "test": len(test),
        "train_positive": sum(e.y for e in train), "test_positive": sum(e.y for e in test)}})
    return train, test
