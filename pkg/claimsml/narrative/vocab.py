"""claimsml: Typed Vocabulary

Token surfaces carry their kind in the prefix (``AGE_``, ``SEX_``, ``DX_``,
``PX_``, ``RX_``, bracketed specials). Ids are dense: the four specials sit
at 0-3, then every other token ordered by descending frequency with ties
broken by surface.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from collections import Counter
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from claimsml import config
from claimsml.claims.preprocessing import DEFAULT_AGE_TABLE, AgeBucket, AgeBucketTable
from claimsml.claims.records import PatientHistory, Sex
from claimsml.errors import ArtifactError, SchemaError, TrainingError

logger = logging.getLogger(__name__)

PAD, UNK, CLS, MASK = "[PAD]", "[UNK]", "[CLS]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, MASK)
PAD_ID, UNK_ID, CLS_ID, MASK_ID = range(4)


class TokenKind(int, Enum):
    SPECIAL = 0
    AGE = 1
    SEX = 2
    DX = 3
    PX = 4
    RX = 5

    @property
    def is_code(self) -> bool:
        return self in (TokenKind.DX, TokenKind.PX, TokenKind.RX)


_KIND_PREFIX = (
    ("AGE_", TokenKind.AGE),
    ("SEX_", TokenKind.SEX),
    ("DX_", TokenKind.DX),
    ("PX_", TokenKind.PX),
    ("RX_", TokenKind.RX),
)


def kind_of(surface: str) -> TokenKind:
    if surface in SPECIALS:
        return TokenKind.SPECIAL
    for prefix, kind in _KIND_PREFIX:
        if surface.startswith(prefix):
            return kind
    raise ValueError(f"token {surface!r} has no known kind prefix")


def age_token(bucket: AgeBucket) -> str:
    return f"AGE_{bucket.name}"


def sex_token(sex: Sex) -> str:
    return f"SEX_{sex.value}"


def demographic_tokens(age_table: AgeBucketTable = DEFAULT_AGE_TABLE) -> list[str]:
    return [age_token(b) for b in age_table] + [sex_token(s) for s in Sex]


class Vocabulary:
    """Bidirectional token <-> id map; unknown surfaces resolve to [UNK]."""

    def __init__(self, surfaces: Iterable[str], frequencies: Iterable[int] | None = None,
                 min_count: int = config.VOCAB_MIN_COUNT):
        self.surfaces = tuple(surfaces)
        if self.surfaces[:4] != SPECIALS:
            raise ValueError("vocabulary must start with [PAD], [UNK], [CLS], [MASK]")
        self.frequencies = tuple(frequencies) if frequencies is not None else (0,) * len(self.surfaces)
        if len(self.frequencies) != len(self.surfaces):
            raise ValueError("frequencies must align with surfaces")
        self.min_count = min_count
        self._ids = {s: i for i, s in enumerate(self.surfaces)}
        if len(self._ids) != len(self.surfaces):
            raise ValueError("duplicate surface in vocabulary")
        self.kinds = np.array([kind_of(s).value for s in self.surfaces], dtype=np.int8)

    def __len__(self) -> int:
        return len(self.surfaces)

    def __contains__(self, surface: str) -> bool:
        return surface in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and other.surfaces == self.surfaces

    def id(self, surface: str) -> int:
        return self._ids.get(surface, UNK_ID)

    def surface(self, token_id: int) -> str:
        return self.surfaces[token_id]

    def kind(self, token_id: int) -> TokenKind:
        return TokenKind(int(self.kinds[token_id]))

    def ids_of_kind(self, kind: TokenKind) -> np.ndarray:
        return np.flatnonzero(self.kinds == kind.value)

    def code_mask(self) -> np.ndarray:
        return self.kinds >= TokenKind.DX.value

    def fingerprint(self) -> str:
        """SHA-256 of the id order."""
        return hashlib.sha256("\n".join(self.surfaces).encode("utf-8")).hexdigest()

    # ── Persistence ──────────────────────────────────────────────────────

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for i, (surface, freq) in enumerate(zip(self.surfaces, self.frequencies)):
                writer.writerow([i, surface, freq])
        logger.info("vocabulary written", extra={"fields": {"path": str(path), "size": len(self)}})

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise ArtifactError(path, "vocabulary not found")
        surfaces: list[str] = []
        freqs: list[int] = []
        with path.open(encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
                if len(row) != 3:
                    raise SchemaError(f"expected 3 columns, found {len(row)}", str(path), lineno)
                try:
                    token_id, freq = int(row[0]), int(row[2])
                except ValueError:
                    raise SchemaError("id and frequency must be integers", str(path), lineno) from None
                if token_id != lineno - 1:
                    raise SchemaError(f"ids must be dense and sorted, found {token_id}", str(path), lineno)
                surfaces.append(row[1])
                freqs.append(freq)
        try:
            return cls(surfaces, freqs)
        except ValueError as e:
            raise SchemaError(str(e), str(path)) from None


def build_vocab(
    corpus: Iterable[PatientHistory],
    min_count: int = config.VOCAB_MIN_COUNT,
    age_table: AgeBucketTable = DEFAULT_AGE_TABLE,
) -> Vocabulary:
    """Count tokens as they appear in claim sequences (demographics once per claim)."""
    counts: Counter[str] = Counter()
    n_claims = 0
    for history in corpus:
        demo = (age_token(age_table.bucket(history.age_years)), sex_token(history.sex))
        for claim in history.claims:
            n_claims += 1
            counts.update(demo)
            counts.update(code.token for code in claim.codes())
    if n_claims == 0:
        raise TrainingError("cannot build a vocabulary from an empty corpus")

    always = set(demographic_tokens(age_table))
    kept = [s for s, c in counts.items() if c >= min_count or s in always]
    kept.extend(s for s in always if s not in counts)
    kept.sort(key=lambda s: (-counts.get(s, 0), s))
    vocab = Vocabulary([*SPECIALS, *kept], [0, 0, 0, 0, *(counts.get(s, 0) for s in kept)], min_count)
    logger.info("vocabulary built", extra={"fields": {
        "size": len(vocab), "claims": n_claims, "distinct": len(counts), "min_count": min_count}})
    return vocab
