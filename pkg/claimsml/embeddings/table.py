"""claimsml: Embedding Table

One shared table over the typed vocabulary. Neighbour queries are restricted
to code tokens of the query's kind, so the Dx/Px/Rx spaces never mix.
"""

from __future__ import annotations

import logging
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from claimsml.claims.codes import CodeSystem
from claimsml.claims.preprocessing import DEFAULT_AGE_TABLE, AgeBucketTable
from claimsml.claims.records import PatientHistory, Sex
from claimsml.errors import ArtifactMismatchError, NoCandidateError, UnknownTokenError
from claimsml.narrative.vocab import TokenKind, Vocabulary
from claimsml.services import artifact_store

logger = logging.getLogger(__name__)

_SEGMENT = {
    CodeSystem.DIAGNOSIS: 0,
    CodeSystem.PROCEDURE: 1,
    CodeSystem.MEDICATION: 2,
}
_CODE_KINDS = (TokenKind.DX, TokenKind.PX, TokenKind.RX)
_BLOCK = 512


class EmbeddingTable:
    def __init__(self, vocab: Vocabulary, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[0] != len(vocab):
            raise ValueError(f"matrix has {matrix.shape[0]} rows, vocabulary has {len(vocab)} tokens")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("embedding matrix has non-finite entries")
        self.vocab = vocab
        self.matrix = matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def vector(self, surface: str) -> np.ndarray:
        if surface not in self.vocab:
            raise UnknownTokenError(f"token {surface!r} is not in the vocabulary")
        return self.matrix[self.vocab.id(surface)]

    @cached_property
    def unit(self) -> np.ndarray:
        """Row-normalised float64 copy; zero rows stay zero (cosine 0 with everything)."""
        m = self.matrix.astype(np.float64)
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)

    def candidates(self, kind: TokenKind | None) -> np.ndarray:
        """Ascending ids of code tokens of ``kind`` (any code kind when None)."""
        if kind is None:
            return np.flatnonzero(self.vocab.code_mask())
        return self.vocab.ids_of_kind(kind)


def _query_id(surface: str, table: EmbeddingTable) -> tuple[int, TokenKind]:
    if surface not in table.vocab:
        raise UnknownTokenError(f"token {surface!r} is not in the vocabulary")
    token_id = table.vocab.id(surface)
    kind = table.vocab.kind(token_id)
    if not kind.is_code:
        raise ValueError(f"token {surface!r} is not a code token")
    return token_id, kind


def nearest_codes(surface: str, table: EmbeddingTable, k: int = 1,
                  same_system: bool = True) -> list[tuple[str, float]]:
    """Top-``k`` code tokens by cosine, highest first, ties to the lower id."""
    token_id, kind = _query_id(surface, table)
    cands = table.candidates(kind if same_system else None)
    cands = cands[cands != token_id]
    if len(cands) == 0:
        raise NoCandidateError(f"no other {kind.name} token to compare {surface!r} with")
    sims = table.unit[cands] @ table.unit[token_id]
    order = np.lexsort((cands, -sims))[:k]
    return [(table.vocab.surface(int(cands[i])), float(sims[i])) for i in order]


def nearest_code(surface: str, table: EmbeddingTable, same_system: bool = True) -> str:
    return nearest_codes(surface, table, 1, same_system)[0][0]


def nearest_id_map(table: EmbeddingTable) -> np.ndarray:
    """Nearest same-kind code id for every code id (-1 elsewhere or without candidates).

    Equivalent to ``nearest_code`` per token, computed blockwise per kind.
    """
    out = np.full(len(table.vocab), -1, dtype=np.int64)
    unit = table.unit
    for kind in _CODE_KINDS:
        ids = table.candidates(kind)
        if len(ids) < 2:
            continue
        block_unit = unit[ids]
        for start in range(0, len(ids), _BLOCK):
            rows = ids[start:start + _BLOCK]
            sims = unit[rows] @ block_unit.T
            sims[np.arange(len(rows)), np.arange(start, start + len(rows))] = -np.inf
            # argmax returns the first maximum, i.e. the lowest id since ``ids`` ascend
            out[rows] = ids[np.argmax(sims, axis=1)]
    return out


def featurize_history(history: PatientHistory, table: EmbeddingTable,
                      age_table: AgeBucketTable = DEFAULT_AGE_TABLE) -> np.ndarray:
    """[mean Dx | mean Px | mean Rx | age ordinal | male], length 3*dim + 2.

    Every code occurrence counts; codes missing from the vocabulary are
    skipped and an empty segment is the zero vector.
    """
    dim = table.dim
    sums = np.zeros((3, dim), dtype=np.float64)
    counts = np.zeros(3, dtype=np.int64)
    vocab = table.vocab
    for code in history.codes():
        surface = code.token
        if surface not in vocab:
            continue
        segment = _SEGMENT[code.system]
        sums[segment] += table.matrix[vocab.id(surface)]
        counts[segment] += 1
    means = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    demo = [age_table.bucket(history.age_years).ordinal, 1.0 if history.sex is Sex.M else 0.0]
    return np.concatenate([means.ravel(), demo])


def featurize_many(histories: Iterable[PatientHistory], table: EmbeddingTable,
                   age_table: AgeBucketTable = DEFAULT_AGE_TABLE) -> np.ndarray:
    rows = [featurize_history(h, table, age_table) for h in histories]
    if not rows:
        return np.zeros((0, 3 * table.dim + 2))
    return np.vstack(rows)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    artifact_store.write_embedding_file(path, table.matrix)
    logger.info("embeddings written", extra={"fields": {
        "path": str(path), "rows": table.matrix.shape[0], "dim": table.dim}})


def load_embeddings(path: str | Path, vocab: Vocabulary) -> EmbeddingTable:
    matrix = artifact_store.read_embedding_file(path)
    if matrix.shape[0] != len(vocab):
        raise ArtifactMismatchError(path, f"table has {matrix.shape[0]} rows, vocabulary has {len(vocab)} tokens")
    return EmbeddingTable(vocab, matrix)
