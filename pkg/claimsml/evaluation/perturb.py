"""claimsml: Nearest-Embedding Perturbation

Each code occurrence is replaced by the closest code of the same kind in the
pretrained embedding table. Demographics, dates and claim structure stay as
they are; codes outside the vocabulary are left unchanged and recorded.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

from claimsml.claims.codes import MedicalCode, code_from_token
from claimsml.claims.records import PatientHistory
from claimsml.embeddings.table import EmbeddingTable, nearest_id_map


@dataclass(frozen=True)
class PerturbedPair:
    original: PatientHistory
    perturbed: PatientHistory
    substitutions: tuple[tuple[MedicalCode, MedicalCode], ...]
    unknown: tuple[MedicalCode, ...] = ()

    def token_map(self) -> dict[str, str]:
        """Original token -> replacement token."""
        return {a.token: b.token for a, b in self.substitutions}


Perturber = Callable[[PatientHistory], PerturbedPair]


def _apply(history: PatientHistory, mapping: dict[MedicalCode, MedicalCode],
           unknown: list[MedicalCode]) -> PerturbedPair:
    subs = tuple((c, mapping[c]) for c in history.codes() if c in mapping)
    perturbed = history.map_codes(lambda c: mapping.get(c, c))
    return PerturbedPair(history, perturbed, subs, tuple(unknown))


class EmbeddingPerturber:
    def __init__(self, table: EmbeddingTable):
        self.table = table

    @cached_property
    def _nearest(self):
        return nearest_id_map(self.table)

    def replacement(self, code: MedicalCode) -> MedicalCode | None:
        """Nearest same-kind code, or None if ``code`` is not in the vocabulary or has no neighbour."""
        vocab = self.table.vocab
        if code.token not in vocab:
            return None
        nid = int(self._nearest[vocab.id(code.token)])
        if nid < 0:
            return None
        return code_from_token(vocab.surface(nid))

    def __call__(self, history: PatientHistory) -> PerturbedPair:
        mapping: dict[MedicalCode, MedicalCode] = {}
        unknown: list[MedicalCode] = []
        for code in dict.fromkeys(history.codes()):
            repl = self.replacement(code)
            if repl is None:
                unknown.append(code)
            else:
                mapping[code] = repl
        return _apply(history, mapping, unknown)


def perturb_history(history: PatientHistory, table: EmbeddingTable) -> PerturbedPair:
    return EmbeddingPerturber(table)(history)


def identity_perturbation(history: PatientHistory) -> PerturbedPair:
    """Every code replaced by itself."""
    return _apply(history, {c: c for c in history.codes()}, [])
