"""claimsml: Claim Narratives

Pretraining sees one sequence per claim, ``[AGE, SEX] + shuffled codes``.
Fine-tuning sees one sequence per patient, ``[CLS, AGE, SEX]`` followed by
code tokens in chronological order, truncated from the oldest end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from claimsml import config
from claimsml.claims.codes import CodeSystem
from claimsml.claims.preprocessing import DEFAULT_AGE_TABLE, AgeBucketTable
from claimsml.claims.records import Claim, PatientHistory, Sex
from claimsml.narrative.vocab import CLS_ID, TokenKind, Vocabulary, age_token, sex_token
from claimsml.utils import make_rng

_KIND_OF_SYSTEM = {
    CodeSystem.DIAGNOSIS: TokenKind.DX,
    CodeSystem.PROCEDURE: TokenKind.PX,
    CodeSystem.MEDICATION: TokenKind.RX,
}


@dataclass(frozen=True)
class ClaimSequence:
    """Token ids with per-position provenance.

    ``kinds`` records the kind of the source token, so a code that mapped to
    [UNK] still reads as a code position.
    """

    ids: tuple[int, ...]
    claim_ids: tuple[str | None, ...]
    kinds: tuple[TokenKind, ...]

    def __post_init__(self):
        if not self.ids:
            raise ValueError("a sequence holds at least one token")
        if not (len(self.ids) == len(self.claim_ids) == len(self.kinds)):
            raise ValueError("provenance must align with token ids")

    def __len__(self) -> int:
        return len(self.ids)

    def surfaces(self, vocab: Vocabulary) -> list[str]:
        return [vocab.surface(i) for i in self.ids]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.ids, dtype=np.int64)


def _demographics(age_years: int, sex: Sex, vocab: Vocabulary, age_table: AgeBucketTable) -> list[int]:
    return [vocab.id(age_token(age_table.bucket(age_years))), vocab.id(sex_token(sex))]


def tokenize_claim(
    claim: Claim,
    age_years: int,
    sex: Sex,
    vocab: Vocabulary,
    seed: int | np.random.Generator,
    age_table: AgeBucketTable = DEFAULT_AGE_TABLE,
) -> ClaimSequence:
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    codes = list(claim.codes())
    order = rng.permutation(len(codes)) if len(codes) > 1 else range(len(codes))
    codes = [codes[i] for i in order]
    ids = _demographics(age_years, sex, vocab, age_table) + [vocab.id(c.token) for c in codes]
    kinds = [TokenKind.AGE, TokenKind.SEX] + [_KIND_OF_SYSTEM[c.system] for c in codes]
    return ClaimSequence(tuple(ids), (claim.claim_id,) * len(ids), tuple(kinds))


def tokenize_history(
    history: PatientHistory,
    vocab: Vocabulary,
    max_len: int = config.HISTORY_MAX_LEN,
    age_table: AgeBucketTable = DEFAULT_AGE_TABLE,
) -> ClaimSequence:
    if max_len < 4:
        raise ValueError("max_len must leave room for [CLS], AGE, SEX and one code")
    code_ids: list[int] = []
    claim_ids: list[str] = []
    kinds: list[TokenKind] = []
    for claim in history.claims:
        for code in claim.codes():
            code_ids.append(vocab.id(code.token))
            claim_ids.append(claim.claim_id)
            kinds.append(_KIND_OF_SYSTEM[code.system])
    keep = max_len - 3
    if len(code_ids) > keep:
        code_ids, claim_ids, kinds = code_ids[-keep:], claim_ids[-keep:], kinds[-keep:]
    return ClaimSequence(
        tuple([CLS_ID, *_demographics(history.age_years, history.sex, vocab, age_table), *code_ids]),
        tuple([None, None, None, *claim_ids]),
        tuple([TokenKind.SPECIAL, TokenKind.AGE, TokenKind.SEX, *kinds]),
    )


def pretrain_sequences(
    corpus: Iterable[PatientHistory],
    vocab: Vocabulary,
    seed: int,
    age_table: AgeBucketTable = DEFAULT_AGE_TABLE,
) -> Iterator[ClaimSequence]:
    """One shuffled sequence per claim, all drawn from a single seeded stream."""
    rng = make_rng(seed)
    for history in corpus:
        for claim in history.claims:
            yield tokenize_claim(claim, history.age_years, history.sex, vocab, rng, age_table)
