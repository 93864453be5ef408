"""Tests for the typed vocabulary and claim tokenization."""

import numpy as np
import pytest

from claimsml.claims.records import PatientHistory, Sex
from claimsml.errors import SchemaError, TrainingError
from claimsml.narrative.tokenize import pretrain_sequences, tokenize_claim, tokenize_history
from claimsml.narrative.vocab import (
    CLS_ID,
    SPECIALS,
    UNK_ID,
    TokenKind,
    Vocabulary,
    build_vocab,
    kind_of,
)
from tests.helpers import ANCHOR, claim_on, days_before, dx, history_of, px, rx, toy_vocab


def _corpus():
    return [
        PatientHistory("h1", 50, Sex.F, (
            claim_on("h1-1", days_before(90), [dx("E119")]),
            claim_on("h1-2", days_before(60), [dx("E119"), px("99214")]),
        )),
        PatientHistory("h2", 70, Sex.M, (claim_on("h2-1", days_before(30), [dx("E119")]),)),
    ]


class TestBuildVocab:
    """Id order, frequency threshold and always-present demographics."""

    def test_order_and_threshold(self):
        vocab = build_vocab(_corpus(), min_count=2)
        assert vocab.surfaces[:4] == SPECIALS
        assert vocab.surfaces[4:7] == ("DX_E119", "AGE_49-64", "SEX_F")
        assert vocab.surfaces[7:9] == ("AGE_65-78", "SEX_M")
        assert "PX_99214" not in vocab
        assert len(vocab) == 4 + 1 + 9 + 2

    def test_unknown_maps_to_unk(self):
        vocab = build_vocab(_corpus(), min_count=2)
        assert vocab.id("PX_99214") == UNK_ID

    def test_empty_corpus(self):
        with pytest.raises(TrainingError):
            build_vocab([])

    def test_kinds(self):
        vocab = build_vocab(_corpus(), min_count=1)
        assert vocab.kind(vocab.id("PX_99214")) is TokenKind.PX
        assert kind_of("[MASK]") is TokenKind.SPECIAL
        assert set(vocab.ids_of_kind(TokenKind.SEX)) == {vocab.id("SEX_F"), vocab.id("SEX_M")}
        with pytest.raises(ValueError):
            kind_of("LAB_123")


class TestVocabularyFile:
    """TSV persistence."""

    def test_roundtrip(self, tmp_path):
        vocab = build_vocab(_corpus(), min_count=1)
        vocab.save(tmp_path / "vocab.tsv")
        loaded = Vocabulary.load(tmp_path / "vocab.tsv")
        assert loaded == vocab
        assert loaded.frequencies == vocab.frequencies
        assert loaded.fingerprint() == vocab.fingerprint()

    def test_non_dense_ids(self, tmp_path):
        path = tmp_path / "vocab.tsv"
        path.write_text("0\t[PAD]\t0\n1\t[UNK]\t0\n3\t[CLS]\t0\n", encoding="utf-8")
        with pytest.raises(SchemaError) as info:
            Vocabulary.load(path)
        assert info.value.line == 3

    def test_missing_specials(self, tmp_path):
        path = tmp_path / "vocab.tsv"
        path.write_text("0\tDX_E119\t4\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            Vocabulary.load(path)


class TestTokenize:
    """Pretraining and fine-tuning sequences."""

    def test_claim_sequence(self):
        vocab = toy_vocab(["DX_E119", "DX_I10", "PX_99214", "RX_0143988701"])
        claim = claim_on("c", days_before(10), [dx("E119"), dx("I10"), px("99214"), rx("0143988701")])
        seq = tokenize_claim(claim, 50, Sex.F, vocab, seed=7)
        surfaces = seq.surfaces(vocab)
        assert surfaces[:2] == ["AGE_49-64", "SEX_F"]
        assert sorted(surfaces[2:]) == sorted(["DX_E119", "DX_I10", "PX_99214", "RX_0143988701"])
        assert seq.claim_ids == ("c",) * 6
        assert tokenize_claim(claim, 50, Sex.F, vocab, seed=7) == seq

    def test_history_sequence(self):
        vocab = toy_vocab(["DX_E119", "DX_I10", "PX_99214"])
        history = history_of("p", ["DX_E119", "PX_99214", "DX_I10"], age=70, sex=Sex.M)
        seq = tokenize_history(history, vocab)
        assert seq.ids[0] == CLS_ID
        assert seq.surfaces(vocab)[1:] == ["AGE_65-78", "SEX_M", "DX_E119", "PX_99214", "DX_I10"]
        assert seq.kinds[:3] == (TokenKind.SPECIAL, TokenKind.AGE, TokenKind.SEX)

    def test_truncates_oldest(self):
        vocab = toy_vocab(["DX_E119", "DX_I10", "PX_99214"])
        history = history_of("p", ["DX_E119", "PX_99214", "DX_I10"])
        seq = tokenize_history(history, vocab, max_len=5)
        assert len(seq) == 5
        assert seq.surfaces(vocab)[3:] == ["PX_99214", "DX_I10"]

    def test_unknown_code_keeps_kind(self):
        vocab = toy_vocab(["DX_E119"])
        seq = tokenize_history(history_of("p", ["DX_Q909"]), vocab)
        assert seq.ids[3] == UNK_ID
        assert seq.kinds[3] is TokenKind.DX

    def test_one_sequence_per_claim(self):
        corpus = _corpus()
        vocab = build_vocab(corpus, min_count=1)
        sequences = list(pretrain_sequences(corpus, vocab, seed=1))
        assert len(sequences) == 3
        assert [len(s) for s in sequences] == [3, 4, 3]
        assert all(np.all(s.as_array() != CLS_ID) for s in sequences)
