"""Tests for CBOW training, neighbour queries and pooled featurization."""

import numpy as np
import pytest

from claimsml.claims.records import Sex
from claimsml.config import CbowConfig
from claimsml.embeddings.cbow import TABLE_DOMAIN, build_cum_table, cbow_step, train_cbow
from claimsml.embeddings.table import (
    EmbeddingTable,
    featurize_history,
    featurize_many,
    nearest_code,
    nearest_codes,
    nearest_id_map,
)
from claimsml.errors import NoCandidateError, TrainingError, UnknownTokenError
from claimsml.narrative.tokenize import pretrain_sequences
from claimsml.narrative.vocab import TokenKind
from tests.helpers import history_of, toy_vocab

CODES = ["DX_E119", "DX_E118", "DX_I10", "PX_99214", "PX_99213", "RX_0143988701"]
VECTORS = {
    "DX_E119": [1.0, 0.0],
    "DX_E118": [0.9, 0.1],
    "DX_I10": [0.0, 1.0],
    "PX_99214": [1.0, 0.0],
    "PX_99213": [-1.0, 0.0],
    "RX_0143988701": [1.0, 0.0],
}


def _table(vectors=VECTORS, codes=CODES):
    vocab = toy_vocab(codes)
    matrix = np.zeros((len(vocab), 2), dtype=np.float32)
    for surface, vec in vectors.items():
        matrix[vocab.id(surface)] = vec
    return EmbeddingTable(vocab, matrix)


class TestCbowGradient:
    """The reference step matches finite differences."""

    def test_gradcheck(self):
        rng = np.random.default_rng(0)
        w_in = rng.normal(scale=0.5, size=(6, 3))
        w_out = rng.normal(scale=0.5, size=(6, 3))
        context, center, negatives = np.array([1, 2, 2]), 3, np.array([4, 1])
        _, grad_in, grad_out = cbow_step(w_in, w_out, context, center, negatives)
        eps = 1e-6
        for weights, grad in ((w_in, grad_in), (w_out, grad_out)):
            numeric = np.zeros_like(weights)
            for idx in np.ndindex(weights.shape):
                saved = weights[idx]
                weights[idx] = saved + eps
                up, _, _ = cbow_step(w_in, w_out, context, center, negatives)
                weights[idx] = saved - eps
                down, _, _ = cbow_step(w_in, w_out, context, center, negatives)
                weights[idx] = saved
                numeric[idx] = (up - down) / (2 * eps)
            np.testing.assert_allclose(grad, numeric, atol=1e-6)

    def test_cum_table(self):
        cum = build_cum_table(np.array([0, 4, 0, 1]), 0.75)
        assert cum[-1] == TABLE_DOMAIN
        assert cum[0] == 0 and cum[1] == cum[2]
        assert np.all(np.diff(cum) >= 0)
        with pytest.raises(TrainingError):
            build_cum_table(np.zeros(3), 0.75)


class TestTrainCbow:
    """End-to-end training on the small generated corpus."""

    def test_deterministic_and_loss_decreases(self, pretrain_corpus, corpus_vocab):
        cfg = CbowConfig(dim=8, window=4, epochs=3, seed=9)
        runs = []
        for _ in range(2):
            losses = []
            seqs = pretrain_sequences(pretrain_corpus[:300], corpus_vocab, 9)
            runs.append((train_cbow(seqs, corpus_vocab, cfg, loss_history=losses), losses))
        (a, losses), (b, _) = runs
        np.testing.assert_array_equal(a.matrix, b.matrix)
        assert len(losses) == 3
        assert losses[-1] < losses[0]

    def test_empty_corpus(self, corpus_vocab):
        with pytest.raises(TrainingError):
            train_cbow([], corpus_vocab, CbowConfig(dim=4, epochs=1))

    def test_shape(self, corpus_table, corpus_vocab):
        assert corpus_table.matrix.shape == (len(corpus_vocab), 16)
        assert np.all(np.isfinite(corpus_table.matrix))


class TestNearest:
    """Same-kind cosine neighbours."""

    def test_same_kind_only(self):
        table = _table()
        assert nearest_code("DX_E119", table) == "DX_E118"
        assert nearest_code("PX_99214", table) == "PX_99213"
        assert nearest_code("DX_E119", table, same_system=False) == "PX_99214"

    def test_top_k_order(self):
        result = nearest_codes("DX_E119", _table(), k=5)
        assert [s for s, _ in result] == ["DX_E118", "DX_I10"]
        assert result[0][1] == pytest.approx(0.9 / np.hypot(0.9, 0.1))

    def test_tie_breaks_to_lower_id(self):
        vectors = {"DX_E119": [1.0, 0.0], "DX_E118": [0.0, 1.0], "DX_I10": [1.0, 1.0]}
        assert nearest_code("DX_I10", _table(vectors, CODES[:3])) == "DX_E119"

    def test_errors(self):
        table = _table()
        with pytest.raises(UnknownTokenError):
            nearest_code("DX_Q909", table)
        with pytest.raises(NoCandidateError):
            nearest_code("RX_0143988701", table)
        with pytest.raises(ValueError):
            nearest_code("SEX_F", table)

    def test_id_map_matches_brute_force(self, corpus_table):
        vocab = corpus_table.vocab
        mapping = nearest_id_map(corpus_table)
        for kind in (TokenKind.DX, TokenKind.PX, TokenKind.RX):
            for token_id in vocab.ids_of_kind(kind)[:40]:
                expected = nearest_code(vocab.surface(int(token_id)), corpus_table)
                assert vocab.surface(int(mapping[token_id])) == expected
        assert mapping[vocab.id("SEX_F")] == -1


class TestFeaturize:
    """[mean Dx | mean Px | mean Rx | age ordinal | male]."""

    def test_segment_means(self):
        table = _table()
        history = history_of("p", ["DX_E119", "DX_E118", "PX_99214", "DX_Q909"], age=70, sex=Sex.M)
        features = featurize_history(history, table)
        np.testing.assert_allclose(features, [0.95, 0.05, 1.0, 0.0, 0.0, 0.0, 7.0, 1.0], atol=1e-6)

    def test_occurrences_weighted(self):
        table = _table()
        history = history_of("p", ["DX_E119", "DX_E119", "DX_I10"])
        np.testing.assert_allclose(featurize_history(history, table)[:2], [2 / 3, 1 / 3], atol=1e-6)

    def test_empty_history(self):
        features = featurize_many([history_of("e", [])], _table())
        assert features.shape == (1, 8)
        assert np.all(features[0, :6] == 0)
