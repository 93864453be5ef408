import numpy as np
import pytest

from claimsml.claims.records import Sex
from claimsml.embeddings.table import EmbeddingTable, nearest_code
from claimsml.evaluation.perturb import EmbeddingPerturber, identity_perturbation, perturb_history
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


@pytest.fixture(scope="module")
def table():
    vocab = toy_vocab(CODES)
    matrix = np.zeros((len(vocab), 2))
    for surface, vec in VECTORS.items():
        matrix[vocab.id(surface)] = vec
    return EmbeddingTable(vocab, matrix)


class TestEmbeddingPerturber:
    def test_same_kind_replacements(self, table):
        history = history_of("p", ["DX_E119", "PX_99214", "DX_E119", "DX_I10"], age=61, sex=Sex.M)
        pair = perturb_history(history, table)
        assert [c.token for c in pair.perturbed.codes()] == ["DX_E118", "PX_99213", "DX_E118", "DX_E118"]
        assert pair.token_map() == {"DX_E119": "DX_E118", "PX_99214": "PX_99213", "DX_I10": "DX_E118"}
        assert len(pair.substitutions) == 4

    def test_structure_preserved(self, table):
        history = history_of("p", ["DX_E119", "PX_99214"], age=61, sex=Sex.M)
        perturbed = perturb_history(history, table).perturbed
        assert (perturbed.patient_id, perturbed.age_years, perturbed.sex, perturbed.anchor_date) == \
            (history.patient_id, history.age_years, history.sex, history.anchor_date)
        assert [c.service_date for c in perturbed.claims] == [c.service_date for c in history.claims]
        assert [c.claim_id for c in perturbed.claims] == [c.claim_id for c in history.claims]

    def test_primary_diagnosis_follows(self, table):
        perturbed = perturb_history(history_of("p", ["DX_E119"]), table).perturbed
        assert perturbed.claims[0].primary_diagnosis.token == "DX_E118"

    def test_unknown_and_lonely_codes_unchanged(self, table):
        history = history_of("p", ["DX_Q909", "RX_0143988701"])
        pair = perturb_history(history, table)
        assert [c.token for c in pair.perturbed.codes()] == ["DX_Q909", "RX_0143988701"]
        assert [c.token for c in pair.unknown] == ["DX_Q909", "RX_0143988701"]
        assert pair.substitutions == ()

    def test_empty_history(self, table):
        pair = perturb_history(history_of("e", []), table)
        assert pair.perturbed == pair.original

    def test_matches_brute_force(self, corpus_table, labeled_cohort):
        perturber = EmbeddingPerturber(corpus_table)
        for example in labeled_cohort[:40]:
            pair = perturber(example.history)
            for before, after in pair.substitutions:
                assert after.token == nearest_code(before.token, corpus_table)
                assert after.system is before.system


def test_identity_perturbation():
    history = history_of("p", ["DX_E119", "PX_99214"])
    pair = identity_perturbation(history)
    assert pair.perturbed == history
    assert pair.token_map() == {"DX_E119": "DX_E119", "PX_99214": "PX_99214"}
