import logging

import numpy as np
import pytest

from claimsml.config import GbmConfig
from claimsml.embeddings.table import EmbeddingTable, featurize_many
from claimsml.errors import TrainingError
from claimsml.models.base import drop_tokens, explanation_tokens
from claimsml.models.gbm import fit_gbm, find_best_split, train_embed_gbm
from claimsml.utils import log_loss
from tests.helpers import history_of, separable_examples, toy_vocab

POSITIVE = ["DX_E119", "DX_I10", "PX_99214"]
NEGATIVE = ["DX_J449", "PX_99213", "RX_0143988701"]


def brute_force_split(X, r, min_leaf):
    n = len(r)
    total = r.sum()
    best = (None, None, 0.0)
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for lo, hi in zip(values[:-1], values[1:]):
            threshold = 0.5 * (lo + hi)
            left = X[:, f] <= threshold
            n_left = int(left.sum())
            if n_left < min_leaf or n - n_left < min_leaf:
                continue
            s_left = r[left].sum()
            gain = s_left**2 / n_left + (total - s_left)**2 / (n - n_left) - total**2 / n
            if gain > best[2] + 1e-12:
                best = (f, threshold, gain)
    return best


@pytest.fixture(scope="module")
def table():
    vocab = toy_vocab(POSITIVE + NEGATIVE)
    matrix = np.random.default_rng(12).normal(size=(len(vocab), 4))
    return EmbeddingTable(vocab, matrix)


class TestFindBestSplit:
    @pytest.mark.parametrize("seed,min_leaf", [(0, 1), (1, 1), (2, 3), (3, 5)])
    def test_matches_brute_force(self, seed, min_leaf):
        rng = np.random.default_rng(seed)
        X = np.round(rng.normal(size=(40, 3)), 1)
        r = rng.normal(size=40)
        split = find_best_split(X, r, min_leaf)
        feature, threshold, gain = brute_force_split(X, r, min_leaf)
        assert split is not None
        assert split.feature == feature
        assert split.threshold == pytest.approx(threshold)
        assert split.gain == pytest.approx(gain)

    def test_no_split_on_constant_features(self):
        assert find_best_split(np.ones((10, 2)), np.arange(10.0)) is None

    def test_min_leaf_blocks_split(self):
        X = np.array([[0.0], [1.0], [2.0]])
        assert find_best_split(X, np.array([1.0, -1.0, 1.0]), min_samples_leaf=2) is None


class TestFitGbm:
    @pytest.fixture(scope="class")
    def fitted(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(300, 3))
        y = ((X[:, 0] + 0.3 * rng.normal(size=300)) > 0.2).astype(float)
        return X, y, fit_gbm(X, y, GbmConfig(n_trees=30, max_depth=2, min_samples_leaf=5, learning_rate=0.3))

    def test_loss_never_increases(self, fitted):
        _, y, (base, _, losses) = fitted
        assert len(losses) == 31
        assert losses[0] == pytest.approx(log_loss(y, np.full(len(y), base)))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 0.5 * losses[0]

    def test_default_learning_rate_never_reduced(self, fitted, caplog):
        X, y, _ = fitted
        caplog.set_level(logging.DEBUG, logger="claimsml.models.gbm")
        cfg = GbmConfig(n_trees=30, max_depth=2, min_samples_leaf=5)
        assert cfg.learning_rate == GbmConfig().learning_rate
        _, _, losses = fit_gbm(X, y, cfg)
        assert not [r for r in caplog.records if r.getMessage() == "gbm stage step reduced"]
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_uses_informative_feature(self, fitted):
        _, _, (_, arrays, _) = fitted
        root_features = arrays["feature"][arrays["offsets"][:-1]]
        assert np.mean(root_features == 0) > 0.5

    def test_subsample_is_seeded(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(100, 2))
        y = (X[:, 1] > 0).astype(float)
        cfg = GbmConfig(n_trees=5, min_samples_leaf=3, subsample=0.5, seed=2)
        a = fit_gbm(X, y, cfg)[1]
        b = fit_gbm(X, y, cfg)[1]
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])


class TestEmbedGbm:
    @pytest.fixture(scope="class")
    def trained(self, table):
        train = separable_examples(200, POSITIVE, NEGATIVE, seed=3)
        cfg = GbmConfig(n_trees=30, max_depth=2, min_samples_leaf=5, learning_rate=0.3)
        return train, train_embed_gbm(train, table, cfg)

    def test_staged_decisions(self, trained, table):
        train, model = trained
        X = featurize_many([e.history for e in train], table)
        stages = list(model.staged_decision_function(X))
        assert len(stages) == model.n_trees + 1
        np.testing.assert_allclose(stages[0], model.base_score)
        np.testing.assert_allclose(stages[-1], model.decision_from_features(X))
        y = np.array([e.y for e in train])
        assert stages[0][0] == pytest.approx(np.log(y.mean() / (1 - y.mean())))

    def test_fits_training_set(self, trained):
        train, model = trained
        proba = model.predict_proba([e.history for e in train])
        y = np.array([e.y for e in train])
        assert proba[y == 1].mean() > 0.8
        assert proba[y == 0].mean() < 0.2

    def test_predict_masked_matches_dropped_histories(self, trained):
        _, model = trained
        history = history_of("h", ["DX_E119", "DX_E119", "DX_J449", "PX_99214", "RX_0143988701", "DX_Q909"])
        tokens = explanation_tokens(history)
        masks = np.random.default_rng(9).random((20, len(tokens))) < 0.5
        expected = [model.predict_one(drop_tokens(history, {t for t, k in zip(tokens, row) if k})) for row in masks]
        np.testing.assert_allclose(model.predict_masked(history, tokens, masks), expected, atol=1e-9)

    def test_empty(self, table):
        with pytest.raises(TrainingError):
            train_embed_gbm([], table)
