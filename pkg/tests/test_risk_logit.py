import warnings

import numpy as np
import pytest

from claimsml.config import LogitConfig
from claimsml.errors import ConvergenceWarning, TrainingError
from claimsml.models.base import drop_tokens, explanation_tokens
from claimsml.models.risk_logit import RiskLogitClassifier, logistic_loss_and_grad, train_risk_logit
from tests.helpers import example_of, history_of, separable_examples

NO_RISK = "DX_Z000"


class TestLossGradient:
    def test_gradcheck(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(30, 4))
        y = (rng.random(30) < 0.4).astype(float)
        params = rng.normal(size=5)
        _, grad = logistic_loss_and_grad(params, X, y, 0.1)
        eps = 1e-6
        numeric = np.array([
            (logistic_loss_and_grad(params + eps * e, X, y, 0.1)[0]
             - logistic_loss_and_grad(params - eps * e, X, y, 0.1)[0]) / (2 * eps)
            for e in np.eye(5)
        ])
        np.testing.assert_allclose(grad, numeric, atol=1e-7)


class TestTraining:
    def test_constant_features_give_base_rate(self, risk_map):
        train = [example_of(f"p{i}", [NO_RISK], positive=i < 3) for i in range(10)]
        model = train_risk_logit(train, risk_map)
        np.testing.assert_allclose(model.predict_proba([e.history for e in train]), 0.3)

    def test_learns_risk_indicator(self, risk_map):
        train = separable_examples(200, ["DX_E119"], [NO_RISK], seed=4)
        model = train_risk_logit(train, risk_map, LogitConfig(l2=0.1))
        raw = model.raw_coefficients
        assert int(np.argmax(raw)) == risk_map.index_of("diabetes")
        proba = model.predict_proba([e.history for e in train])
        y = np.array([e.y for e in train])
        assert proba[y == 1].mean() > 0.7
        assert proba[y == 0].mean() < 0.3

    def test_warns_without_convergence(self, risk_map):
        train = separable_examples(40, ["DX_E119"], [NO_RISK], seed=2)
        with pytest.warns(ConvergenceWarning):
            train_risk_logit(train, risk_map, LogitConfig(max_iter=2))

    def test_empty(self, risk_map):
        with pytest.raises(TrainingError):
            train_risk_logit([], risk_map)


class TestPredictMasked:
    """The closed form agrees with rescoring token-dropped histories."""

    @pytest.fixture
    def model(self, risk_map):
        rng = np.random.default_rng(6)
        return RiskLogitClassifier(risk_map, rng.normal(size=len(risk_map) + 2), 0.2)

    @pytest.fixture
    def history(self):
        return history_of("m", ["DX_E119", "DX_E113", "DX_I10", "PX_90937", NO_RISK, "RX_0143988701"], age=72)

    def test_all_tokens_listed(self, model, history):
        tokens = explanation_tokens(history)
        masks = np.random.default_rng(0).random((25, len(tokens))) < 0.5
        expected = [model.predict_one(drop_tokens(history, {t for t, k in zip(tokens, row) if k})) for row in masks]
        np.testing.assert_allclose(model.predict_masked(history, tokens, masks), expected)

    def test_unlisted_tokens_stay(self, model, history):
        tokens = ["DX_E119", "DX_I10"]
        masks = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=bool)
        others = set(explanation_tokens(history)) - set(tokens)
        expected = [model.predict_one(drop_tokens(history, others | {t for t, k in zip(tokens, row) if k}))
                    for row in masks]
        np.testing.assert_allclose(model.predict_masked(history, tokens, masks), expected)
        # DX_E113 still carries diabetes when DX_E119 is dropped
        assert model.predict_masked(history, tokens, masks)[0] == pytest.approx(
            model.predict_masked(history, tokens, masks)[1])

    def test_coefficient_shape(self, risk_map):
        with pytest.raises(ValueError):
            RiskLogitClassifier(risk_map, np.zeros(3), 0.0)


def test_default_config_converges_quietly(risk_map):
    train = [example_of(f"p{i}", [NO_RISK], positive=i % 4 == 0) for i in range(12)]
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        train_risk_logit(train, risk_map)
