import logging

import numpy as np
import pytest

from claimsml.config import LimeConfig
from claimsml.errors import ExplanationError
from claimsml.evaluation.lime import lime_explain, select_explanation_sample
from tests.helpers import ConstantClassifier, LinearTokenClassifier, history_of

WEIGHTS = {"DX_E119": 0.3, "DX_I10": 0.2, "DX_J449": -0.1}
EXACT = LimeConfig(n_samples=400, ridge_alpha=1e-8, seed=1)


@pytest.fixture
def history():
    return history_of("p", ["DX_E119", "DX_I10", "DX_J449", "PX_99214", "DX_E119"])


class TestLimeExplain:
    def test_recovers_linear_model(self, history):
        explanation = lime_explain(LinearTokenClassifier(WEIGHTS, bias=0.4), history, EXACT)
        assert set(explanation.importances) == {"DX_E119", "DX_I10", "DX_J449", "PX_99214"}
        for token, weight in WEIGHTS.items():
            assert explanation.importances[token] == pytest.approx(weight, abs=1e-6)
        assert explanation.importances["PX_99214"] == pytest.approx(0.0, abs=1e-6)
        assert explanation.intercept == pytest.approx(0.4, abs=1e-6)
        assert explanation.r2 == pytest.approx(1.0, abs=1e-6)

    def test_prediction_is_unperturbed_score(self, history):
        model = LinearTokenClassifier(WEIGHTS, bias=0.4)
        explanation = lime_explain(model, history, EXACT)
        assert explanation.prediction == pytest.approx(model.predict_proba([history])[0])

    def test_constant_model(self, history):
        explanation = lime_explain(ConstantClassifier(0.7), history, LimeConfig(n_samples=200, seed=2))
        assert all(abs(v) < 1e-9 for v in explanation.importances.values())

    def test_seeded(self, history):
        model = LinearTokenClassifier({"DX_E119": 0.8, "DX_I10": 0.5}, bias=0.1)
        cfg = LimeConfig(n_samples=100)
        a = lime_explain(model, history, cfg, seed=5)
        b = lime_explain(model, history, cfg, seed=5)
        assert a == b
        assert a.seed == 5

    def test_claim_order_does_not_matter(self):
        model = LinearTokenClassifier({"DX_E119": 0.8, "DX_I10": 0.5}, bias=0.1)
        a = lime_explain(model, history_of("a", ["DX_E119", "DX_I10", "PX_99214"]), LimeConfig(n_samples=100))
        b = lime_explain(model, history_of("b", ["PX_99214", "DX_I10", "DX_E119"]), LimeConfig(n_samples=100))
        assert a.importances == b.importances

    def test_ranked(self, history):
        ranked = lime_explain(LinearTokenClassifier(WEIGHTS, bias=0.4), history, EXACT).ranked()
        assert [t for t, _ in ranked[:3]] == ["DX_E119", "DX_I10", "DX_J449"]

    def test_kernel_width(self, history):
        default = lime_explain(ConstantClassifier(0.5), history, LimeConfig(n_samples=10))
        assert default.kernel_width == pytest.approx(0.25 * 2.0)
        fixed = lime_explain(ConstantClassifier(0.5), history, LimeConfig(n_samples=10, kernel_width=3.0))
        assert fixed.kernel_width == 3.0

    def test_empty_history(self):
        with pytest.raises(ExplanationError):
            lime_explain(ConstantClassifier(0.5), history_of("e", []))


class TestSelectExplanationSample:
    def test_counts_and_order(self):
        predictions = np.array([0.9, 0.1, 0.7, 0.2, 0.6, 0.3, 0.8])
        chosen = select_explanation_sample(predictions, 2, 2, seed=0)
        assert len(chosen) == 4
        assert list(chosen) == sorted(chosen)
        assert (predictions[chosen] > 0.5).sum() == 2

    def test_short_pool(self, caplog):
        caplog.set_level(logging.WARNING, logger="claimsml")
        chosen = select_explanation_sample([0.9, 0.1, 0.2], 3, 1, seed=0)
        assert 0 in chosen and len(chosen) == 2
        assert "explanation sample short" in caplog.text
