import pytest

from claimsml.evaluation.metrics import compute_metrics


class TestComputeMetrics:
    def test_worked_example(self):
        report = compute_metrics([0.9, 0.8, 0.3, 0.6, 0.1, 0.4], [1, 1, 1, 0, 0, 0])
        assert (report.tp, report.fp, report.tn, report.fn) == (2, 1, 2, 1)
        assert report.precision == pytest.approx(200 / 3)
        assert report.recall == pytest.approx(200 / 3)
        assert report.f1 == pytest.approx(200 / 3)
        assert report.accuracy == pytest.approx(200 / 3)
        assert report.auc == pytest.approx(7 / 9)
        assert report.undefined == ()

    def test_threshold_is_strict(self):
        report = compute_metrics([0.5, 0.5000001], [1, 1])
        assert (report.tp, report.fn) == (1, 1)

    def test_no_predicted_positives(self):
        report = compute_metrics([0.1, 0.2, 0.3], [1, 0, 0])
        assert report.precision is None
        assert report.recall == 0.0
        assert report.f1 is None
        assert report.undefined == ("precision", "f1")
        assert report.auc == pytest.approx(0.0)

    def test_single_class(self):
        report = compute_metrics([0.7, 0.2], [0, 0])
        assert report.recall is None
        assert report.auc is None
        assert set(report.undefined) == {"recall", "f1", "auc"}
        assert report.accuracy == 50.0

    def test_zero_precision_and_recall(self):
        report = compute_metrics([0.9, 0.1], [0, 1])
        assert report.precision == 0.0 and report.recall == 0.0
        assert report.f1 == 0.0
        assert "f1" not in report.undefined

    def test_as_dict(self):
        out = compute_metrics([0.1, 0.2], [1, 0]).as_dict()
        assert out["undefined"] == ["precision", "f1"]
        assert out["n"] == 2

    @pytest.mark.parametrize("p,y", [([], []), ([0.1, 0.2], [1]), ([[0.1]], [[1]])])
    def test_invalid(self, p, y):
        with pytest.raises(ValueError):
            compute_metrics(p, y)
