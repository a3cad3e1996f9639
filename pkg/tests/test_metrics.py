import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinymol import metrics


class TestMinmax:
    def test_endpoints(self):
        out = metrics.minmax_normalize([1.0, 3.0, 2.0])
        assert out[0] == 0.0 and out[1] == 100.0

    def test_lower_better_inverts(self):
        out = metrics.minmax_normalize([0.1, 0.5], metrics.LOWER)
        assert out == [100.0, 0.0]

    def test_degenerate_maps_to_midpoint(self):
        assert metrics.minmax_normalize([2.0, 2.0, 2.0]) == [50.0, 50.0, 50.0]

    def test_reward_column(self):
        column = [0.2545, 0.2508, 0.2097, 0.2085, 0.1465, 0.2202, 0.2380]
        out = metrics.minmax_normalize(column)
        assert abs(out[-1] - 84.7) < 0.1
        assert out[4] == 0.0 and out[0] == 100.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=8)
           .filter(lambda vs: max(vs) - min(vs) > 1e-6),
           st.floats(-50, 50), st.floats(0.1, 5.0))
    def test_affine_between_extremes(self, values, shift, gain):
        stretched = [v * gain + shift for v in values]
        a = metrics.minmax_normalize(values)
        b = metrics.minmax_normalize(stretched)
        for x, y in zip(a, b):
            assert abs(x - y) < 1e-6


class TestAggregate:
    GROUPING = {"m1": "Knowledge Core", "m2": "Molecule Generation",
                "m3": "Molecule Generation"}

    def test_single_metric_dimension(self):
        scores, _ = metrics.aggregate_capability({"m1": 70.0}, self.GROUPING)
        assert scores == [metrics.CapabilityScore("Knowledge Core", 70.0)]

    def test_two_metric_mean(self):
        scores, _ = metrics.aggregate_capability({"m2": 40.0, "m3": 60.0},
                                                 self.GROUPING)
        assert scores[0].score == 50.0

    def test_empty_dimension_warns(self):
        _, warnings = metrics.aggregate_capability({"m1": 10.0}, self.GROUPING)
        assert any("Mol-Text Translation" in w for w in warnings)

    def test_ungrouped_metric(self):
        with pytest.raises(metrics.UngroupedMetric):
            metrics.aggregate_capability({"mystery": 1.0}, self.GROUPING)

    def test_order_invariant(self):
        a, _ = metrics.aggregate_capability({"m2": 10.0, "m3": 90.0}, self.GROUPING)
        b, _ = metrics.aggregate_capability({"m3": 90.0, "m2": 10.0}, self.GROUPING)
        assert a == b


class TestNdcg:
    def test_ideal_order(self):
        assert metrics.ndcg([1, 0, 2], [3.0, 5.0, 1.0]) == 1.0

    def test_single_item(self):
        assert metrics.ndcg([0], [2.0]) == 1.0

    def test_reversed_pair(self):
        got = metrics.ndcg([1, 0], [1.0, 0.0])
        assert abs(got - 1.0 / math.log2(3)) < 1e-9

    def test_empty(self):
        with pytest.raises(metrics.EmptyList):
            metrics.ndcg([], [])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=1, max_size=7),
           st.randoms(use_true_random=False))
    def test_bounded_by_one(self, gains, pyrandom):
        ranking = list(range(len(gains)))
        pyrandom.shuffle(ranking)
        assert metrics.ndcg(ranking, gains) <= 1.0 + 1e-12


class TestRegressionClassification:
    def test_perfect(self):
        assert metrics.regression_metrics([1, 2], [1, 2]) == (0.0, 0.0)
        assert metrics.classification_metrics([1, 0], [1, 0]) == (1.0, 1.0)

    def test_constant_offset(self):
        mae, rmse = metrics.regression_metrics([2.0, 3.0], [1.0, 2.0])
        assert mae == 1.0 and rmse == 1.0

    def test_mixed_errors(self):
        mae, rmse = metrics.regression_metrics([0.0, 2.0], [0.0, 0.0])
        assert mae == 1.0 and abs(rmse - math.sqrt(2)) < 1e-12

    def test_no_positive_predictions(self):
        acc, f1 = metrics.classification_metrics([0, 0], [1, 0])
        assert f1 == 0.0 and acc == 0.5

    def test_f1_half(self):
        # TP=1, FP=1, FN=1 -> P = R = 0.5
        acc, f1 = metrics.classification_metrics([1, 1, 0], [1, 0, 1])
        assert f1 == 0.5

    def test_length_mismatch(self):
        with pytest.raises(metrics.LengthMismatch):
            metrics.regression_metrics([1.0], [1.0, 2.0])


class TestScorecard:
    def reports(self, ours, base):
        return {
            "ours": [metrics.MetricReport("mmlu_accuracy", metrics.HIGHER, ours),
                     metrics.MetricReport("yield_mae", metrics.LOWER, 0.1)],
            "base": [metrics.MetricReport("mmlu_accuracy", metrics.HIGHER, base),
                     metrics.MetricReport("yield_mae", metrics.LOWER, 0.4)],
        }

    def test_two_model_payload(self):
        payload = metrics.build_scorecard(self.reports(0.9, 0.5))
        ours = next(m for m in payload["models"] if m["model"] == "ours")
        assert ours["scores"]["Knowledge Core"] == 100.0
        assert ours["scores"]["Quantitative Prediction"] == 100.0

    def test_single_model_rejected(self):
        with pytest.raises(Exception):
            metrics.build_scorecard({"solo": []})

    def test_svg_renders(self):
        payload = metrics.build_scorecard(self.reports(0.9, 0.5))
        svg = metrics.scorecard_svg(payload)
        assert svg.startswith("<svg") and "polygon" in svg
