import csv
import json
import math

import numpy as np
import pytest

from mifag import metrics as M


class TestBinarize:
    def test_strictly_positive_rule(self):
        out = M.binarize_gt([0.0, 0.001, 1.0, -0.5])
        assert out.tolist() == [False, True, True, False]


def auc_pair_oracle(pred, gt):
    """Rank statistic: P(pos > neg) + 0.5 P(pos == neg) over all pairs."""
    pos = pred[gt]
    neg = pred[~gt]
    wins = ties = 0
    for p in pos:
        wins += int(np.sum(p > neg))
        ties += int(np.sum(p == neg))
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


class TestAuc:
    def test_hand_case(self):
        # pos scores {0.9, 0.4}, neg {0.6, 0.1}: 3 wins, 1 loss -> 0.75
        pred = np.array([0.9, 0.6, 0.4, 0.1])
        gt = np.array([True, False, True, False])
        assert M.auc(pred, gt) == pytest.approx(0.75, abs=1e-12)

    def test_perfect_and_inverted(self):
        pred = np.array([0.9, 0.8, 0.2, 0.1])
        gt = np.array([True, True, False, False])
        assert M.auc(pred, gt) == pytest.approx(1.0, abs=1e-12)
        assert M.auc(pred, ~gt) == pytest.approx(0.0, abs=1e-12)

    def test_all_tied_half(self):
        pred = np.full(10, 0.5)
        gt = np.arange(10) < 4
        assert M.auc(pred, gt) == pytest.approx(0.5, abs=1e-12)

    def test_single_class_undefined(self):
        with pytest.raises(M.UndefinedMetricError):
            M.auc(np.array([0.1, 0.9]), np.array([True, True]))

    def test_matches_pair_oracle_with_ties(self):
        rng = np.random.default_rng(0)
        for case in range(500):
            n = 2048 if case == 0 else int(rng.integers(8, 128))
            # quantize to force ties (>= 20% duplicated values)
            pred = np.round(rng.random(n), 1)
            gt = rng.random(n) < 0.4
            if gt.all() or not gt.any():
                gt[0] = ~gt[0]
            assert M.auc(pred, gt) == pytest.approx(
                auc_pair_oracle(pred, gt), abs=1e-9)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        pred = rng.random(64)
        gt = rng.random(64) < 0.5
        gt[0], gt[1] = True, False
        assert M.auc(pred, gt) == pytest.approx(M.auc(np.exp(3 * pred), gt),
                                                abs=1e-12)


def aiou_loop_oracle(pred, gt):
    total = 0.0
    for t_idx in range(100):
        t = t_idx / 100.0
        hard = pred > t
        union = np.sum(hard | gt)
        inter = np.sum(hard & gt)
        total += 1.0 if union == 0 else inter / union
    return total / 100.0


class TestAiou:
    def test_hand_case(self):
        # pred 0.5 on the single gt point: IOU 1 for t < 0.5 (50 thresholds),
        # then both-empty... gt stays nonempty, so IOU 0 for t >= 0.5
        pred = np.array([0.5, 0.0])
        gt = np.array([True, False])
        assert M.aiou(pred, gt) == pytest.approx(0.5, abs=1e-12)

    def test_empty_sets_count_as_one(self):
        pred = np.zeros(4)
        gt = np.zeros(4, dtype=bool)
        assert M.aiou(pred, gt) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_binary_prediction(self):
        gt = np.array([True, False, True])
        pred = gt.astype(float)
        assert M.aiou(pred, gt) == pytest.approx(1.0, abs=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(4, 64))
            pred = np.round(rng.random(n), 2)
            gt = rng.random(n) < 0.3
            assert M.aiou(pred, gt) == pytest.approx(
                aiou_loop_oracle(pred, gt), abs=1e-12)


class TestSim:
    def test_identical_maps_one(self):
        x = np.array([0.2, 0.5, 0.3])
        assert M.sim_metric(x, 2.0 * x) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_zero(self):
        assert M.sim_metric(np.array([1.0, 0.0]),
                            np.array([0.0, 1.0])) == pytest.approx(0.0)

    def test_half_overlap(self):
        # normalized maps [1, 0] and [0.5, 0.5] -> min sums to 0.5
        assert M.sim_metric(np.array([1.0, 0.0]),
                            np.array([0.5, 0.5])) == pytest.approx(0.5)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a, b = rng.random(32), rng.random(32)
        assert M.sim_metric(a, b) == pytest.approx(M.sim_metric(b, a),
                                                   abs=1e-12)

    def test_zero_map_warns_zero(self, caplog):
        with caplog.at_level("WARNING"):
            out = M.sim_metric(np.zeros(4), np.ones(4))
        assert out == 0.0
        assert "zero-sum" in caplog.text

    def test_max_normalized_variant(self):
        a = np.array([1.0, 0.5])
        b = np.array([0.5, 1.0])
        assert M.sim_metric(a, b, max_normalized=True) == pytest.approx(1.0)


class TestMae:
    def test_hand_case(self):
        assert M.mae(np.array([0.2, 0.8]),
                     np.array([0.0, 1.0])) == pytest.approx(0.2, abs=1e-12)

    def test_identical_zero(self):
        x = np.random.default_rng(4).random(16)
        assert M.mae(x, x) == 0.0


class TestScoreSample:
    def test_scales(self):
        rng = np.random.default_rng(5)
        labels = (rng.random(64) < 0.3).astype(float)
        pred = np.clip(labels * 0.8 + rng.random(64) * 0.1, 0.0, 1.0)
        s = M.score_sample("x", 2, pred, labels)
        assert 0.0 <= s.auc <= 1.0
        assert 0.0 <= s.aiou <= 100.0
        assert 0.0 <= s.sim <= 1.0
        assert s.aiou == pytest.approx(
            100.0 * M.aiou(pred, labels > 0), abs=1e-9)

    def test_single_class_nan_auc(self, caplog):
        with caplog.at_level("WARNING"):
            s = M.score_sample("y", 0, np.array([0.5, 0.4]),
                               np.array([1.0, 1.0]))
        assert math.isnan(s.auc)
        assert "undefined" in caplog.text


def make_samples():
    return [
        M.SampleMetrics("a", 0, 0.9, 60.0, 0.8, 0.1),
        M.SampleMetrics("b", 0, 0.7, 40.0, 0.6, 0.3),
        M.SampleMetrics("c", 2, float("nan"), 50.0, 0.5, 0.2),
    ]


class TestReport:
    def test_aggregation(self):
        report = M.build_report(make_samples(), num_affordances=3)
        assert report.per_affordance[0]["auc"] == pytest.approx(0.8)
        assert report.per_affordance[0]["count"] == 2
        assert report.per_affordance[1]["auc"] is None
        assert report.per_affordance[2]["auc"] is None  # nan excluded
        assert report.per_affordance[2]["aiou"] == pytest.approx(50.0)
        assert report.overall["auc"] == pytest.approx(0.8)  # nan excluded
        assert report.overall["aiou"] == pytest.approx(50.0)
        assert report.auc_undefined_count == 1

    def test_json_round_trip(self, tmp_path):
        report = M.build_report(make_samples(), num_affordances=3)
        path = tmp_path / "r.json"
        M.write_report_json(str(path), report)
        doc = json.loads(path.read_text())
        assert doc["overall"]["aiou"] == pytest.approx(50.0)
        assert len(doc["per_sample"]) == 3
        assert doc["auc_undefined_count"] == 1

    def test_csv_rows(self, tmp_path):
        report = M.build_report(make_samples(), num_affordances=3)
        path = tmp_path / "r.csv"
        M.write_report_csv(str(path), report)
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["sample_id", "affordance", "auc", "aiou", "sim",
                           "mae"]
        assert len(rows) == 4
        assert rows[1][2] == "0.900000"

    def test_table_has_all_rows(self):
        report = M.build_report(make_samples(), num_affordances=3)
        table = M.format_report_table(report)
        lines = table.splitlines()
        assert len(lines) == 5  # header + 3 affordances + overall
        assert lines[-1].startswith("overall")
        assert "-" in lines[2]  # empty affordance renders a dash
