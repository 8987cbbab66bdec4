"""PR metrics vs direct-count oracles and an independent reference."""

import numpy as np
import pytest
from sklearn.metrics import average_precision_score

from prefetchkit import (ConfigError, EvaluationError, MetricsReport,
                         evaluate_model, evaluate_peaks, pr_auc, pr_curve,
                         recall_at_precision)
from prefetchkit.datamodel import PeakExample
from conftest import DAY, brute_force_pr, make_dataset


def test_pr_curve_hand_case():
    scores = np.array([0.9, 0.8, 0.7, 0.6])
    labels = np.array([1.0, 0.0, 1.0, 1.0])
    curve = pr_curve(scores, labels)
    np.testing.assert_array_equal(curve.thresholds, [0.9, 0.8, 0.7, 0.6])
    np.testing.assert_allclose(curve.precisions, [1.0, 0.5, 2 / 3, 0.75])
    np.testing.assert_allclose(curve.recalls, [1 / 3, 1 / 3, 2 / 3, 1.0])
    expected_auc = (1 / 3) * 1.0 + 0.0 * 0.5 + (1 / 3) * (2 / 3) + (1 / 3) * 0.75
    assert pr_auc(curve) == pytest.approx(expected_auc, abs=1e-15)


def test_tied_scores_move_together():
    curve = pr_curve(np.array([0.5, 0.5, 0.2]), np.array([1.0, 0.0, 1.0]))
    assert len(curve) == 2
    np.testing.assert_allclose(curve.precisions, [0.5, 2 / 3])
    np.testing.assert_allclose(curve.recalls, [0.5, 1.0])


def test_perfect_classifier_auc_one():
    scores = np.array([0.9, 0.8, 0.2, 0.1])
    labels = np.array([1.0, 1.0, 0.0, 0.0])
    assert pr_auc(pr_curve(scores, labels)) == 1.0


def test_constant_scores_single_point():
    scores = np.full(8, 0.3)
    labels = np.array([1.0, 0, 0, 1, 0, 0, 0, 0])
    curve = pr_curve(scores, labels)
    assert len(curve) == 1
    assert curve.precisions[0] == 0.25
    assert curve.recalls[0] == 1.0
    assert pr_auc(curve) == 0.25


def test_curve_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(25):
        n = int(rng.integers(2, 60))
        scores = rng.choice([0.1, 0.2, 0.5, 0.7, 0.9], size=n)
        labels = (rng.random(n) < 0.4).astype(float)
        if labels.sum() == 0:
            labels[int(rng.integers(n))] = 1.0
        curve = pr_curve(scores, labels)
        oracle = brute_force_pr(scores, labels)
        assert len(curve) == len(oracle)
        for i, (theta, prec, rec) in enumerate(oracle):
            assert curve.thresholds[i] == theta
            assert curve.precisions[i] == pytest.approx(prec, abs=1e-12)
            assert curve.recalls[i] == pytest.approx(rec, abs=1e-12)


def test_auc_matches_reference_implementation():
    rng = np.random.default_rng(3)
    for trial in range(25):
        n = int(rng.integers(5, 200))
        scores = np.round(rng.random(n), 2)  # force ties
        labels = (rng.random(n) < 0.3).astype(float)
        if labels.sum() == 0:
            labels[0] = 1.0
        ours = pr_auc(pr_curve(scores, labels))
        ref = average_precision_score(labels, scores)
        assert ours == pytest.approx(ref, abs=1e-12)


def test_recall_at_precision_hand_cases():
    curve = pr_curve(np.array([0.9, 0.8, 0.7, 0.6]),
                     np.array([1.0, 0.0, 1.0, 1.0]))
    assert recall_at_precision(curve, 0.7) == (1.0, 0.6)
    recall, threshold = recall_at_precision(curve, 1.0)
    assert recall == pytest.approx(1 / 3)
    assert threshold == 0.9


def test_recall_at_precision_unreachable_target():
    curve = pr_curve(np.array([0.9, 0.1]), np.array([0.0, 1.0]))
    assert recall_at_precision(curve, 0.6) == (0.0, None)


def test_recall_at_precision_lowest_threshold_on_ties():
    # both 0.9 and 0.8 reach full recall above target: report 0.8
    curve = pr_curve(np.array([0.9, 0.8, 0.7]), np.array([1.0, 0.0, 0.0]))
    assert recall_at_precision(curve, 0.4) == (1.0, 0.8)


def test_recall_at_precision_target_validated():
    curve = pr_curve(np.array([0.9]), np.array([1.0]))
    with pytest.raises(ConfigError):
        recall_at_precision(curve, 0.0)
    with pytest.raises(ConfigError):
        recall_at_precision(curve, 1.5)


def test_curve_requires_examples_and_positives():
    with pytest.raises(EvaluationError):
        pr_curve(np.array([]), np.array([]))
    with pytest.raises(EvaluationError):
        pr_curve(np.array([0.5, 0.4]), np.array([0.0, 0.0]))


def test_curve_csv_round_trip():
    curve = pr_curve(np.array([0.9, 0.6]), np.array([1.0, 1.0]))
    lines = curve.to_csv().strip().split("\n")
    assert lines[0] == "threshold,precision,recall"
    values = [float(v) for v in lines[1].split(",")]
    assert values == [0.9, 1.0, 0.5]


# ---------------------------------------------------------------------------
# Dataset-level evaluation harness


class _StubScorer:
    """Scores each session by a fixed map from timestamp, recording calls."""

    def __init__(self, by_ts):
        self.by_ts = by_ts
        self.seen_sessions = {}

    def score_log(self, log):
        ts = log.timestamps()
        self.seen_sessions[log.user_id] = ts.shape[0]
        return np.array([self.by_ts[int(t)] for t in ts])


def _eval_dataset(schema):
    rows = {
        "ua": [(100, 1), (5 * DAY, 0), (9 * DAY, 1)],
        "ub": [(200, 0), (9 * DAY + 50, 0)],
    }
    return make_dataset(schema, rows)


def test_evaluate_model_windows_and_full_history(schema):
    ds = _eval_dataset(schema)
    by_ts = {100: 0.9, 5 * DAY: 0.2, 9 * DAY: 0.8, 200: 0.3, 9 * DAY + 50: 0.1}
    scorer = _StubScorer(by_ts)
    report = evaluate_model(scorer, ds, eval_window_days=7.0)
    # scorer consumed the full logs, metrics cover only the last 7 days
    assert scorer.seen_sessions == {"ua": 3, "ub": 2}
    assert report.n_examples == 3          # ts >= 9d+50s-7d: 5d, 9d, 9d+50
    assert report.n_positives == 1
    # scores in window: 0.2(y=0), 0.8(y=1), 0.1(y=0) -> AP = 1.0 at theta=0.8
    assert report.pr_auc == 1.0
    # 0.2 also reaches full recall at precision 0.5: lowest threshold wins
    assert report.recall_at[0.5] == (1.0, 0.2)


def test_evaluate_model_score_count_mismatch(schema):
    ds = _eval_dataset(schema)

    class Short:
        def score_log(self, log):
            return np.array([0.5])

    with pytest.raises(EvaluationError):
        evaluate_model(Short(), ds)


def test_evaluate_model_uses_batched_path(schema):
    ds = _eval_dataset(schema)

    class Batched:
        def __init__(self):
            self.called = False

        def score_dataset(self, ds_):
            self.called = True
            return {u: np.full(len(ds_.logs[u].sessions), 0.5)
                    for u in ds_.users()}

        def score_log(self, log):  # pragma: no cover - should not run
            raise AssertionError("score_log bypassed")

    scorer = Batched()
    report = evaluate_model(scorer, ds, eval_window_days=30.0)
    assert scorer.called
    assert report.n_examples == 5


def test_evaluate_model_validates_window(schema):
    ds = _eval_dataset(schema)
    with pytest.raises(ConfigError):
        evaluate_model(_StubScorer({}), ds, eval_window_days=0.0)


class _PeakStub:
    def score_peaks(self, log, user_peaks):
        return np.array([0.9 if p.label else 0.4 for p in user_peaks])


def test_evaluate_peaks_windows(schema):
    ds = make_dataset(schema, {"u": [(100, 1), (9 * DAY + 12 * 3600, 0)]})
    peaks = [
        PeakExample("u", 0, (8 * 3600, 11 * 3600), 0),
        PeakExample("u", 9, (9 * DAY + 8 * 3600, 9 * DAY + 11 * 3600), 1),
    ]
    wide = evaluate_peaks(_PeakStub(), ds, peaks, eval_window_days=30.0)
    assert wide.n_examples == 2
    assert wide.n_positives == 1
    assert wide.pr_auc == 1.0
    # a 1-day window (from t_max = day 9, hour 12) drops the day-0 peak
    narrow = evaluate_peaks(_PeakStub(), ds, peaks, eval_window_days=1.0)
    assert narrow.n_examples == 1
    assert narrow.n_positives == 1


def test_evaluate_peaks_empty(schema):
    ds = make_dataset(schema, {"u": [(100, 1)]})
    with pytest.raises(EvaluationError):
        evaluate_peaks(_PeakStub(), ds, [], eval_window_days=1.0)


def test_evaluate_peaks_unknown_user(schema):
    ds = make_dataset(schema, {"u": [(100, 1)]})
    peaks = [PeakExample("ghost", 0, (0, 3600), 1)]
    with pytest.raises(EvaluationError):
        evaluate_peaks(_PeakStub(), ds, peaks, eval_window_days=30.0)


def test_report_text_is_parseable():
    curve = pr_curve(np.array([0.9, 0.1]), np.array([1.0, 0.0]))
    report = MetricsReport(pr_auc=pr_auc(curve),
                           recall_at={0.5: (1.0, 0.9), 0.99: (0.0, None)},
                           n_examples=2, n_positives=1, curve=curve)
    text = report.to_text()
    lines = dict(line.split("\t", 1) for line in text.strip().split("\n"))
    assert lines["examples"] == "2"
    assert float(lines["pr_auc"]) == 1.0
    assert lines["recall_at_0.5"] == "1.0\t0.9"
    assert lines["recall_at_0.99"] == "0.0\tnone"
