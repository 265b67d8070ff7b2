import unittest

import numpy as np
import pytest

from stochastic_mtt import analysis
from stochastic_mtt.io import read_metric_csv, write_metric_series
from stochastic_mtt.metrics import METRIC_NAMES, MetricSeries


def _averages(ospa, ambiguity=1.0, accuracy=2.0, cov=5.0):
    return {
        "ospa": ospa,
        "siap_ambiguity": ambiguity,
        "siap_position_accuracy": accuracy,
        "covariance_norm_sum": cov,
    }


class TestSummarizeRuns(unittest.TestCase):
    def setUp(self):
        # Three EKF seeds (one failed) and two SIF seeds
        self.outcomes = [
            analysis.RunOutcome("EKF", 0, averages=_averages(4.0)),
            analysis.RunOutcome("EKF", 1, averages=_averages(6.0)),
            analysis.RunOutcome("EKF", 2, averages=_averages(20.0)),
            analysis.RunOutcome(
                "EKF", 3, status=analysis.FAILED, error="non-finite covariance"
            ),
            analysis.RunOutcome("SIF", 0, averages=_averages(3.0, accuracy=None)),
            analysis.RunOutcome("SIF", 1, averages=_averages(5.0, accuracy=1.0)),
        ]
        self.summary = analysis.summarize_runs(self.outcomes)

    def row(self, label, metric):
        rows = self.summary[
            (self.summary["tracker_label"] == label) & (self.summary["metric"] == metric)
        ]
        self.assertEqual(len(rows), 1)
        return rows.iloc[0]

    def test_columns_and_order(self):
        self.assertListEqual(
            list(self.summary.columns),
            ["tracker_label", "metric", "runs", "failed", "mean", "median", "failed_seeds"],
        )
        self.assertListEqual(list(self.summary["tracker_label"].unique()), ["EKF", "SIF"])
        self.assertListEqual(
            list(self.summary["metric"][:4]), list(METRIC_NAMES)
        )

    def test_mean_and_median(self):
        row = self.row("EKF", "ospa")
        self.assertAlmostEqual(row["mean"], 10.0)
        self.assertAlmostEqual(row["median"], 6.0)
        self.assertEqual(row["runs"], 3)

    def test_failed_runs_are_reported_not_averaged(self):
        row = self.row("EKF", "covariance_norm_sum")
        self.assertEqual(row["failed"], 1)
        self.assertEqual(row["failed_seeds"], "3")
        self.assertEqual(row["runs"], 3)
        self.assertEqual(self.row("SIF", "ospa")["failed_seeds"], "")

    def test_undefined_metric_is_skipped(self):
        row = self.row("SIF", "siap_position_accuracy")
        self.assertEqual(row["runs"], 1)
        self.assertAlmostEqual(row["mean"], 1.0)

    def test_runs_frame(self):
        frame = analysis.runs_frame(self.outcomes)
        self.assertEqual(len(frame), len(self.outcomes))
        failed = frame[frame["status"] == analysis.FAILED].iloc[0]
        self.assertEqual(failed["seed"], 3)
        self.assertTrue(np.isnan(failed["ospa"]))
        self.assertEqual(failed["error"], "non-finite covariance")
        self.assertTrue(np.isnan(frame.iloc[4]["siap_position_accuracy"]))


def test_all_failed_label_has_no_statistics():
    outcomes = [analysis.RunOutcome("UKF", 0, status=analysis.FAILED)]
    summary = analysis.summarize_runs(outcomes)
    assert (summary["runs"] == 0).all()
    assert summary["mean"].isna().all()
    assert outcomes[0].failed


def test_summary_recomputes_from_metric_csv(tmp_path):
    times = np.arange(1.0, 6.0)
    values = {
        "ospa": np.array([10.0, 2.0, 1.0, 1.0, 1.0]),
        "siap_ambiguity": np.array([np.nan, 1.0, 1.0, 2.0, 1.0]),
        "siap_position_accuracy": np.array([np.nan, 0.1, 0.2, 0.3, 0.4]),
        "covariance_norm_sum": np.array([0.0, 3.0, 2.5, 2.0, 1.5]),
    }
    series = MetricSeries("SIF", times, values, counts=[])
    path = write_metric_series(series, tmp_path / "metrics" / "SIF_seed0.csv")

    averages = analysis.run_averages(read_metric_csv(path))
    assert averages == pytest.approx(series.time_averages())
    assert averages["ospa"] == pytest.approx(3.0)
    assert averages["siap_ambiguity"] == pytest.approx(1.25)
