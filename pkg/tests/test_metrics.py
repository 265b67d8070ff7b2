import itertools
import math

import numpy as np
import pytest

from stochastic_mtt.errors import InvalidArgumentError
from stochastic_mtt.filters import FilterDiagnostics, GaussianState
from stochastic_mtt.metrics import (
    METRIC_NAMES,
    AssociationCounts,
    OspaParams,
    associate_truth_to_tracks,
    compute_metric_series,
    covariance_norm_sum,
    ospa,
    siap_ambiguity,
    siap_position_accuracy,
    time_average,
)
from stochastic_mtt.scenarios import GroundTruthPath
from stochastic_mtt.tracker import ScanLog, Track, TrackerResult


def make_track(track_id, times, positions, confirmed=0.0, cov=None):
    track = Track(id=track_id, ever_confirmed=True, confirmed_time=confirmed)
    cov = np.eye(4) if cov is None else cov
    for t, (north, east) in zip(times, positions):
        track.append(GaussianState.from_moments([north, 0.0, east, 0.0], cov, t))
    return track


def make_truth(target_id, times, positions):
    states = [[north, 0.0, east, 0.0] for north, east in positions]
    return GroundTruthPath(target_id, times, states)


def brute_force_ospa(X, Y, p, c):
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m > n:
        X, Y, m, n = Y, X, n, m
    best = min(
        sum(min(np.linalg.norm(X[i] - Y[perm[i]]), c) ** p for i in range(m))
        for perm in itertools.permutations(range(n), m)
    )
    return ((best + c**p * (n - m)) / n) ** (1.0 / p)


def test_ospa_identical_sets():
    points = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 2.0]])
    assert ospa(points, points[::-1]) == pytest.approx(0.0, abs=1e-12)


def test_ospa_pure_cardinality_error():
    params = OspaParams(p=2, c=10)
    assert ospa(np.zeros((0, 2)), np.array([[1.0, 2.0]]), params) == 10.0
    assert ospa(np.array([[1.0, 2.0]]), np.zeros((0, 2)), params) == 10.0
    assert ospa(np.zeros((0, 2)), np.zeros((0, 2)), params) == 0.0


def test_ospa_one_dimensional_example():
    value = ospa([0.0], [0.0, 100.0], OspaParams(p=2, c=10))
    assert value == pytest.approx(math.sqrt(50.0), abs=1e-4)
    assert value == pytest.approx(7.0711, abs=1e-4)


def test_ospa_matches_permutation_oracle():
    rng = np.random.default_rng(11)
    for _ in range(500):
        m, n = rng.integers(0, 5, size=2)
        X = rng.uniform(-20, 20, size=(m, 2))
        Y = rng.uniform(-20, 20, size=(n, 2))
        p = float(rng.choice([1.0, 2.0, 3.0]))
        params = OspaParams(p=p, c=10.0)
        expected = brute_force_ospa(X, Y, p, 10.0)
        assert ospa(X, Y, params) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_ospa_is_symmetric_and_bounded():
    rng = np.random.default_rng(2)
    for _ in range(50):
        X = rng.uniform(-50, 50, size=(rng.integers(0, 6), 2))
        Y = rng.uniform(-50, 50, size=(rng.integers(0, 6), 2))
        a = ospa(X, Y)
        assert a == pytest.approx(ospa(Y, X))
        assert 0.0 <= a <= 10.0 + 1e-12


def test_larger_cutoff_never_decreases_with_cardinality_error():
    X = np.array([[0.0, 0.0]])
    Y = np.array([[3.0, 4.0], [40.0, 0.0]])
    assert ospa(X, Y, OspaParams(c=250)) >= ospa(X, Y, OspaParams(c=10))


def test_ospa_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        ospa(np.zeros((1, 2)), np.zeros((1, 3)))
    with pytest.raises(InvalidArgumentError):
        OspaParams(p=0.5)
    with pytest.raises(InvalidArgumentError):
        OspaParams(c=0)


def _counts(tracks, truths, errors=None):
    return [
        AssociationCounts(
            timestamp=float(k),
            n_associated_tracks=a,
            n_associated_truths=j,
            position_errors={} if errors is None else {0: errors[k]},
        )
        for k, (a, j) in enumerate(zip(tracks, truths))
    ]


def test_siap_ambiguity():
    assert siap_ambiguity(_counts([1, 1, 1], [1, 1, 1])) == 1.0
    assert siap_ambiguity(_counts([2] * 5, [1] * 5)) == 2.0
    assert siap_ambiguity(_counts([2, 1, 1], [1, 1, 1])) == pytest.approx(4 / 3)
    assert siap_ambiguity(_counts([0, 0], [0, 0])) is None
    assert siap_ambiguity([]) is None


def test_siap_position_accuracy():
    assert siap_position_accuracy(_counts([1, 1, 1], [1, 1, 1], [3.0, 4.0, 5.0])) == 4.0
    assert siap_position_accuracy(_counts([1] * 10, [1] * 10, [5.0] * 10)) == 5.0
    assert siap_position_accuracy(_counts([0], [0])) is None


def test_association_counts_validation():
    with pytest.raises(InvalidArgumentError):
        AssociationCounts(timestamp=0.0, n_associated_tracks=-1)
    with pytest.raises(InvalidArgumentError):
        AssociationCounts(timestamp=0.0, position_errors={1: -0.5})


def test_covariance_norm_sum():
    assert covariance_norm_sum([np.eye(4)]) == pytest.approx(2.0)
    assert covariance_norm_sum([np.eye(4), np.eye(4)]) == pytest.approx(4.0)
    assert covariance_norm_sum([np.diag([1.0, 4.0])]) == pytest.approx(math.sqrt(17))
    assert covariance_norm_sum([]) == 0.0
    state = GaussianState.from_moments(np.zeros(4), 4 * np.eye(4), 0.0)
    assert covariance_norm_sum([state]) == pytest.approx(8.0)


def test_time_average_skips_undefined_scans():
    assert time_average([1.0, np.nan, 3.0]) == 2.0
    assert time_average([np.nan, np.nan]) is None
    assert time_average([]) is None


def test_perfect_single_track_association():
    times = [0.0, 1.0, 2.0]
    truth = make_truth("a", times, [(0, 0), (1, 0), (2, 0)])
    track = make_track(7, times, [(0, 0), (1, 0), (2, 0)])
    series = associate_truth_to_tracks([truth], [track], cutoff=10.0)
    assert [(c.n_associated_tracks, c.n_associated_truths) for c in series] == [(1, 1)] * 3
    assert all(c.truth_of == {7: "a"} for c in series)


def test_track_beyond_cutoff_is_unassociated():
    truth = make_truth("a", [0.0], [(0, 0)])
    track = make_track(1, [0.0], [(30, 40)])
    (counts,) = associate_truth_to_tracks([truth], [track], cutoff=10.0)
    assert counts.n_associated_tracks == 0
    assert counts.n_associated_truths == 0
    (counts,) = associate_truth_to_tracks([truth], [track], cutoff=50.0)
    assert counts.position_errors == {1: pytest.approx(50.0)}


def test_duplicate_tracks_raise_ambiguity():
    truth = make_truth("a", [0.0], [(0, 0)])
    tracks = [make_track(1, [0.0], [(1, 0)]), make_track(2, [0.0], [(0, 2)])]
    counts = associate_truth_to_tracks([truth], tracks, cutoff=10.0)
    assert counts[0].n_associated_tracks == 2
    assert counts[0].n_associated_truths == 1
    assert siap_ambiguity(counts) == 2.0
    assert siap_position_accuracy(counts) == pytest.approx(1.5)


def test_three_by_three_matches_permutation_minimum():
    truth_points = [(0, 0), (4, 0), (2, 3)]
    track_points = [(3.5, 1.0), (1.0, 2.5), (0.5, -1.0)]
    truths = [make_truth(f"t{i}", [0.0], [p]) for i, p in enumerate(truth_points)]
    tracks = [make_track(i, [0.0], [p]) for i, p in enumerate(track_points)]
    (counts,) = associate_truth_to_tracks(truths, tracks, cutoff=100.0)

    distance = np.array(
        [[math.dist(tr, tt) for tt in truth_points] for tr in track_points]
    )
    best = min(
        itertools.permutations(range(3)),
        key=lambda perm: sum(distance[i, perm[i]] for i in range(3)),
    )
    assert counts.truth_of == {i: f"t{best[i]}" for i in range(3)}
    assert sum(counts.position_errors.values()) == pytest.approx(
        sum(distance[i, best[i]] for i in range(3))
    )


def test_unconfirmed_tracks_are_not_counted():
    truth = make_truth("a", [0.0, 1.0], [(0, 0), (0, 0)])
    track = make_track(1, [0.0, 1.0], [(0, 0), (0, 0)], confirmed=1.0)
    counts = associate_truth_to_tracks([truth], [track], cutoff=10.0)
    assert [c.n_associated_tracks for c in counts] == [0, 1]


def test_association_rejects_bad_cutoff():
    with pytest.raises(InvalidArgumentError):
        associate_truth_to_tracks([], [], cutoff=0.0)


def test_metric_series_over_a_run():
    times = [1.0, 2.0, 3.0, 4.0]
    truth = make_truth("a", [0.0] + times, [(0, 0)] + [(t * 10, 0) for t in times])
    track = make_track(3, times, [(t * 10 + 3, 0) for t in times], confirmed=2.0)
    result = TrackerResult(
        tracks=[track],
        logs=[ScanLog(timestamp=t) for t in times],
        diagnostics=FilterDiagnostics(),
    )
    series = compute_metric_series([truth], result, "EKF", OspaParams(p=2, c=10))

    np.testing.assert_allclose(series.values["ospa"], [10.0, 3.0, 3.0, 3.0])
    np.testing.assert_allclose(series.values["covariance_norm_sum"], [0.0, 2.0, 2.0, 2.0])
    assert np.isnan(series.values["siap_ambiguity"][0])
    np.testing.assert_allclose(series.values["siap_position_accuracy"][1:], 3.0)
    assert series.ambiguity == 1.0
    assert series.position_accuracy == pytest.approx(3.0)
    assert series.time_averages()["ospa"] == pytest.approx(4.75)

    frame = series.to_frame()
    assert list(frame.columns) == ["time", "metric", "tracker_label", "value"]
    assert len(frame) == len(METRIC_NAMES) * len(times)
    assert list(frame["metric"].unique()) == list(METRIC_NAMES)
    assert set(frame["tracker_label"]) == {"EKF"}
