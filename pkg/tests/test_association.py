import itertools
import math

import numpy as np
import pytest

from stochastic_mtt.association import (
    MISSED,
    Detection,
    assign_2d,
    cost_matrix,
    delete_stale,
    hypothesize,
    initiate_from_detection,
    initiate_from_truth,
    mahalanobis,
)
from stochastic_mtt.errors import InvalidArgumentError
from stochastic_mtt.filters import FilterKind, GaussianState
from stochastic_mtt.models import SensorPose, build_linear_measurement, build_range_bearing
from stochastic_mtt.tracker import Track

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])


def _brute_force(cost):
    rows, cols = cost.shape
    if rows > cols:
        return _brute_force(cost.T)
    return min(
        sum(cost[r, c] for r, c in zip(range(rows), perm))
        for perm in itertools.permutations(range(cols), rows)
    )


def test_assignment_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        rows, cols = rng.integers(1, 7, size=2)
        cost = rng.uniform(0.0, 10.0, size=(rows, cols))
        assignment = assign_2d(cost)
        assert assignment.total_cost == pytest.approx(_brute_force(cost), rel=1e-12)
        chosen = [d for _, d in assignment.pairs if d != MISSED]
        assert len(chosen) == len(set(chosen)) == min(rows, cols)


def test_assignment_is_deterministic():
    cost = np.array([[1.0, 1.0], [1.0, 1.0]])
    first = assign_2d(cost).pairs
    for _ in range(5):
        assert assign_2d(cost).pairs == first


def _first_optimal_permutation(cost):
    rows, cols = cost.shape
    best, best_perm = None, None
    for perm in itertools.permutations(range(cols), rows):
        total = sum(cost[r, c] for r, c in zip(range(rows), perm))
        if best is None or total < best:
            best, best_perm = total, perm
    return best, best_perm


def test_ties_go_to_lowest_track_then_detection():
    cost = np.array([[2.0, 2.0, 0.0, 0.0], [2.0, 1.0, 0.0, 1.0], [1.0, 1.0, 1.0, 0.0]])
    assignment = assign_2d(cost)
    assert [d for _, d in assignment.pairs] == [2, 1, 3]
    assert assignment.total_cost == pytest.approx(1.0)
    assert assignment.unassigned_detections == [0]


def test_tie_breaking_matches_lexicographic_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(300):
        rows = int(rng.integers(1, 5))
        cols = int(rng.integers(rows, 5))
        cost = rng.integers(0, 3, size=(rows, cols)).astype(float)
        total, perm = _first_optimal_permutation(cost)
        assignment = assign_2d(cost)
        assert assignment.total_cost == pytest.approx(total)
        assert tuple(d for _, d in assignment.pairs) == perm


def test_detection_beats_missed_column_at_equal_cost():
    assignment = assign_2d(np.array([[5.0]]), missed_cost=5.0)
    assert assignment.pairs == [(0, 0)]
    assert assignment.unassigned_detections == []


def test_missed_column_wins_beyond_gate():
    cost = np.array([[1.0, np.inf], [np.inf, 9.0]])
    assignment = assign_2d(cost, missed_cost=5.0, track_ids=[10, 11])
    assert assignment.pairs == [(10, 0), (11, MISSED)]
    assert assignment.unassigned_detections == [1]
    assert assignment.total_cost == pytest.approx(6.0)
    assert assignment.detection_for(11) == MISSED


def test_infeasible_rows_do_not_break_assignment():
    cost = np.full((2, 2), np.inf)
    cost[1, 0] = 2.0
    assignment = assign_2d(cost)
    assert assignment.pairs == [(0, MISSED), (1, 0)]
    assert assignment.unassigned_detections == [1]


def test_empty_assignment():
    assignment = assign_2d(np.zeros((0, 3)), missed_cost=5.0)
    assert assignment.pairs == []
    assert assignment.unassigned_detections == [0, 1, 2]


def test_mahalanobis_distance():
    assert mahalanobis(np.array([3.0, 4.0]), np.eye(2)) == pytest.approx(5.0)
    assert mahalanobis(np.array([2.0]), np.array([[4.0]])) == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        mahalanobis(np.ones(2), np.eye(3))


def test_hypotheses_gate_and_missed_column():
    model = build_linear_measurement(H, np.eye(2))
    tracks = [GaussianState.from_moments(np.zeros(4), np.eye(4) * 1e-12, 1.0)]
    detections = [
        Detection(np.array([1.0, 0.0]), 1.0, "s", model),
        Detection(np.array([100.0, 0.0]), 1.0, "s", model),
    ]
    hypotheses = hypothesize(tracks, detections, FilterKind.ekf(), gate=5.0)
    row = hypotheses[0]
    assert len(row) == 3
    assert row[0].feasible and row[0].distance == pytest.approx(1.0, rel=1e-6)
    assert not row[1].feasible
    assert row[2].is_missed and row[2].distance == 5.0

    cost = cost_matrix(hypotheses, len(detections))
    assert cost[0, 0] == pytest.approx(1.0, rel=1e-6)
    assert np.isinf(cost[0, 1])


def test_hypotheses_reject_mixed_timestamps():
    model = build_linear_measurement(H, np.eye(2))
    tracks = [GaussianState.from_moments(np.zeros(4), np.eye(4), 1.0)]
    detections = [
        Detection(np.zeros(2), 1.0, "s", model),
        Detection(np.zeros(2), 2.0, "s", model),
    ]
    with pytest.raises(InvalidArgumentError):
        hypothesize(tracks, detections, FilterKind.ekf())


def test_detection_wraps_angles():
    model = build_range_bearing(SensorPose(np.zeros(2)), np.eye(2))
    detection = Detection(np.array([1000.0, 1.5 * math.pi]), 0.0, "radar", model)
    assert detection.z[1] == pytest.approx(-0.5 * math.pi)
    with pytest.raises(InvalidArgumentError):
        Detection(np.zeros(3), 0.0, "radar", model)


def test_delete_stale_uses_strict_threshold():
    tracks = [
        Track(id=0, last_update_time=0.0),
        Track(id=1, last_update_time=5.0),
    ]
    survivors, deleted = delete_stale(tracks, now=15.0, threshold=10.0)
    assert deleted == [0]
    assert [t.id for t in survivors] == [1]
    survivors, deleted = delete_stale(tracks, now=10.0, threshold=10.0)
    assert deleted == []


def test_single_point_initiation():
    sensor = SensorPose(np.array([0.0, 0.0]))
    model = build_range_bearing(sensor, np.diag([4.0, 1e-4]))
    detection = Detection(np.array([5000.0, 0.0]), 3.0, "radar", model)
    state = initiate_from_detection(detection, 4, velocity_std=150.0)
    np.testing.assert_allclose(state.mean, [5000.0, 0.0, 0.0, 0.0], atol=1e-9)
    assert state.cov[0, 0] == pytest.approx(4.0, rel=1e-6)
    assert state.cov[2, 2] == pytest.approx(5000.0**2 * 1e-4, rel=1e-6)
    assert state.cov[1, 1] == state.cov[3, 3] == 150.0**2
    assert state.timestamp == 3.0
    with pytest.raises(InvalidArgumentError):
        initiate_from_detection(detection, 6)


def test_truth_initiation_is_seeded():
    prior = np.diag([100.0, 4.0, 100.0, 4.0])
    truth = np.array([1.0, 2.0, 3.0, 4.0])
    a = initiate_from_truth(truth, prior, 0.0, np.random.default_rng(3))
    b = initiate_from_truth(truth, prior, 0.0, np.random.default_rng(3))
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.cov, prior)


def test_hypotheses_transform_once_per_track(monkeypatch):
    calls = []
    original = FilterKind.transform

    def counting(self, model, prior, rng=None):
        calls.append(prior)
        return original(self, model, prior, rng)

    monkeypatch.setattr(FilterKind, "transform", counting)
    model = build_linear_measurement(H, np.eye(2))
    tracks = [
        GaussianState.from_moments(np.array([10.0 * k, 0.0, 0.0, 0.0]), np.eye(4), 1.0)
        for k in range(3)
    ]
    detections = [Detection(np.array([float(j), 0.0]), 1.0, "s", model) for j in range(5)]
    hypotheses = hypothesize(tracks, detections, FilterKind.ekf(), gate=5.0)
    assert len(calls) == len(tracks)
    assert all(len(row) == len(detections) + 1 for row in hypotheses)
