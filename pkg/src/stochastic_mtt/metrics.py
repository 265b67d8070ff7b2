import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from stochastic_mtt.association import MISSED, assign_2d
from stochastic_mtt.errors import InvalidArgumentError
from stochastic_mtt.models import position_indices
from stochastic_mtt.scenarios import GroundTruthPath
from stochastic_mtt.tracker import Track, TrackerResult

logger = logging.getLogger(__name__)

(
    " metrics.py Tracking performance measures: OSPA, SIAP"
    " ambiguity and positional accuracy over a truth-to-track"
    " association, and summed covariance Frobenius norms."
)

METRIC_NAMES = (
    "ospa",
    "siap_ambiguity",
    "siap_position_accuracy",
    "covariance_norm_sum",
)


@dataclass(frozen=True)
class OspaParams:
    p: float = 2.0
    c: float = 10.0

    def __post_init__(self):
        if not self.p >= 1:
            raise InvalidArgumentError(f"OSPA order p must be >= 1, got {self.p}")
        if not self.c > 0:
            raise InvalidArgumentError(f"OSPA cutoff c must be positive, got {self.c}")


def time_average(values) -> Optional[float]:
    """Mean over the scans where a metric is defined (NaN entries skipped)."""
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if finite.size else None


def _as_points(points) -> np.ndarray:
    array = np.asarray(points, dtype=float)
    if array.size == 0:
        return array.reshape(0, array.shape[-1] if array.ndim == 2 else 0)
    if array.ndim == 1:
        # a flat sequence is a set of scalars
        return array.reshape(-1, 1)
    if array.ndim != 2:
        raise InvalidArgumentError(f"Point set must be 1D or 2D, got shape {array.shape}")
    return array


def ospa(truth, tracks, params: OspaParams = OspaParams()) -> float:
    """
    OSPA distance between two finite point sets (rows are points).

    Localisation errors are cut off at ``c`` and every unmatched point
    costs ``c``; the matching is the optimal assignment.
    """
    X = _as_points(truth)
    Y = _as_points(tracks)
    m, n = X.shape[0], Y.shape[0]
    if m == 0 and n == 0:
        return 0.0
    if m and n and X.shape[1] != Y.shape[1]:
        raise InvalidArgumentError(
            f"Point dimensions differ: {X.shape[1]} vs {Y.shape[1]}"
        )
    if m > n:
        X, Y, m, n = Y, X, n, m
    if m == 0:
        return float(params.c)

    cut = np.minimum(cdist(X, Y), params.c) ** params.p
    rows, cols = _assign_rows(cut)
    total = float(cut[rows, cols].sum()) + params.c**params.p * (n - m)
    return float((total / n) ** (1.0 / params.p))


def _assign_rows(cost: np.ndarray):
    """Optimal one-to-one assignment of every row of a finite wide matrix."""
    assignment = assign_2d(cost)
    rows = np.array([r for r, c in assignment.pairs if c != MISSED], dtype=int)
    cols = np.array([c for _, c in assignment.pairs if c != MISSED], dtype=int)
    return rows, cols


@dataclass
class AssociationCounts:
    """Truth-to-track association at one timestamp."""

    timestamp: float
    n_associated_tracks: int = 0
    n_associated_truths: int = 0
    held_tracks: List[int] = field(default_factory=list)
    position_errors: Dict[int, float] = field(default_factory=dict)
    truth_of: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_associated_tracks < 0 or self.n_associated_truths < 0:
            raise InvalidArgumentError("Association counts must be non-negative")
        if any(e < 0 for e in self.position_errors.values()):
            raise InvalidArgumentError("Positional errors must be non-negative")


def siap_ambiguity(counts: Iterable[AssociationCounts]) -> Optional[float]:
    """Associated tracks per associated truth; None when no truth is held."""
    counts = list(counts)
    tracks = sum(c.n_associated_tracks for c in counts)
    truths = sum(c.n_associated_truths for c in counts)
    if truths == 0:
        return None
    return tracks / truths


def siap_position_accuracy(counts: Iterable[AssociationCounts]) -> Optional[float]:
    """Mean track-to-truth distance over associated track-timestamps."""
    counts = list(counts)
    associated = sum(c.n_associated_tracks for c in counts)
    if associated == 0:
        return None
    return sum(sum(c.position_errors.values()) for c in counts) / associated


def covariance_norm_sum(covariances: Iterable) -> float:
    """Sum of Frobenius norms; accepts matrices or anything with ``.cov``."""
    total = 0.0
    for item in covariances:
        cov = np.asarray(getattr(item, "cov", item), dtype=float)
        total += float(np.linalg.norm(cov, "fro"))
    return total


def _associate_at(
    timestamp: float,
    truth_ids: Sequence[str],
    truth_positions: np.ndarray,
    track_ids: Sequence[int],
    track_positions: np.ndarray,
    cutoff: float,
) -> AssociationCounts:
    counts = AssociationCounts(timestamp=timestamp)
    if not len(truth_ids) or not len(track_ids):
        return counts

    distance = cdist(track_positions, truth_positions)
    gated = np.where(distance <= cutoff, distance, np.inf)
    owner: Dict[int, int] = {}
    for row, col in assign_2d(gated).pairs:
        if col != MISSED:
            owner[row] = col
    # duplicate tracks attach to their nearest truth so ambiguity can exceed 1
    for row in range(len(track_ids)):
        if row not in owner and np.isfinite(gated[row]).any():
            owner[row] = int(np.argmin(gated[row]))

    for row in sorted(owner):
        col = owner[row]
        track_id = track_ids[row]
        counts.held_tracks.append(track_id)
        counts.position_errors[track_id] = float(distance[row, col])
        counts.truth_of[track_id] = truth_ids[col]
    counts.n_associated_tracks = len(owner)
    counts.n_associated_truths = len(set(owner.values()))
    return counts


def _truth_at(truths: Sequence[GroundTruthPath], timestamp: float):
    ids, positions = [], []
    for path in truths:
        position = path.position_at(timestamp)
        if position is not None:
            ids.append(path.target_id)
            positions.append(position)
    return ids, positions


def _tracks_at(tracks: Sequence[Track], timestamp: float):
    ids, positions, states = [], [], []
    for track in tracks:
        if track.confirmed_time is None or track.confirmed_time > timestamp + 1e-9:
            continue
        state = track.state_at(timestamp)
        if state is None:
            continue
        ids.append(track.id)
        positions.append(state.mean[position_indices(state.ndim)])
        states.append(state)
    return ids, positions, states


def _stack(positions: List[np.ndarray]) -> np.ndarray:
    return np.vstack(positions) if positions else np.zeros((0, 0))


def associate_truth_to_tracks(
    truths: Sequence[GroundTruthPath],
    tracks: Sequence[Track],
    cutoff: float,
    timestamps: Optional[Sequence[float]] = None,
) -> List[AssociationCounts]:
    """
    Per-timestamp association of confirmed track estimates to truth
    positions: an optimal one-to-one assignment gated at ``cutoff``, after
    which any leftover track within ``cutoff`` of a truth joins its nearest
    truth.
    """
    if not cutoff > 0:
        raise InvalidArgumentError(f"Association cutoff must be positive, got {cutoff}")
    if timestamps is None:
        timestamps = sorted({float(t) for path in truths for t in path.times})
    series = []
    for t in timestamps:
        truth_ids, truth_positions = _truth_at(truths, t)
        track_ids, track_positions, _ = _tracks_at(tracks, t)
        series.append(
            _associate_at(
                t,
                truth_ids,
                _stack(truth_positions),
                track_ids,
                _stack(track_positions),
                cutoff,
            )
        )
    return series


@dataclass
class MetricSeries:
    label: str
    times: np.ndarray
    values: Dict[str, np.ndarray]
    counts: List[AssociationCounts]

    @property
    def ambiguity(self) -> Optional[float]:
        return siap_ambiguity(self.counts)

    @property
    def position_accuracy(self) -> Optional[float]:
        return siap_position_accuracy(self.counts)

    def time_averages(self) -> Dict[str, Optional[float]]:
        return {name: time_average(self.values[name]) for name in METRIC_NAMES}

    def to_frame(self) -> pd.DataFrame:
        """Long table with columns time, metric, tracker_label, value."""
        frames = [
            pd.DataFrame(
                {
                    "time": self.times,
                    "metric": name,
                    "tracker_label": self.label,
                    "value": self.values[name],
                }
            )
            for name in METRIC_NAMES
        ]
        return pd.concat(frames, ignore_index=True)


def compute_metric_series(
    truths: Sequence[GroundTruthPath],
    result: TrackerResult,
    label: str,
    params: OspaParams = OspaParams(),
    cutoff: Optional[float] = None,
) -> MetricSeries:
    """
    Every metric at every scan of a finished run, over confirmed tracks.
    The SIAP cutoff defaults to the OSPA cutoff. Per-scan ambiguity and
    accuracy are NaN at scans where they are undefined.
    """
    cutoff = params.c if cutoff is None else cutoff
    tracks = result.confirmed_tracks()
    times = np.array([log.timestamp for log in result.logs], dtype=float)
    values = {name: np.full(times.shape[0], np.nan) for name in METRIC_NAMES}
    counts: List[AssociationCounts] = []

    for k, t in enumerate(times):
        truth_ids, truth_positions = _truth_at(truths, t)
        track_ids, track_positions, states = _tracks_at(tracks, t)
        X = _stack(truth_positions)
        Y = _stack(track_positions)
        values["ospa"][k] = ospa(X, Y, params)
        values["covariance_norm_sum"][k] = covariance_norm_sum(states)
        step = _associate_at(t, truth_ids, X, track_ids, Y, cutoff)
        counts.append(step)
        ambiguity = siap_ambiguity([step])
        accuracy = siap_position_accuracy([step])
        if ambiguity is not None:
            values["siap_ambiguity"][k] = ambiguity
        if accuracy is not None:
            values["siap_position_accuracy"][k] = accuracy

    series = MetricSeries(label=label, times=times, values=values, counts=counts)
    logger.debug(
        "%s: A=%s PA=%s over %d scans",
        label,
        series.ambiguity,
        series.position_accuracy,
        times.shape[0],
    )
    return series
