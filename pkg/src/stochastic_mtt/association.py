import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment

from stochastic_mtt.errors import InvalidArgumentError, NumericalError
from stochastic_mtt.filters import FilterKind, GaussianState
from stochastic_mtt.models import MeasurementModel, numerical_jacobian
from stochastic_mtt.transforms import TransformResult
from stochastic_mtt.utils import sample_gaussian, wrap_components

logger = logging.getLogger(__name__)

(
    " association.py Global nearest neighbour association:"
    " Mahalanobis hypotheses with a missed-detection gate, the"
    " optimal 2D assignment over the gate-augmented cost matrix,"
    " stale-track deletion and track initiation."
)

MISSED = -1
DEFAULT_GATE = 5.0
DEFAULT_DELETION_THRESHOLD = 10.0
DEFAULT_VELOCITY_STD = 150.0


@dataclass(frozen=True)
class Detection:
    z: np.ndarray
    timestamp: float
    sensor: str
    model: MeasurementModel
    is_clutter_truth_flag: bool = False
    target_id: Optional[str] = None

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if z.shape[0] != self.model.ndim_meas:
            raise InvalidArgumentError(
                f"Detection has {z.shape[0]} components, model "
                f"{self.model.name} expects {self.model.ndim_meas}"
            )
        object.__setattr__(self, "z", wrap_components(z, self.model.angle_mask))
        object.__setattr__(self, "timestamp", float(self.timestamp))


@dataclass(frozen=True)
class Hypothesis:
    track_id: int
    detection_index: int
    distance: float
    prediction: Optional[TransformResult] = None
    feasible: bool = True

    @property
    def is_missed(self) -> bool:
        return self.detection_index == MISSED


@dataclass
class Assignment:
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    unassigned_detections: List[int] = field(default_factory=list)
    total_cost: float = 0.0

    def detection_for(self, track_id: int) -> int:
        for tid, det in self.pairs:
            if tid == track_id:
                return det
        raise KeyError(track_id)


def mahalanobis(nu: np.ndarray, S: np.ndarray) -> float:
    """sqrt(nu^T S^-1 nu); angle components must already be wrapped."""
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape != (nu.shape[0], nu.shape[0]):
        raise InvalidArgumentError(
            f"Innovation of length {nu.shape[0]} does not match covariance {S.shape}"
        )
    try:
        factor = linalg.cho_factor(S, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            "Innovation covariance is singular", {"S": S.tolist()}
        ) from exc
    value = float(nu @ linalg.cho_solve(factor, nu))
    return float(np.sqrt(max(value, 0.0)))


def hypothesize(
    tracks: Sequence[GaussianState],
    detections: Sequence[Detection],
    kind: FilterKind,
    gate: float = DEFAULT_GATE,
    rng: Optional[np.random.Generator] = None,
    track_ids: Optional[Sequence[int]] = None,
) -> List[List[Hypothesis]]:
    """
    Hypothesis matrix: one row per track, one column per detection plus a
    trailing MISSED column whose distance is the gate.

    The moment transform runs once per (track, measurement model); pairs
    whose transform or distance fails are marked infeasible.
    """
    if track_ids is None:
        track_ids = list(range(len(tracks)))
    if len(track_ids) != len(tracks):
        raise InvalidArgumentError("track_ids must match tracks one to one")
    times = {det.timestamp for det in detections}
    if len(times) > 1:
        raise InvalidArgumentError(f"Detections span several timestamps: {sorted(times)}")

    matrix: List[List[Hypothesis]] = []
    for track_id, state in zip(track_ids, tracks):
        cache: Dict[int, Optional[TransformResult]] = {}
        row: List[Hypothesis] = []
        for index, detection in enumerate(detections):
            key = id(detection.model)
            if key not in cache:
                try:
                    cache[key] = kind.transform(detection.model, state.density, rng)
                except (NumericalError, InvalidArgumentError) as exc:
                    logger.debug("Track %s: transform failed (%s)", track_id, exc)
                    cache[key] = None
            prediction = cache[key]
            if prediction is None:
                row.append(Hypothesis(track_id, index, np.inf, None, feasible=False))
                continue
            nu = wrap_components(detection.z - prediction.z_mean, detection.model.angle_mask)
            try:
                distance = mahalanobis(nu, prediction.cov_zz)
            except NumericalError as exc:
                logger.debug("Track %s: distance failed (%s)", track_id, exc)
                row.append(Hypothesis(track_id, index, np.inf, prediction, feasible=False))
                continue
            row.append(
                Hypothesis(track_id, index, distance, prediction, feasible=distance <= gate)
            )
        row.append(Hypothesis(track_id, MISSED, float(gate), None, feasible=True))
        matrix.append(row)
    return matrix


def cost_matrix(hypotheses: List[List[Hypothesis]], n_detections: int) -> np.ndarray:
    """Track x detection distances with infeasible pairs set to inf."""
    cost = np.full((len(hypotheses), n_detections), np.inf)
    for i, row in enumerate(hypotheses):
        for hyp in row:
            if not hyp.is_missed and hyp.feasible:
                cost[i, hyp.detection_index] = hyp.distance
    return cost


def _lexicographic_columns(matrix: np.ndarray) -> List[int]:
    """
    Column per row of a finite cost matrix (rows <= columns) with minimum
    total cost, choosing the lexicographically smallest assignment among
    equal-cost optima: each row in turn takes the lowest column that still
    admits the optimal total on the remaining rows.
    """
    n_rows, n_cols = matrix.shape
    rows, cols = linear_sum_assignment(matrix)
    optimum = float(matrix[rows, cols].sum())
    tol = 1e-12 * (float(np.abs(matrix).max()) + 1.0) * n_rows

    free = list(range(n_cols))
    fixed = 0.0
    picks: List[int] = []
    for r in range(n_rows):
        candidates = []
        for c in free:
            value = fixed + float(matrix[r, c])
            if r + 1 < n_rows:
                sub = matrix[r + 1 :][:, [k for k in free if k != c]]
                sub_rows, sub_cols = linear_sum_assignment(sub)
                value += float(sub[sub_rows, sub_cols].sum())
            if value <= optimum + tol:
                candidates = [(value, c)]
                break
            candidates.append((value, c))
        _, best = min(candidates)
        picks.append(best)
        fixed += float(matrix[r, best])
        free.remove(best)
    return picks


def assign_2d(
    cost: np.ndarray,
    missed_cost: Optional[float] = None,
    track_ids: Optional[Sequence[int]] = None,
) -> Assignment:
    """
    Minimum-cost assignment of tracks (rows) to detections (columns).

    With ``missed_cost`` every row also gets a private MISSED column at
    that cost, so a complete assignment always exists. Infeasible
    entries are inf.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise InvalidArgumentError(f"Cost matrix must be 2D, got shape {cost.shape}")
    n_tracks, n_detections = cost.shape
    if track_ids is None:
        track_ids = list(range(n_tracks))

    if missed_cost is not None:
        missed = np.full((n_tracks, n_tracks), np.inf)
        np.fill_diagonal(missed, missed_cost)
        augmented = np.hstack([cost, missed])
    else:
        augmented = cost

    chosen: Dict[int, int] = {}
    total = 0.0
    if n_tracks and augmented.shape[1]:
        finite = np.isfinite(augmented)
        # infeasible entries become a cost larger than any complete feasible sum
        big = (np.abs(augmented[finite]).sum() + 1.0) * 2.0 if finite.any() else 1.0
        padded = np.where(finite, augmented, big)
        if n_tracks > padded.shape[1]:
            # surplus rows land on dummy columns, i.e. stay unassigned
            dummy = np.full((n_tracks, n_tracks - padded.shape[1]), big)
            padded = np.hstack([padded, dummy])
        for r, c in enumerate(_lexicographic_columns(padded)):
            if c >= augmented.shape[1] or not np.isfinite(augmented[r, c]):
                continue
            total += float(augmented[r, c])
            chosen[int(r)] = int(c) if c < n_detections else MISSED

    pairs = [(track_ids[r], chosen.get(r, MISSED)) for r in range(n_tracks)]
    used = {det for _, det in pairs if det != MISSED}
    unassigned = [j for j in range(n_detections) if j not in used]
    return Assignment(pairs=pairs, unassigned_detections=unassigned, total_cost=total)


def delete_stale(tracks, now: float, threshold: float = DEFAULT_DELETION_THRESHOLD):
    """Split tracks into survivors and ids not updated for more than ``threshold`` s."""
    if not threshold > 0:
        raise InvalidArgumentError(f"Deletion threshold must be positive, got {threshold}")
    survivors = []
    deleted = []
    for track in tracks:
        if now - track.last_update_time > threshold:
            deleted.append(track.id)
        else:
            survivors.append(track)
    return survivors, deleted


def initiate_from_detection(
    detection: Detection,
    n_x: int,
    velocity_std: float = DEFAULT_VELOCITY_STD,
) -> GaussianState:
    """
    Single-point initiation: invert the detection to a position, with
    covariance J R J^T from the inverse's Jacobian, and a zero velocity
    prior of ``velocity_std`` per axis.
    """
    model = detection.model
    position = model.invert(detection.z)
    dims = position.shape[0]
    if n_x != 2 * dims:
        raise InvalidArgumentError(
            f"Cannot initiate a {n_x}-state from a {dims}D position"
        )
    jac = numerical_jacobian(model.invert, detection.z)
    position_cov = jac @ model.R @ jac.T

    mean = np.zeros(n_x)
    cov = np.zeros((n_x, n_x))
    pos_idx = np.arange(0, n_x, 2)
    vel_idx = pos_idx + 1
    mean[pos_idx] = position
    cov[np.ix_(pos_idx, pos_idx)] = position_cov
    cov[vel_idx, vel_idx] = velocity_std**2
    return GaussianState.from_moments(mean, cov, detection.timestamp)


def initiate_from_truth(
    true_state: np.ndarray,
    prior_cov: np.ndarray,
    timestamp: float,
    rng: np.random.Generator,
) -> GaussianState:
    """Prior centred on the truth perturbed by one draw from ``prior_cov``."""
    mean = sample_gaussian(true_state, prior_cov, rng)
    return GaussianState.from_moments(mean, prior_cov, timestamp)
