import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from stochastic_mtt.association import (
    DEFAULT_DELETION_THRESHOLD,
    DEFAULT_GATE,
    DEFAULT_VELOCITY_STD,
    MISSED,
    Detection,
    assign_2d,
    cost_matrix,
    delete_stale,
    hypothesize,
    initiate_from_detection,
)
from stochastic_mtt.errors import InvalidArgumentError, NumericalError, UpdateRejected
from stochastic_mtt.filters import (
    FilterDiagnostics,
    FilterKind,
    GaussianState,
    predict,
    update,
)
from stochastic_mtt.models import LinearDynamics

logger = logging.getLogger(__name__)

(
    " tracker.py Per-scan GNN tracking loop: predict, associate"
    " (per sensor), update or coast, initiate, delete."
)

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DELETED = "deleted"

INITIATION_POLICIES = ("truth", "single_point")


@dataclass
class Track:
    id: int
    states: List[GaussianState] = field(default_factory=list)
    last_update_time: float = 0.0
    update_rejections: int = 0
    status: str = CONFIRMED
    hits: int = 0
    age_scans: int = 0
    ever_confirmed: bool = False
    confirmed_time: Optional[float] = None

    @property
    def state(self) -> GaussianState:
        return self.states[-1]

    def append(self, state: GaussianState) -> None:
        if self.states and state.timestamp <= self.states[-1].timestamp:
            raise InvalidArgumentError(
                f"Track {self.id}: state at t={state.timestamp} is not after "
                f"t={self.states[-1].timestamp}"
            )
        self.states.append(state)

    def state_at(self, timestamp: float) -> Optional[GaussianState]:
        for state in reversed(self.states):
            if abs(state.timestamp - timestamp) <= 1e-9:
                return state
            if state.timestamp < timestamp:
                return None
        return None


@dataclass
class ScanLog:
    timestamp: float
    outcomes: Dict[int, str] = field(default_factory=dict)
    cov_norms: Dict[int, float] = field(default_factory=dict)
    # track id -> index of its detection within the scan
    assigned: Dict[int, int] = field(default_factory=dict)
    repairs: int = 0
    rejections: int = 0
    initiated: List[int] = field(default_factory=list)
    deleted: List[int] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "outcomes": {str(k): v for k, v in sorted(self.outcomes.items())},
            "cov_norms": {str(k): v for k, v in sorted(self.cov_norms.items())},
            "assigned": {str(k): v for k, v in sorted(self.assigned.items())},
            "repairs": self.repairs,
            "rejections": self.rejections,
            "initiated": list(self.initiated),
            "deleted": list(self.deleted),
        }


@dataclass
class TrackerConfig:
    gate: float = DEFAULT_GATE
    deletion_threshold: float = DEFAULT_DELETION_THRESHOLD
    initiation: str = "truth"
    velocity_std: float = DEFAULT_VELOCITY_STD
    confirm_hits: int = 2
    confirm_window: int = 3

    def __post_init__(self):
        if not self.gate > 0:
            raise InvalidArgumentError(f"gate must be positive, got {self.gate}")
        if not self.deletion_threshold > 0:
            raise InvalidArgumentError(
                f"deletion_threshold must be positive, got {self.deletion_threshold}"
            )
        if self.initiation not in INITIATION_POLICIES:
            raise InvalidArgumentError(
                f"initiation must be one of {INITIATION_POLICIES}, got {self.initiation!r}"
            )
        if self.confirm_hits < 1 or self.confirm_window < 1:
            raise InvalidArgumentError("confirm_hits and confirm_window must be >= 1")


@dataclass
class TrackerResult:
    tracks: List[Track]
    logs: List[ScanLog]
    diagnostics: FilterDiagnostics

    def confirmed_tracks(self) -> List[Track]:
        return [t for t in self.tracks if t.ever_confirmed]

    @property
    def deletions(self) -> List[Tuple[float, int]]:
        confirmed = {t.id for t in self.confirmed_tracks()}
        return [
            (log.timestamp, tid) for log in self.logs for tid in log.deleted if tid in confirmed
        ]


def _group_by_sensor(detections: Sequence[Detection]) -> List[Tuple[str, List[int]]]:
    groups: Dict[str, List[int]] = {}
    for index, detection in enumerate(detections):
        groups.setdefault(detection.sensor, []).append(index)
    return list(groups.items())


class Tracker:
    """
    Stateful GNN tracker. ``step`` consumes one scan; ``result`` returns the
    history of every track ever created.
    """

    def __init__(
        self,
        dynamics: LinearDynamics,
        kind: FilterKind,
        config: Optional[TrackerConfig] = None,
        rng: Optional[np.random.Generator] = None,
        initial_states: Sequence[GaussianState] = (),
    ):
        self.dynamics = dynamics
        self.kind = kind
        self.config = config or TrackerConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        self.diagnostics = FilterDiagnostics()
        self.live: List[Track] = []
        self.finished: List[Track] = []
        self.logs: List[ScanLog] = []
        self.last_time: Optional[float] = None
        self._next_id = 0
        for state in initial_states:
            track = self._new_track(state, CONFIRMED)
            track.ever_confirmed = True
            track.confirmed_time = state.timestamp

    def _new_track(self, state: GaussianState, status: str) -> Track:
        track = Track(
            id=self._next_id,
            states=[state],
            last_update_time=state.timestamp,
            status=status,
        )
        self._next_id += 1
        self.live.append(track)
        return track

    def step(self, timestamp: float, detections: Sequence[Detection]) -> ScanLog:
        timestamp = float(timestamp)
        if self.last_time is not None and timestamp < self.last_time:
            raise InvalidArgumentError(
                f"Scan at t={timestamp} precedes previous scan t={self.last_time}"
            )
        for detection in detections:
            if abs(detection.timestamp - timestamp) > 1e-9:
                raise InvalidArgumentError(
                    f"Detection at t={detection.timestamp} grouped into scan t={timestamp}"
                )
        self.last_time = timestamp
        log = ScanLog(timestamp=timestamp)
        repairs_before = self.diagnostics.repairs
        rejections_before = self.diagnostics.rejections

        current: Dict[int, GaussianState] = {}
        for track in self.live:
            current[track.id] = predict(track.state, self.dynamics, timestamp)
            log.outcomes[track.id] = "coasted"

        for sensor, indices in _group_by_sensor(detections):
            group = [detections[i] for i in indices]
            unassigned = self._associate(group, indices, current, log)
            if self.config.initiation == "single_point":
                for j in unassigned:
                    self._initiate(group[j], current, log)
            elif unassigned:
                logger.debug(
                    "t=%.3f: %d unassigned detection(s) from %s ignored",
                    timestamp,
                    len(unassigned),
                    sensor,
                )

        for track in self.live:
            if track.states[-1].timestamp != timestamp:
                track.append(current[track.id])
            elif track.states[-1] is not current[track.id]:
                track.states[-1] = current[track.id]
            log.cov_norms[track.id] = float(np.linalg.norm(track.state.cov, "fro"))

        self._manage_lifecycle(timestamp, log)
        log.repairs = self.diagnostics.repairs - repairs_before
        log.rejections = self.diagnostics.rejections - rejections_before
        self.logs.append(log)
        return log

    def _associate(
        self,
        group: List[Detection],
        indices: Sequence[int],
        current: Dict[int, GaussianState],
        log: ScanLog,
    ) -> List[int]:
        ids = [track.id for track in self.live]
        states = [current[i] for i in ids]
        hypotheses = hypothesize(
            states, group, self.kind, self.config.gate, self.rng, track_ids=ids
        )
        cost = cost_matrix(hypotheses, len(group))
        assignment = assign_2d(cost, missed_cost=self.config.gate, track_ids=ids)
        rows = {tid: row for tid, row in zip(ids, hypotheses)}
        by_id = {track.id: track for track in self.live}

        for track_id, det_index in assignment.pairs:
            if det_index == MISSED:
                continue
            hyp = rows[track_id][det_index]
            track = by_id[track_id]
            log.assigned[track_id] = int(indices[det_index])
            try:
                current[track_id] = update(
                    current[track_id],
                    group[det_index],
                    self.kind,
                    self.rng,
                    prediction=hyp.prediction,
                    diagnostics=self.diagnostics,
                )
            except UpdateRejected:
                track.update_rejections += 1
                log.outcomes[track_id] = "rejected"
                continue
            except NumericalError as exc:
                logger.warning(
                    "Track %d coasted at t=%.3f after numerical failure: %s",
                    track_id,
                    log.timestamp,
                    exc,
                )
                log.outcomes[track_id] = "failed"
                continue
            track.last_update_time = log.timestamp
            track.hits += 1
            log.outcomes[track_id] = "updated"
        return assignment.unassigned_detections

    def _initiate(
        self,
        detection: Detection,
        current: Dict[int, GaussianState],
        log: ScanLog,
    ) -> Track:
        n_x = self.dynamics.ndim
        state = initiate_from_detection(detection, n_x, self.config.velocity_std)
        track = self._new_track(state, TENTATIVE)
        current[track.id] = state
        log.initiated.append(track.id)
        log.outcomes[track.id] = "initiated"
        return track

    def _manage_lifecycle(self, timestamp: float, log: ScanLog) -> None:
        _, stale = delete_stale(
            self.live, timestamp, self.config.deletion_threshold
        )
        stale_ids = set(stale)
        kept: List[Track] = []
        for track in self.live:
            if track.id in stale_ids:
                self._retire(track, log)
                continue
            if track.status == TENTATIVE:
                if track.hits >= self.config.confirm_hits:
                    track.status = CONFIRMED
                    track.ever_confirmed = True
                    track.confirmed_time = timestamp
                    logger.debug("Track %d confirmed at t=%.3f", track.id, timestamp)
                elif track.age_scans + 1 >= self.config.confirm_window:
                    self._retire(track, log)
                    continue
            track.age_scans += 1
            kept.append(track)
        self.live = kept

    def _retire(self, track: Track, log: ScanLog) -> None:
        track.status = DELETED
        log.deleted.append(track.id)
        self.finished.append(track)

    def result(self) -> TrackerResult:
        tracks = sorted(self.finished + self.live, key=lambda t: t.id)
        return TrackerResult(tracks=tracks, logs=list(self.logs), diagnostics=self.diagnostics)


def run_tracker(
    scans: Iterable[Tuple[float, Sequence[Detection]]],
    config: TrackerConfig,
    kind: FilterKind,
    seed=None,
    dynamics: Optional[LinearDynamics] = None,
    initial_states: Sequence[GaussianState] = (),
) -> TrackerResult:
    """
    Run the tracker over time-ordered scans.

    Each scan is processed in the fixed order predict, associate and
    update (sensor by sensor), initiate, delete. Per-track numerical
    failures coast the track and never abort the run.
    """
    if dynamics is None:
        raise InvalidArgumentError("run_tracker needs the tracker's dynamics model")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tracker = Tracker(dynamics, kind, config, rng, initial_states)
    for timestamp, detections in scans:
        tracker.step(timestamp, list(detections))
    result = tracker.result()
    logger.debug(
        "%s: %d scans, %d tracks, %d repairs, %d rejections",
        kind.label,
        len(result.logs),
        len(result.tracks),
        result.diagnostics.repairs,
        result.diagnostics.rejections,
    )
    return result
