import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from stochastic_mtt.association import Detection, initiate_from_truth
from stochastic_mtt.errors import FormatError, InvalidArgumentError, NumericalError
from stochastic_mtt.filters import GaussianState
from stochastic_mtt.geometry import GeodeticPoint, geodetic_to_local, midpoint
from stochastic_mtt.models import (
    LinearDynamics,
    MeasurementModel,
    ModelSwitchMatrix,
    SensorPose,
    build_az_el_range,
    build_cv_3d,
    build_ncv_2d,
    build_range_bearing,
    build_turn_rate_2d,
    default_switch_matrix,
    position_indices,
)
from stochastic_mtt.utils import sample_gaussian

logger = logging.getLogger(__name__)

(
    " scenarios.py The two experiments: a simulated Class-B"
    " terminal-area scenario with switching NCV / turn-rate"
    " targets observed by one range-bearing radar, and a Class-A"
    " en-route scenario replaying ADS-B truth through three"
    " elevation/bearing/range radars."
)

Scan = Tuple[float, List[Detection]]

MANCHESTER = GeodeticPoint(53.3537, -2.2750, 0.0)
HEATHROW = GeodeticPoint(51.4700, -0.4543, 0.0)
AIRBORNE = GeodeticPoint(52.25, -0.09, 5000.0)

CLASS_B_R = np.diag([4.0, (0.5 * math.pi / 180.0) ** 2])
CLASS_A_R = np.diag(
    [(0.75 * math.pi / 180.0) ** 2, (2.0 * math.pi / 180.0) ** 2, 100.0**2]
)
CLASS_A_MAX_RANGE = 111_000.0

REQUIRED_ADSB_COLUMNS = ("time", "icao24", "lat", "lon", "geoaltitude")
OPTIONAL_ADSB_COLUMNS = ("velocity", "heading", "vertrate")


@dataclass
class GroundTruthPath:
    target_id: str
    times: np.ndarray
    states: np.ndarray
    model_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] != self.times.shape[0]:
            raise InvalidArgumentError(
                f"Path {self.target_id}: {self.times.shape[0]} times but "
                f"{self.states.shape[0]} states"
            )
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgumentError(f"Path {self.target_id}: times not increasing")
        if not np.all(np.isfinite(self.states)):
            raise InvalidArgumentError(f"Path {self.target_id}: non-finite state")

    @property
    def active_interval(self) -> Tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def state_at(self, timestamp: float) -> Optional[np.ndarray]:
        index = int(np.searchsorted(self.times, timestamp - 1e-9))
        if index < self.times.shape[0] and abs(self.times[index] - timestamp) <= 1e-9:
            return self.states[index]
        return None

    def position_at(self, timestamp: float) -> Optional[np.ndarray]:
        state = self.state_at(timestamp)
        if state is None:
            return None
        return state[position_indices(state.shape[0])]

    def switch_count(self) -> int:
        if self.model_indices is None:
            return 0
        return int(np.count_nonzero(np.diff(self.model_indices)))


@dataclass
class ClassBConfig:
    n_targets: int = 10
    box_north: float = 30_000.0
    box_east: float = 10_000.0
    box_origin: Tuple[float, float] = (-15_000.0, 5_000.0)
    speed_bound: float = 200.0
    dt: float = 1.0
    horizon: int = 100
    switch_matrix: ModelSwitchMatrix = field(default_factory=default_switch_matrix)
    omega: float = math.radians(20.0)
    q_x: float = 0.05
    q_y: float = 0.05
    radar: SensorPose = field(
        default_factory=lambda: SensorPose(np.zeros(2), label="radar")
    )
    R: np.ndarray = field(default_factory=lambda: CLASS_B_R.copy())
    initial_model: int = 0
    tracker_q: float = 100.0
    prior_position_std: float = 10.0
    prior_velocity_std: float = 5.0

    def __post_init__(self):
        if self.n_targets < 1:
            raise InvalidArgumentError(f"n_targets must be >= 1, got {self.n_targets}")
        if not (self.box_north > 0 and self.box_east > 0):
            raise InvalidArgumentError("Position box extents must be positive")
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if self.horizon < 1:
            raise InvalidArgumentError(f"horizon must be >= 1, got {self.horizon}")
        if self.speed_bound < 0:
            raise InvalidArgumentError("speed_bound must be non-negative")
        if self.switch_matrix.size != 3:
            raise InvalidArgumentError(
                "Class-B switch matrix must be 3x3 over (NCV, TR+, TR-)"
            )
        if not 0 <= self.initial_model < 3:
            raise InvalidArgumentError(f"initial_model out of range: {self.initial_model}")

    def truth_models(self) -> List[LinearDynamics]:
        return [
            build_ncv_2d(self.dt, self.q_x, self.q_y),
            build_turn_rate_2d(self.dt, self.omega, self.q_x, self.q_y),
            build_turn_rate_2d(self.dt, -self.omega, self.q_x, self.q_y),
        ]

    def tracker_dynamics(self) -> LinearDynamics:
        return build_ncv_2d(self.dt, self.tracker_q, self.tracker_q)

    def measurement_model(self) -> MeasurementModel:
        return build_range_bearing(self.radar, self.R)

    def prior_cov(self) -> np.ndarray:
        p = self.prior_position_std**2
        v = self.prior_velocity_std**2
        return np.diag([p, v, p, v])


@dataclass
class SensorSite:
    label: str
    location: GeodeticPoint
    velocity: Optional[Tuple[float, float, float]] = None


def default_sensor_sites() -> List[SensorSite]:
    return [
        SensorSite("manchester", MANCHESTER),
        SensorSite("heathrow", HEATHROW),
        SensorSite("airborne", AIRBORNE),
    ]


@dataclass
class ClassAConfig:
    adsb_path: Optional[Path] = None
    origin: Optional[GeodeticPoint] = None
    sensors: List[SensorSite] = field(default_factory=default_sensor_sites)
    max_range: float = CLASS_A_MAX_RANGE
    R: np.ndarray = field(default_factory=lambda: CLASS_A_R.copy())
    clutter_rate: float = 0.0
    scan_interval: float = 5.0
    max_gap: float = 30.0
    q_x: float = 10.0
    q_y: float = 10.0
    q_z: float = 5.0
    prior_position_std: float = 100.0
    prior_velocity_std: float = 20.0

    def __post_init__(self):
        if not self.max_range > 0:
            raise InvalidArgumentError(f"max_range must be positive, got {self.max_range}")
        if not self.scan_interval > 0:
            raise InvalidArgumentError("scan_interval must be positive")
        if self.clutter_rate < 0:
            raise InvalidArgumentError("clutter_rate must be non-negative")
        if not self.sensors:
            raise InvalidArgumentError("Class-A scenario needs at least one sensor")
        R = np.asarray(self.R, dtype=float)
        if R.shape != (3, 3) or np.linalg.eigvalsh(0.5 * (R + R.T)).min() < 0:
            raise InvalidArgumentError("Class-A R must be a 3x3 PSD matrix")
        self.R = R

    def scene_origin(self) -> GeodeticPoint:
        """Configured origin, else the midpoint of Manchester and Heathrow."""
        if self.origin is not None:
            return self.origin
        return midpoint(MANCHESTER, HEATHROW)

    def sensor_poses(self, origin: Optional[GeodeticPoint] = None) -> List[SensorPose]:
        origin = origin or self.scene_origin()
        poses = []
        for site in self.sensors:
            local = geodetic_to_local(
                site.location.lat, site.location.lon, site.location.alt, origin
            )
            poses.append(
                SensorPose(
                    position=local,
                    max_range=self.max_range,
                    label=site.label,
                    velocity=None if site.velocity is None else np.asarray(site.velocity),
                )
            )
        return poses

    def tracker_dynamics(self) -> LinearDynamics:
        return build_cv_3d(self.scan_interval, self.q_x, self.q_y, self.q_z)

    def prior_cov(self) -> np.ndarray:
        p = self.prior_position_std**2
        v = self.prior_velocity_std**2
        return np.diag([p, v, p, v, p, v])


@dataclass
class ClassBScenario:
    paths: List[GroundTruthPath]
    scans: List[Scan]
    model: MeasurementModel


@dataclass
class ClassAScenario:
    paths: List[GroundTruthPath]
    scans: List[Scan]
    sensors: List[SensorPose]
    origin: GeodeticPoint


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_class_b(config: ClassBConfig, seed=None) -> ClassBScenario:
    """
    Switching-model truth and one range/bearing detection per target per
    scan (no clutter, detection probability 1).
    """
    rng = _rng(seed)
    models = config.truth_models()
    switch = config.switch_matrix
    measurement = config.measurement_model()
    times = np.arange(config.horizon + 1) * config.dt

    north0, east0 = config.box_origin
    states = []
    for _ in range(config.n_targets):
        states.append(
            np.array(
                [
                    north0 + rng.uniform(0.0, config.box_north),
                    rng.uniform(-config.speed_bound, config.speed_bound),
                    east0 + rng.uniform(0.0, config.box_east),
                    rng.uniform(-config.speed_bound, config.speed_bound),
                ]
            )
        )
    histories = [[s] for s in states]
    modes = [[config.initial_model] for _ in states]
    zero = np.zeros(4)

    for _ in range(config.horizon):
        for i in range(config.n_targets):
            mode = switch.draw(modes[i][-1], rng)
            dyn = models[mode]
            x = dyn.F @ histories[i][-1] + sample_gaussian(zero, dyn.Q, rng)
            histories[i].append(x)
            modes[i].append(mode)

    paths = [
        GroundTruthPath(
            target_id=f"target-{i}",
            times=times,
            states=np.vstack(histories[i]),
            model_indices=np.asarray(modes[i]),
        )
        for i in range(config.n_targets)
    ]

    scans: List[Scan] = []
    noise_mean = np.zeros(measurement.ndim_meas)
    for k in range(1, config.horizon + 1):
        t = float(times[k])
        detections = []
        for path in paths:
            x = path.states[k]
            offset = x[[0, 2]] - config.radar.position
            if np.hypot(*offset) > config.radar.max_range:
                continue
            try:
                z = measurement.function(x)
            except NumericalError:
                logger.debug("%s at the radar at t=%.1f; no detection", path.target_id, t)
                continue
            z = z + sample_gaussian(noise_mean, measurement.R, rng)
            detections.append(
                Detection(z, t, config.radar.label, measurement, target_id=path.target_id)
            )
        scans.append((t, detections))

    logger.info(
        "Class-B scenario: %d targets, %d scans, %d switches",
        config.n_targets,
        len(scans),
        sum(p.switch_count() for p in paths),
    )
    return ClassBScenario(paths=paths, scans=scans, model=measurement)


def read_adsb_frame(path: Union[str, Path]) -> Tuple[pd.DataFrame, int]:
    """
    Read an ADS-B state-vector CSV. Returns the clean rows sorted by
    aircraft and time, and the number of rows skipped as unparseable.
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"ADS-B file not found: {path}")
        raise FileNotFoundError(f"ADS-B file not found: {path}")

    bad_lines: List[List[str]] = []

    def _skip(line: List[str]):
        bad_lines.append(line)
        return None

    frame = pd.read_csv(
        path,
        dtype=str,
        encoding="utf-8",
        engine="python",
        on_bad_lines=_skip,
        skipinitialspace=True,
    )
    frame.columns = [str(c).strip() for c in frame.columns]
    for column in REQUIRED_ADSB_COLUMNS:
        if column not in frame.columns:
            raise FormatError(
                f"ADS-B file {path} is missing required column {column!r}", column=column
            )

    numeric = [c for c in REQUIRED_ADSB_COLUMNS if c != "icao24"]
    numeric += [c for c in OPTIONAL_ADSB_COLUMNS if c in frame.columns]
    for column in numeric:
        frame[column] = pd.to_numeric(frame[column], errors="coerce")
    frame["icao24"] = frame["icao24"].astype(str).str.strip().str.lower()
    frame.loc[frame["icao24"].isin(["", "nan", "none"]), "icao24"] = np.nan

    valid = frame[list(REQUIRED_ADSB_COLUMNS)].notna().all(axis=1)
    valid &= frame["lat"].between(-90.0, 90.0) & frame["lon"].between(-180.0, 180.0)
    skipped = int((~valid).sum()) + len(bad_lines)
    clean = frame.loc[valid].sort_values(["icao24", "time"], kind="mergesort")
    return clean.reset_index(drop=True), skipped


def _grid(start: float, stop: float, interval: float) -> np.ndarray:
    first = math.ceil(start / interval - 1e-9)
    last = math.floor(stop / interval + 1e-9)
    return np.arange(first, last + 1) * interval


def _interp_or_gradient(
    grid: np.ndarray,
    times: np.ndarray,
    values: Optional[np.ndarray],
    positions: np.ndarray,
) -> np.ndarray:
    if values is not None:
        ok = np.isfinite(values)
        if ok.any():
            return np.interp(grid, times[ok], values[ok])
    if grid.shape[0] >= 2:
        return np.gradient(positions, grid)
    return np.zeros_like(grid)


def load_adsb(
    path: Union[str, Path],
    origin: GeodeticPoint,
    scan_interval: float = 5.0,
    max_gap: float = 30.0,
    t0: Optional[float] = None,
) -> List[GroundTruthPath]:
    """
    ADS-B truth on the scan grid, in scene-local [n, vn, e, ve, u, vu].

    Times are seconds since ``t0`` (default: first record in the file).
    A gap longer than ``max_gap`` seconds splits an aircraft's track into
    separate truth segments, named ``<icao24>#<k>`` after the first.
    """
    frame, skipped = read_adsb_frame(path)
    if skipped:
        logger.warning("Skipped %d unparseable ADS-B row(s) in %s", skipped, path)
    if frame.empty:
        logger.warning("No usable ADS-B rows in %s", path)
        return []
    if t0 is None:
        t0 = float(frame["time"].min())

    local = geodetic_to_local(
        frame["lat"].to_numpy(), frame["lon"].to_numpy(), frame["geoaltitude"].to_numpy(), origin
    )
    frame = frame.assign(north=local[:, 0], east=local[:, 1], up=local[:, 2])
    has_velocity = {"velocity", "heading"} <= set(frame.columns)
    if has_velocity:
        heading = np.radians(frame["heading"].to_numpy())
        frame = frame.assign(
            v_north=frame["velocity"].to_numpy() * np.cos(heading),
            v_east=frame["velocity"].to_numpy() * np.sin(heading),
        )
    if "vertrate" in frame.columns:
        frame = frame.assign(v_up=frame["vertrate"].to_numpy())

    paths: List[GroundTruthPath] = []
    for icao, group in frame.groupby("icao24", sort=True):
        group = group.drop_duplicates("time", keep="last")
        times = group["time"].to_numpy() - t0
        breaks = np.nonzero(np.diff(times) > max_gap)[0] + 1
        for segment, rows in enumerate(np.split(np.arange(times.shape[0]), breaks)):
            seg_times = times[rows]
            grid = _grid(seg_times[0], seg_times[-1], scan_interval)
            if grid.size == 0:
                continue
            columns = []
            for axis, vel in (("north", "v_north"), ("east", "v_east"), ("up", "v_up")):
                position = np.interp(grid, seg_times, group[axis].to_numpy()[rows])
                velocity_values = (
                    group[vel].to_numpy()[rows] if vel in group.columns else None
                )
                velocity = _interp_or_gradient(grid, seg_times, velocity_values, position)
                columns.extend([position, velocity])
            target_id = str(icao) if segment == 0 else f"{icao}#{segment}"
            paths.append(GroundTruthPath(target_id, grid, np.column_stack(columns)))

    logger.info(
        "Loaded %d truth path(s) for %d aircraft from %s",
        len(paths),
        frame["icao24"].nunique(),
        path,
    )
    return paths


def _clutter(
    pose: SensorPose,
    model: MeasurementModel,
    timestamp: float,
    rate: float,
    rng: np.random.Generator,
) -> List[Detection]:
    count = int(rng.poisson(rate))
    detections = []
    for _ in range(count):
        z = np.array(
            [
                rng.uniform(-math.pi / 2, math.pi / 2),
                rng.uniform(-math.pi, math.pi),
                rng.uniform(0.0, pose.max_range),
            ]
        )
        detections.append(
            Detection(z, timestamp, pose.label, model, is_clutter_truth_flag=True)
        )
    return detections


def simulate_detections(
    paths: Sequence[GroundTruthPath],
    config: ClassAConfig,
    seed=None,
    sensors: Optional[Sequence[SensorPose]] = None,
) -> List[Scan]:
    """
    Elevation/bearing/range detections from every sensor for every
    aircraft within slant range, plus optional Poisson clutter.
    Scans are merged per timestamp in sensor order.
    """
    rng = _rng(seed)
    sensors = list(sensors) if sensors is not None else config.sensor_poses()
    if not paths:
        return []
    times = np.unique(np.concatenate([p.times for p in paths]))
    start = float(times[0])
    noise_mean = np.zeros(3)
    static_models: Dict[str, MeasurementModel] = {
        pose.label: build_az_el_range(pose, config.R) for pose in sensors if not pose.is_moving
    }

    scans: List[Scan] = []
    for t in times:
        t = float(t)
        detections: List[Detection] = []
        for pose in sensors:
            current = pose.at(t - start)
            model = static_models.get(pose.label) or build_az_el_range(current, config.R)
            for path in paths:
                x = path.state_at(t)
                if x is None:
                    continue
                slant = float(np.linalg.norm(x[[0, 2, 4]] - current.position))
                if slant > current.max_range:
                    continue
                try:
                    z = model.function(x)
                except NumericalError:
                    continue
                z = z + sample_gaussian(noise_mean, config.R, rng)
                detections.append(
                    Detection(z, t, current.label, model, target_id=path.target_id)
                )
            if config.clutter_rate > 0:
                detections.extend(_clutter(current, model, t, config.clutter_rate, rng))
        scans.append((t, detections))
    return scans


def simulate_class_a(config: ClassAConfig, seed=None) -> ClassAScenario:
    if config.adsb_path is None:
        raise InvalidArgumentError("Class-A scenario needs an ADS-B file")
    origin = config.scene_origin()
    paths = load_adsb(
        config.adsb_path, origin, config.scan_interval, config.max_gap
    )
    sensors = config.sensor_poses(origin)
    scans = simulate_detections(paths, config, seed, sensors=sensors)
    logger.info(
        "Class-A scenario: %d truth path(s), %d scans, %d detections",
        len(paths),
        len(scans),
        sum(len(d) for _, d in scans),
    )
    return ClassAScenario(paths=paths, scans=scans, sensors=sensors, origin=origin)


def initial_track_states(
    paths: Sequence[GroundTruthPath],
    prior_cov: np.ndarray,
    start_time: float,
    rng: np.random.Generator,
) -> List[GaussianState]:
    """Truth-seeded priors for every target alive at ``start_time``."""
    states = []
    for path in paths:
        true_state = path.state_at(start_time)
        if true_state is not None:
            states.append(initiate_from_truth(true_state, prior_cov, start_time, rng))
    return states
