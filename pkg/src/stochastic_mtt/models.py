import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from stochastic_mtt.errors import DegenerateGeometryError, InvalidArgumentError
from stochastic_mtt.utils import symmetrize, wrap_components

logger = logging.getLogger(__name__)

(
    " models.py State-space building blocks: Gaussian densities,"
    " linear dynamics (NCV, known turn rate, 3D constant velocity),"
    " radar measurement models and the model switching matrix."
    " State ordering is [p_N, v_N, p_E, v_E] in 2D and"
    " [p_N, v_N, p_E, v_E, p_U, v_U] in 3D; the vertical axis is"
    " height above the scene origin."
)

DEGENERATE_RANGE = 1e-9
TURN_RATE_EPS = 1e-9


def _as_vector(values, name: str) -> np.ndarray:
    array = np.atleast_1d(np.asarray(values, dtype=float))
    if array.ndim != 1:
        raise InvalidArgumentError(f"{name} must be a vector, got shape {array.shape}")
    return array


def _as_square(values, name: str, n: Optional[int] = None) -> np.ndarray:
    array = np.atleast_2d(np.asarray(values, dtype=float))
    if array.ndim != 2 or array.shape[0] != array.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {array.shape}")
    if n is not None and array.shape[0] != n:
        raise InvalidArgumentError(f"{name} must be {n}x{n}, got shape {array.shape}")
    return array


def check_covariance(cov: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Symmetrize ``cov`` and reject non-finite or clearly indefinite input."""
    if not np.all(np.isfinite(cov)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    sym = symmetrize(cov)
    if sym.size:
        scale = max(abs(float(np.trace(sym))), 1.0)
        smallest = float(np.linalg.eigvalsh(sym).min())
        if smallest < -1e-9 * scale:
            raise InvalidArgumentError(
                f"{name} is not positive semidefinite (min eigenvalue {smallest:.3e})"
            )
    return sym


@dataclass(frozen=True)
class GaussianDensity:
    """N(mean, cov); the covariance is symmetrized on construction."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = _as_square(self.cov, "cov", mean.shape[0])
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", check_covariance(cov))

    @property
    def ndim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class LinearDynamics:
    """x_{k+1} = F x_k + w_k with w_k ~ N(0, Q) over a step of ``dt`` seconds."""

    F: np.ndarray
    Q: np.ndarray
    dt: float
    factory: Optional[Callable[[float], "LinearDynamics"]] = field(
        default=None, compare=False, repr=False
    )

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        F = _as_square(self.F, "F")
        object.__setattr__(self, "F", F)
        object.__setattr__(
            self, "Q", check_covariance(_as_square(self.Q, "Q", F.shape[0]), "Q")
        )

    @property
    def ndim(self) -> int:
        return self.F.shape[0]

    def at(self, dt: float) -> "LinearDynamics":
        """Same model over a different step; closed forms are re-evaluated."""
        if math.isclose(dt, self.dt, rel_tol=0.0, abs_tol=1e-12):
            return self
        if self.factory is None:
            raise InvalidArgumentError(
                f"Dynamics built for dt={self.dt} cannot be rebuilt for dt={dt}"
            )
        return self.factory(dt)


def _white_acceleration_block(dt: float) -> np.ndarray:
    return np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])


def _check_dt(dt: float) -> None:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")


def _check_intensities(**intensities: float) -> None:
    for name, value in intensities.items():
        if value < 0:
            raise InvalidArgumentError(f"{name} must be non-negative, got {value}")


def _block_diag(*blocks: np.ndarray) -> np.ndarray:
    size = sum(b.shape[0] for b in blocks)
    out = np.zeros((size, size))
    offset = 0
    for block in blocks:
        n = block.shape[0]
        out[offset : offset + n, offset : offset + n] = block
        offset += n
    return out


def build_ncv_2d(dt: float, q_x: float, q_y: float) -> LinearDynamics:
    """Nearly constant velocity in the N/E plane."""
    _check_dt(dt)
    _check_intensities(q_x=q_x, q_y=q_y)
    step = np.array([[1.0, dt], [0.0, 1.0]])
    sigma = _white_acceleration_block(dt)
    return LinearDynamics(
        F=_block_diag(step, step),
        Q=_block_diag(q_x * sigma, q_y * sigma),
        dt=dt,
        factory=functools.partial(_rebuild_ncv_2d, q_x=q_x, q_y=q_y),
    )


def _rebuild_ncv_2d(dt: float, q_x: float, q_y: float) -> LinearDynamics:
    return build_ncv_2d(dt, q_x, q_y)


def build_turn_rate_2d(dt: float, omega: float, q_x: float, q_y: float) -> LinearDynamics:
    """Coordinated turn with a known rate ``omega`` (rad/s)."""
    _check_dt(dt)
    _check_intensities(q_x=q_x, q_y=q_y)
    if abs(omega) < TURN_RATE_EPS:
        ncv = build_ncv_2d(dt, q_x, q_y)
        return LinearDynamics(
            F=ncv.F,
            Q=ncv.Q,
            dt=dt,
            factory=functools.partial(
                _rebuild_turn_rate_2d, omega=omega, q_x=q_x, q_y=q_y
            ),
        )

    s = math.sin(omega * dt)
    c = math.cos(omega * dt)
    F = np.array(
        [
            [1.0, s / omega, 0.0, -(1.0 - c) / omega],
            [0.0, c, 0.0, -s],
            [0.0, (1.0 - c) / omega, 1.0, s / omega],
            [0.0, s, 0.0, c],
        ]
    )
    sigma = _white_acceleration_block(dt)
    return LinearDynamics(
        F=F,
        Q=_block_diag(q_x * sigma, q_y * sigma),
        dt=dt,
        factory=functools.partial(_rebuild_turn_rate_2d, omega=omega, q_x=q_x, q_y=q_y),
    )


def _rebuild_turn_rate_2d(dt: float, omega: float, q_x: float, q_y: float):
    return build_turn_rate_2d(dt, omega, q_x, q_y)


def build_cv_3d(dt: float, q_x: float, q_y: float, q_z: float) -> LinearDynamics:
    """Constant velocity on all three axes."""
    _check_dt(dt)
    _check_intensities(q_x=q_x, q_y=q_y, q_z=q_z)
    step = np.array([[1.0, dt], [0.0, 1.0]])
    sigma = _white_acceleration_block(dt)
    return LinearDynamics(
        F=_block_diag(step, step, step),
        Q=_block_diag(q_x * sigma, q_y * sigma, q_z * sigma),
        dt=dt,
        factory=functools.partial(_rebuild_cv_3d, q_x=q_x, q_y=q_y, q_z=q_z),
    )


def _rebuild_cv_3d(dt: float, q_x: float, q_y: float, q_z: float) -> LinearDynamics:
    return build_cv_3d(dt, q_x, q_y, q_z)


def position_indices(n_x: int) -> np.ndarray:
    """Indices of the position components for a [p, v, p, v, ...] state."""
    if n_x % 2:
        raise InvalidArgumentError(f"State dimension {n_x} is not [p, v] pairs")
    return np.arange(0, n_x, 2)


@dataclass(frozen=True)
class SensorPose:
    position: np.ndarray
    max_range: float = math.inf
    label: str = "sensor"
    velocity: Optional[np.ndarray] = None

    def __post_init__(self):
        position = _as_vector(self.position, "sensor position")
        if position.shape[0] not in (2, 3):
            raise InvalidArgumentError(
                f"Sensor position must be 2D or 3D, got {position.shape[0]} components"
            )
        if not self.max_range > 0:
            raise InvalidArgumentError(
                f"Sensor {self.label!r} max_range must be positive, got {self.max_range}"
            )
        object.__setattr__(self, "position", position)
        if self.velocity is not None:
            velocity = _as_vector(self.velocity, "sensor velocity")
            if velocity.shape != position.shape:
                raise InvalidArgumentError("Sensor velocity must match its position")
            object.__setattr__(self, "velocity", velocity)

    @property
    def is_moving(self) -> bool:
        return self.velocity is not None and bool(np.any(self.velocity))

    def at(self, elapsed: float) -> "SensorPose":
        """Pose after ``elapsed`` seconds of constant-velocity motion."""
        if not self.is_moving:
            return self
        return SensorPose(
            position=self.position + self.velocity * elapsed,
            max_range=self.max_range,
            label=self.label,
            velocity=self.velocity,
        )


def numerical_jacobian(
    func: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    angle_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Central differences with step 1e-6 * max(1, |x_i|) per component."""
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(x.shape[0]):
        step = 1e-6 * max(1.0, abs(x[i]))
        forward = x.copy()
        backward = x.copy()
        forward[i] += step
        backward[i] -= step
        diff = np.asarray(func(forward), dtype=float) - np.asarray(
            func(backward), dtype=float
        )
        if angle_mask is not None:
            diff = wrap_components(diff, angle_mask)
        columns.append(diff / (2.0 * step))
    return np.column_stack(columns)


@dataclass(frozen=True)
class MeasurementModel:
    """
    z = h(x) + v with v ~ N(0, R).

    ``angle_mask`` marks components reported as angles; they are wrapped
    to (-pi, pi] on every evaluation. Without an analytic ``jacobian`` a
    central finite-difference Jacobian is used. ``inverse`` maps a
    measurement back to scene position when the geometry allows it.
    """

    h: Callable[[np.ndarray], np.ndarray]
    R: np.ndarray
    angle_mask: np.ndarray
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None
    sensor: Optional[SensorPose] = None
    name: str = "measurement"

    def __post_init__(self):
        mask = np.asarray(self.angle_mask, dtype=bool).reshape(-1)
        R = _as_square(self.R, "R", mask.shape[0])
        object.__setattr__(self, "angle_mask", mask)
        object.__setattr__(self, "R", check_covariance(R, "R"))

    @property
    def ndim_meas(self) -> int:
        return self.angle_mask.shape[0]

    @property
    def label(self) -> str:
        return self.sensor.label if self.sensor is not None else self.name

    def function(self, x: np.ndarray) -> np.ndarray:
        return wrap_components(np.asarray(self.h(np.asarray(x, dtype=float))), self.angle_mask)

    def jacobian_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        return numerical_jacobian(self.function, x, self.angle_mask)

    def invert(self, z: np.ndarray) -> np.ndarray:
        if self.inverse is None:
            raise InvalidArgumentError(f"Measurement model {self.name!r} has no inverse")
        return np.asarray(self.inverse(np.asarray(z, dtype=float)), dtype=float)


def build_linear_measurement(H, R, name: str = "linear") -> MeasurementModel:
    H = np.atleast_2d(np.asarray(H, dtype=float))

    def h(x):
        return H @ x

    def jacobian(x):
        return H

    return MeasurementModel(
        h=h,
        R=R,
        angle_mask=np.zeros(H.shape[0], dtype=bool),
        jacobian=jacobian,
        name=name,
    )


def build_range_bearing(sensor: SensorPose, R) -> MeasurementModel:
    """Range [m] and bearing clockwise from north [rad] in the N/E plane."""
    if sensor.position.shape[0] != 2:
        raise InvalidArgumentError("Range/bearing needs a 2D sensor position")
    r_n, r_e = sensor.position

    def offsets(x):
        d_n = x[0] - r_n
        d_e = x[2] - r_e
        rng = math.hypot(d_n, d_e)
        if rng < DEGENERATE_RANGE:
            raise DegenerateGeometryError(
                "Target coincides with sensor", {"sensor": sensor.label}
            )
        return d_n, d_e, rng

    def h(x):
        d_n, d_e, rng = offsets(x)
        return np.array([rng, math.atan2(d_e, d_n)])

    def jacobian(x):
        d_n, d_e, rng = offsets(x)
        jac = np.zeros((2, x.shape[0]))
        jac[0, 0] = d_n / rng
        jac[0, 2] = d_e / rng
        jac[1, 0] = -d_e / rng**2
        jac[1, 2] = d_n / rng**2
        return jac

    def inverse(z):
        return np.array([r_n + z[0] * math.cos(z[1]), r_e + z[0] * math.sin(z[1])])

    return MeasurementModel(
        h=h,
        R=R,
        angle_mask=np.array([False, True]),
        jacobian=jacobian,
        inverse=inverse,
        sensor=sensor,
        name=f"range_bearing[{sensor.label}]",
    )


def build_az_el_range(sensor: SensorPose, R) -> MeasurementModel:
    """Elevation, bearing and slant range, in that order."""
    if sensor.position.shape[0] != 3:
        raise InvalidArgumentError("Elevation/bearing/range needs a 3D sensor position")
    r_n, r_e, r_u = sensor.position

    def offsets(x):
        d_n = x[0] - r_n
        d_e = x[2] - r_e
        d_u = x[4] - r_u
        horizontal = math.hypot(d_n, d_e)
        slant = math.hypot(horizontal, d_u)
        if slant < DEGENERATE_RANGE:
            raise DegenerateGeometryError(
                "Target coincides with sensor", {"sensor": sensor.label}
            )
        return d_n, d_e, d_u, horizontal, slant

    def h(x):
        d_n, d_e, d_u, horizontal, slant = offsets(x)
        elevation = math.asin(min(1.0, max(-1.0, d_u / slant)))
        bearing = math.atan2(d_e, d_n) if horizontal >= DEGENERATE_RANGE else 0.0
        return np.array([elevation, bearing, slant])

    def jacobian(x):
        d_n, d_e, d_u, horizontal, slant = offsets(x)
        jac = np.zeros((3, x.shape[0]))
        if horizontal >= DEGENERATE_RANGE:
            jac[0, 0] = -d_n * d_u / (slant**2 * horizontal)
            jac[0, 2] = -d_e * d_u / (slant**2 * horizontal)
            jac[0, 4] = horizontal / slant**2
            jac[1, 0] = -d_e / horizontal**2
            jac[1, 2] = d_n / horizontal**2
        jac[2, 0] = d_n / slant
        jac[2, 2] = d_e / slant
        jac[2, 4] = d_u / slant
        return jac

    def inverse(z):
        elevation, bearing, slant = z
        horizontal = slant * math.cos(elevation)
        return np.array(
            [
                r_n + horizontal * math.cos(bearing),
                r_e + horizontal * math.sin(bearing),
                r_u + slant * math.sin(elevation),
            ]
        )

    return MeasurementModel(
        h=h,
        R=R,
        angle_mask=np.array([True, True, False]),
        jacobian=jacobian,
        inverse=inverse,
        sensor=sensor,
        name=f"el_bearing_range[{sensor.label}]",
    )


@dataclass(frozen=True)
class ModelSwitchMatrix:
    """Row-stochastic Markov matrix over motion-model indices."""

    T: np.ndarray

    def __post_init__(self):
        T = _as_square(self.T, "switch matrix")
        if np.any(T < 0.0) or np.any(T > 1.0):
            raise InvalidArgumentError("Switch matrix entries must lie in [0, 1]")
        for row, total in enumerate(T.sum(axis=1)):
            if abs(total - 1.0) > 1e-12:
                raise InvalidArgumentError(
                    f"Switch matrix row {row} sums to {total:.12g}, expected 1"
                )
        object.__setattr__(self, "T", T)

    @property
    def size(self) -> int:
        return self.T.shape[0]

    def draw(self, current: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self.size, p=self.T[current]))


def default_switch_matrix() -> ModelSwitchMatrix:
    return ModelSwitchMatrix(
        np.array([[0.7, 0.15, 0.15], [0.4, 0.6, 0.0], [0.6, 0.4, 0.0]])
    )


def switch_row_error(rows: Sequence[Sequence[float]]) -> Optional[int]:
    """Index of the first row that is not a probability vector, if any."""
    for index, row in enumerate(rows):
        values = np.asarray(row, dtype=float)
        if np.any(values < 0) or np.any(values > 1) or abs(values.sum() - 1.0) > 1e-12:
            return index
    return None
