import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from scipy import linalg

from stochastic_mtt.errors import InvalidArgumentError, NumericalError, UpdateRejected
from stochastic_mtt.models import GaussianDensity, LinearDynamics, MeasurementModel
from stochastic_mtt.transforms import (
    DEFAULT_SIF_ITERATIONS,
    MomentTransform,
    TransformResult,
    cubature_points,
    points_transform,
    sif_transform,
    transform_linearize,
    unscented_points,
)
from stochastic_mtt.utils import clamp_eigenvalues, min_eigenvalue, symmetrize, wrap_components

logger = logging.getLogger(__name__)

(
    " filters.py Generic local filter recursion. The prediction"
    " is the exact linear-Gaussian step; the update is driven by"
    " a moment transform chosen through FilterKind, which yields"
    " the EKF, UKF, CKF and SIF variants."
)

FILTER_NAMES = ("EKF", "UKF", "CKF", "SIF")
MAX_CONDITION = 1e12
NEGATIVE_EIGEN_TOLERANCE = 1e-9


@dataclass(frozen=True)
class GaussianState:
    density: GaussianDensity
    timestamp: float

    @classmethod
    def from_moments(cls, mean, cov, timestamp: float) -> "GaussianState":
        return cls(GaussianDensity(mean, cov), float(timestamp))

    @property
    def mean(self) -> np.ndarray:
        return self.density.mean

    @property
    def cov(self) -> np.ndarray:
        return self.density.cov

    @property
    def ndim(self) -> int:
        return self.density.ndim


@dataclass(frozen=True)
class FilterKind:
    """Which moment transform drives the update, with its parameters."""

    name: str
    alpha: float = 0.5
    beta: float = 2.0
    kappa: Optional[float] = None
    iterations: int = DEFAULT_SIF_ITERATIONS

    def __post_init__(self):
        name = self.name.upper()
        if name not in FILTER_NAMES:
            raise InvalidArgumentError(
                f"Unknown filter kind {self.name!r}; expected one of {FILTER_NAMES}"
            )
        object.__setattr__(self, "name", name)
        if name == "SIF" and self.iterations < 1:
            raise InvalidArgumentError(
                f"SIF iterations must be >= 1, got {self.iterations}"
            )
        if name == "UKF" and self.alpha <= 0:
            raise InvalidArgumentError(f"UKF alpha must be positive, got {self.alpha}")

    @classmethod
    def ekf(cls) -> "FilterKind":
        return cls("EKF")

    @classmethod
    def ukf(cls, alpha: float = 0.5, beta: float = 2.0, kappa: Optional[float] = None):
        return cls("UKF", alpha=alpha, beta=beta, kappa=kappa)

    @classmethod
    def ckf(cls) -> "FilterKind":
        return cls("CKF")

    @classmethod
    def sif(cls, iterations: int = DEFAULT_SIF_ITERATIONS) -> "FilterKind":
        return cls("SIF", iterations=iterations)

    @property
    def label(self) -> str:
        if self.name == "SIF":
            return f"SIF({self.iterations})"
        return self.name

    @property
    def moment_transform(self) -> MomentTransform:
        if self.name == "EKF":
            return lambda model, prior, rng=None: transform_linearize(model, prior)
        if self.name == "UKF":
            return lambda model, prior, rng=None: points_transform(
                model, prior, unscented_points(prior, self.alpha, self.beta, self.kappa)
            )
        if self.name == "CKF":
            return lambda model, prior, rng=None: points_transform(
                model, prior, cubature_points(prior)
            )
        return lambda model, prior, rng=None: sif_transform(model, prior, self.iterations, rng)

    def transform(
        self,
        model: MeasurementModel,
        prior: GaussianDensity,
        rng: Optional[np.random.Generator] = None,
    ) -> TransformResult:
        return self.moment_transform(model, prior, rng)


@dataclass
class FilterDiagnostics:
    """Counters a caller can thread through updates to watch filter health."""

    repairs: int = 0
    rejections: int = 0
    events: list = field(default_factory=list)

    def record(self, kind: str, detail: Dict[str, Any]) -> None:
        self.events.append({"event": kind, **detail})


def predict(state: GaussianState, dyn: LinearDynamics, to_time: float) -> GaussianState:
    """Propagate through F, Q rebuilt for the actual gap."""
    gap = float(to_time) - state.timestamp
    if gap < 0:
        raise InvalidArgumentError(
            f"Cannot predict backwards from t={state.timestamp} to t={to_time}"
        )
    if gap == 0:
        return state
    step = dyn.at(gap)
    if step.ndim != state.ndim:
        raise InvalidArgumentError(
            f"Dynamics dimension {step.ndim} does not match state {state.ndim}"
        )
    mean = step.F @ state.mean
    cov = symmetrize(step.F @ state.cov @ step.F.T + step.Q)
    return GaussianState.from_moments(mean, cov, to_time)


def kalman_gain(cov_xz: np.ndarray, cov_zz: np.ndarray) -> np.ndarray:
    """K = Pxz Pzz^-1 through a Cholesky solve."""
    condition = float(np.linalg.cond(cov_zz))
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise NumericalError(
            "Innovation covariance is singular or ill-conditioned",
            {"condition": condition, "cov_zz": cov_zz.tolist()},
        )
    try:
        factor = linalg.cho_factor(cov_zz, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            "Innovation covariance is not positive definite",
            {"condition": condition, "cov_zz": cov_zz.tolist()},
        ) from exc
    return linalg.cho_solve(factor, cov_xz.T).T


def update(
    state: GaussianState,
    detection,
    kind: FilterKind,
    rng: Optional[np.random.Generator] = None,
    prediction: Optional[TransformResult] = None,
    diagnostics: Optional[FilterDiagnostics] = None,
) -> GaussianState:
    """
    Measurement update with the transform selected by ``kind``.

    ``prediction`` lets a caller reuse the measurement moments it already
    computed for gating. The covariance update is P - K Pzz K^T,
    symmetrized; small negative eigenvalues are clamped. For the UKF a
    clearly indefinite result means the update is rejected (raises
    UpdateRejected) and the caller keeps the predicted state.
    """
    if abs(detection.timestamp - state.timestamp) > 1e-9:
        raise InvalidArgumentError(
            f"Detection at t={detection.timestamp} does not match state t={state.timestamp}"
        )
    model = detection.model
    z = np.asarray(detection.z, dtype=float)
    if z.shape[0] != model.ndim_meas:
        raise InvalidArgumentError(
            f"Detection has {z.shape[0]} components, model expects {model.ndim_meas}"
        )

    if prediction is None:
        prediction = kind.transform(model, state.density, rng)
    if diagnostics is not None and prediction.repaired:
        diagnostics.repairs += 1

    gain = kalman_gain(prediction.cov_xz, prediction.cov_zz)
    innovation = wrap_components(z - prediction.z_mean, model.angle_mask)
    mean = state.mean + gain @ innovation
    cov = symmetrize(state.cov - gain @ prediction.cov_zz @ gain.T)

    if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(mean)):
        raise NumericalError("Update produced non-finite moments", {"kind": kind.label})

    smallest = min_eigenvalue(cov)
    if smallest < 0.0:
        tolerance = NEGATIVE_EIGEN_TOLERANCE * max(float(np.trace(cov)), 0.0)
        detail = {"kind": kind.label, "min_eigenvalue": smallest, "t": state.timestamp}
        if smallest < -tolerance and kind.name == "UKF":
            if diagnostics is not None:
                diagnostics.rejections += 1
                diagnostics.record("rejection", detail)
            logger.warning(
                "UKF update rejected at t=%.3f: covariance eigenvalue %.3e",
                state.timestamp,
                smallest,
            )
            raise UpdateRejected("UKF update produced an indefinite covariance", detail)
        if smallest < -tolerance:
            logger.warning(
                "%s covariance repaired at t=%.3f (eigenvalue %.3e)",
                kind.label,
                state.timestamp,
                smallest,
            )
        cov = clamp_eigenvalues(cov, 1e-12 * max(float(np.trace(cov)), 0.0) / cov.shape[0])
        if diagnostics is not None:
            diagnostics.repairs += 1
            diagnostics.record("repair", detail)

    return GaussianState.from_moments(mean, cov, state.timestamp)
