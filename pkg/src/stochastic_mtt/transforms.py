import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from scipy import stats

from stochastic_mtt.errors import InvalidArgumentError, NumericalError
from stochastic_mtt.models import GaussianDensity, MeasurementModel
from stochastic_mtt.utils import (
    clamp_eigenvalues,
    min_eigenvalue,
    repair_psd,
    sqrt_matrix,
    symmetrize,
    wrap_components,
)

logger = logging.getLogger(__name__)

(
    " transforms.py Gaussian-weighted moment integrals of a"
    " measurement function: Taylor linearization, the scaled"
    " unscented rule, the third-degree cubature rule and the"
    " randomized spherical-radial rule of the stochastic"
    " integration filter."
)

DEFAULT_SIF_ITERATIONS = 10


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray
    weights_mean: np.ndarray
    weights_cov: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        wm = np.asarray(self.weights_mean, dtype=float).reshape(-1)
        wc = np.asarray(self.weights_cov, dtype=float).reshape(-1)
        if points.shape[0] < 1 or not points.shape[0] == wm.shape[0] == wc.shape[0]:
            raise InvalidArgumentError(
                f"{points.shape[0]} points but {wm.shape[0]}/{wc.shape[0]} weights"
            )
        if abs(wm.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"Mean weights sum to {wm.sum():.15g}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights_mean", wm)
        object.__setattr__(self, "weights_cov", wc)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class SifRuleDraw:
    rotation: np.ndarray
    radius: float

    def __post_init__(self):
        rotation = np.atleast_2d(np.asarray(self.rotation, dtype=float))
        n = rotation.shape[0]
        if not np.allclose(rotation.T @ rotation, np.eye(n), rtol=0.0, atol=1e-10):
            raise InvalidArgumentError("SIF rotation is not orthogonal")
        if not self.radius > 0:
            raise InvalidArgumentError(f"SIF radius must be positive, got {self.radius}")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class TransformResult:
    """Predicted measurement moments; ``cov_zz`` already includes R."""

    z_mean: np.ndarray
    cov_zz: np.ndarray
    cov_xz: np.ndarray
    repaired: bool = False


class MomentTransform(Protocol):
    def __call__(
        self,
        model: MeasurementModel,
        prior: GaussianDensity,
        rng: Optional[np.random.Generator] = None,
    ) -> TransformResult: ...


def _finish(
    model: MeasurementModel,
    z_mean: np.ndarray,
    cov_zz_noiseless: np.ndarray,
    cov_xz: np.ndarray,
    repaired: bool = False,
) -> TransformResult:
    cov_zz, fixed = repair_psd(
        symmetrize(cov_zz_noiseless) + model.R, context=f"Pzz {model.name}"
    )
    return TransformResult(
        z_mean=wrap_components(z_mean, model.angle_mask),
        cov_zz=cov_zz,
        cov_xz=cov_xz,
        repaired=repaired or fixed,
    )


def transform_linearize(model: MeasurementModel, prior: GaussianDensity) -> TransformResult:
    """First-order Taylor expansion of h about the prior mean."""
    try:
        H = model.jacobian_at(prior.mean)
    except (ValueError, ArithmeticError) as exc:
        raise NumericalError(
            f"Jacobian evaluation failed for {model.name}", {"cause": repr(exc)}
        ) from exc
    if not np.all(np.isfinite(H)):
        raise NumericalError(f"Non-finite Jacobian for {model.name}")
    P = prior.cov
    return _finish(model, model.function(prior.mean), H @ P @ H.T, P @ H.T)


def unscented_points(
    prior: GaussianDensity,
    alpha: float = 0.5,
    beta: float = 2.0,
    kappa: Optional[float] = None,
) -> SigmaPointSet:
    """Scaled unscented sigma points (2n + 1 of them)."""
    n = prior.ndim
    if kappa is None:
        kappa = 3.0 - n
    scale_sq = alpha**2 * (n + kappa)
    if not scale_sq > 0:
        raise InvalidArgumentError(
            f"(n + kappa) * alpha^2 must be positive, got {scale_sq}"
        )
    lam = scale_sq - n
    root = sqrt_matrix(prior.cov, context="unscented points") * np.sqrt(scale_sq)
    points = np.vstack([prior.mean, prior.mean + root.T, prior.mean - root.T])

    wm = np.full(2 * n + 1, 1.0 / (2.0 * scale_sq))
    wm[0] = lam / scale_sq
    wc = wm.copy()
    wc[0] += 1.0 - alpha**2 + beta
    return SigmaPointSet(points, wm, wc)


def cubature_points(prior: GaussianDensity) -> SigmaPointSet:
    """Third-degree spherical-radial cubature: 2n equally weighted points."""
    n = prior.ndim
    root = sqrt_matrix(prior.cov, context="cubature points") * np.sqrt(n)
    points = np.vstack([prior.mean + root.T, prior.mean - root.T])
    weights = np.full(2 * n, 1.0 / (2 * n))
    return SigmaPointSet(points, weights, weights.copy())


def draw_sif_rule(n: int, rng: np.random.Generator) -> SifRuleDraw:
    """Haar-random rotation and a chi(n + 2) radius."""
    gaussian = rng.standard_normal((n, n))
    q, r = np.linalg.qr(gaussian)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    radius = float(stats.chi(n + 2).rvs(random_state=rng))
    return SifRuleDraw(rotation=q * signs, radius=radius)


def sif_rule_points(prior: GaussianDensity, draw: SifRuleDraw) -> SigmaPointSet:
    """
    One realization of the stochastic spherical-radial rule.

    Points are the mean and mean +/- radius * L * rotation * e_i, with
    weights 1 - n / radius^2 for the centre and 1 / (2 radius^2) for the
    rest. The centre weight may be negative.
    """
    n = prior.ndim
    if draw.rotation.shape != (n, n):
        raise InvalidArgumentError(
            f"Rotation shape {draw.rotation.shape} does not match state dimension {n}"
        )
    directions = sqrt_matrix(prior.cov, context="SIF points") @ draw.rotation
    offsets = draw.radius * directions.T
    points = np.vstack([prior.mean, prior.mean + offsets, prior.mean - offsets])
    rho_sq = draw.radius**2
    weights = np.full(2 * n + 1, 1.0 / (2.0 * rho_sq))
    weights[0] = 1.0 - n / rho_sq
    return SigmaPointSet(points, weights, weights.copy())


def _evaluate(model: MeasurementModel, points: np.ndarray) -> np.ndarray:
    try:
        return np.array([model.function(p) for p in points])
    except (ValueError, ArithmeticError) as exc:
        raise NumericalError(
            f"Measurement function failed on a sigma point ({model.name})",
            {"cause": repr(exc)},
        ) from exc


def points_transform(
    model: MeasurementModel, prior: GaussianDensity, points: SigmaPointSet
) -> TransformResult:
    """Evaluate the three moment integrals on an arbitrary point set."""
    if points.points.shape[1] != prior.ndim:
        raise InvalidArgumentError(
            f"Points have dimension {points.points.shape[1]}, prior {prior.ndim}"
        )
    anchor = model.function(prior.mean)
    values = _evaluate(model, points.points)
    deviations = wrap_components(values - anchor, model.angle_mask)
    z_offset = points.weights_mean @ deviations
    z_res = wrap_components(deviations - z_offset, model.angle_mask)
    x_res = points.points - prior.mean

    cov_zz = (points.weights_cov[:, None] * z_res).T @ z_res
    cov_xz = (points.weights_cov[:, None] * x_res).T @ z_res
    return _finish(model, anchor + z_offset, cov_zz, cov_xz)


def sif_transform(
    model: MeasurementModel,
    prior: GaussianDensity,
    iterations: int = DEFAULT_SIF_ITERATIONS,
    rng: Optional[np.random.Generator] = None,
    draws=None,
) -> TransformResult:
    """
    Stochastic integration: running mean of randomized rule estimates.

    Each iteration draws a rotation and radius, evaluates the first and
    second raw moments of h (about h(prior mean), angles wrapped) and the
    cross moment on that point set, and folds them into running means.
    Central moments are formed once at the end, so the estimate stays
    asymptotically exact even when single draws carry a negative centre
    weight. ``draws`` overrides the random draws (one per iteration).
    """
    if iterations < 1:
        raise InvalidArgumentError(f"iterations must be >= 1, got {iterations}")
    if draws is None and rng is None:
        raise InvalidArgumentError("sif_transform needs a seeded random generator")
    if draws is not None and len(draws) != iterations:
        raise InvalidArgumentError(f"Expected {iterations} draws, got {len(draws)}")

    n = prior.ndim
    anchor = model.function(prior.mean)
    first = np.zeros(model.ndim_meas)
    second = np.zeros((model.ndim_meas, model.ndim_meas))
    cross = np.zeros((n, model.ndim_meas))
    offset_mean = np.zeros(n)

    for m in range(1, iterations + 1):
        draw = draws[m - 1] if draws is not None else draw_sif_rule(n, rng)
        rule = sif_rule_points(prior, draw)
        w = rule.weights_mean
        deviations = wrap_components(
            _evaluate(model, rule.points) - anchor, model.angle_mask
        )
        x_res = rule.points - prior.mean

        first += (w @ deviations - first) / m
        second += ((w[:, None] * deviations).T @ deviations - second) / m
        cross += ((w[:, None] * x_res).T @ deviations - cross) / m
        offset_mean += (w @ x_res - offset_mean) / m

    cov_zz = symmetrize(second - np.outer(first, first))
    cov_xz = cross - np.outer(offset_mean, first)
    result = _finish(model, anchor + first, cov_zz, cov_xz)
    return _repair_joint(prior, result)


def _repair_joint(prior: GaussianDensity, result: TransformResult) -> TransformResult:
    """Clamp the joint [x; z] covariance if the estimated blocks are inconsistent."""
    n = prior.ndim
    joint = np.block([[prior.cov, result.cov_xz], [result.cov_xz.T, result.cov_zz]])
    trace = float(np.trace(joint))
    if min_eigenvalue(joint) >= -1e-12 * max(trace, 0.0):
        return result
    logger.debug("Joint state/measurement covariance repaired")
    fixed = clamp_eigenvalues(joint, 1e-12 * max(trace, 0.0) / joint.shape[0])
    return TransformResult(
        z_mean=result.z_mean,
        cov_zz=fixed[n:, n:],
        cov_xz=fixed[:n, n:],
        repaired=True,
    )
