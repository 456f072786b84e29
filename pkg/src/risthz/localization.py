"""UWB ranging and 3D multilateration from the four RIS-corner anchors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import PathLossModel, los_gain_power
from .geometry import AnglePair, DomainError, Position3D, angles_subris_to_user


class EstimationError(RuntimeError):
    """Multilateration failed to converge."""


@dataclass(frozen=True)
class UwbAnchorSet:
    """Four coplanar UWB anchors and their ranging-error model.

    ``error_model`` is ``"gaussian"`` (``ranging_error`` is the standard
    deviation) or ``"uniform"`` (errors uniform on ``[-eps, eps]``).
    """

    anchors: np.ndarray
    ranging_error: float = 0.0
    error_model: str = "gaussian"

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=float)
        if a.shape != (4, 3):
            raise DomainError("exactly four 3D anchors are required")
        if self.ranging_error < 0:
            raise DomainError("ranging error must be nonnegative")
        if self.error_model not in ("gaussian", "uniform"):
            raise DomainError(f"unknown error model {self.error_model!r}")
        if np.linalg.matrix_rank(a[1:] - a[0], tol=1e-9) < 2:
            raise DomainError("anchors are collinear")
        object.__setattr__(self, "anchors", a)

    @classmethod
    def at_ris_corners(cls, center: Position3D, width: float, height: Optional[float] = None,
                       orientation=None, ranging_error: float = 0.0,
                       error_model: str = "gaussian") -> "UwbAnchorSet":
        """Anchors on the corners of a ``width x height`` panel in its local x-y plane."""
        h = width if height is None else height
        local = np.array([[-width / 2, -h / 2, 0], [width / 2, -h / 2, 0],
                          [width / 2, h / 2, 0], [-width / 2, h / 2, 0]])
        R = np.eye(3) if orientation is None else np.asarray(orientation, dtype=float)
        return cls(local @ R.T + center.as_array(), ranging_error, error_model)

    @property
    def ranging_std(self) -> float:
        if self.error_model == "uniform":
            return self.ranging_error / math.sqrt(3)
        return self.ranging_error

    def plane_frame(self):
        """Origin (centroid) and orthonormal basis whose third column is the plane normal.

        The normal follows the right-hand rule over anchors 0, 1, 2.
        """
        a = self.anchors
        origin = a.mean(axis=0)
        e1 = (a[1] - a[0]) / np.linalg.norm(a[1] - a[0])
        n = np.cross(a[1] - a[0], a[2] - a[0])
        e3 = n / np.linalg.norm(n)
        e2 = np.cross(e3, e1)
        return origin, np.stack([e1, e2, e3], axis=1)


@dataclass(frozen=True)
class PositionEstimate:
    position: Position3D
    error_radius: float
    degenerate: bool = False
    iterations: int = 0
    residual_rms: float = 0.0

    def __post_init__(self):
        if self.error_radius < 0:
            raise DomainError("error radius must be nonnegative")


def range_measurements(anchors: UwbAnchorSet, true_user: Position3D,
                       rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Noisy anchor-to-user distances ``|p - a_i| + eps_i``."""
    d = np.linalg.norm(anchors.anchors - true_user.as_array(), axis=1)
    if np.any(d == 0):
        raise DomainError("user coincides with an anchor")
    if anchors.ranging_error == 0 or rng is None:
        return d
    if anchors.error_model == "uniform":
        eps = rng.uniform(-anchors.ranging_error, anchors.ranging_error, size=4)
    else:
        eps = rng.normal(0.0, anchors.ranging_error, size=4)
    return d + eps


def _initial_guess(local_anchors, meas, half_space):
    # subtracting the first sphere from the others removes the quadratic terms
    a0, r0 = local_anchors[0], meas[0]
    A = 2 * (local_anchors[1:, :2] - a0[:2])
    b = (r0 ** 2 - meas[1:] ** 2 + np.sum(local_anchors[1:, :2] ** 2, axis=1)
         - np.sum(a0[:2] ** 2))
    xy = np.linalg.lstsq(A, b, rcond=None)[0]
    z2 = np.mean(meas ** 2 - np.sum((xy - local_anchors[:, :2]) ** 2, axis=1))
    return np.array([xy[0], xy[1], half_space * math.sqrt(max(z2, 0.0))]), z2


def multilaterate(anchors: UwbAnchorSet, measurements, half_space: int = 1,
                  max_iter: int = 50, tol: float = 1e-13,
                  confidence_scale: float = 3.0) -> PositionEstimate:
    """Least-squares position from four ranges to coplanar anchors.

    A closed-form solution of the differenced sphere equations seeds a
    Gauss-Newton refinement. Of the two mirror solutions across the anchor
    plane, the one on the side ``half_space`` (+1 along the plane normal,
    -1 against it) is returned. ``error_radius`` is ``confidence_scale``
    standard deviations of the linearized position covariance.
    """
    meas = np.asarray(measurements, dtype=float)
    if meas.shape != (4,) or np.any(meas <= 0):
        raise DomainError("four positive range measurements are required")
    if half_space not in (1, -1):
        raise DomainError("half_space must be +1 or -1")
    origin, basis = anchors.plane_frame()
    local = (anchors.anchors - origin) @ basis
    scale = float(np.max(np.linalg.norm(local, axis=1)))

    p, z2 = _initial_guess(local, meas, half_space)
    if z2 <= 0:
        # on-plane seed has a zero z-gradient; nudge it into the served half-space
        p[2] = half_space * 1e-3 * scale

    def residual(x):
        return np.linalg.norm(x - local, axis=1) - meas

    converged = False
    it = 0
    r = residual(p)
    cost = float(r @ r)
    for it in range(1, max_iter + 1):
        diff = p - local
        dist = np.linalg.norm(diff, axis=1)
        if np.any(dist == 0):
            break
        J = diff / dist[:, None]
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        # step halving keeps the iteration monotone in the squared residual
        t = 1.0
        while t > 1e-10:
            trial = p + t * step
            r_trial = residual(trial)
            c_trial = float(r_trial @ r_trial)
            if c_trial <= cost:
                break
            t *= 0.5
        else:
            converged = True
            break
        p, r, cost = trial, r_trial, c_trial
        if not np.all(np.isfinite(p)):
            raise EstimationError("multilateration diverged")
        if np.linalg.norm(t * step) <= tol * (1 + np.linalg.norm(p)):
            converged = True
            break
    if p[2] * half_space < 0:
        p[2] = -p[2]

    diff = p - local
    dist = np.linalg.norm(diff, axis=1)
    resid = dist - meas
    rms = float(np.sqrt(np.mean(resid ** 2)))
    # one redundant range: E[sum r^2] = sigma^2
    sigma = max(anchors.ranging_std, rms * 2.0)
    J = diff / np.maximum(dist, 1e-300)[:, None]
    try:
        cov = np.linalg.inv(J.T @ J)
        radius = confidence_scale * sigma * math.sqrt(float(np.trace(cov)))
        sigma_z = sigma * math.sqrt(max(float(cov[2, 2]), 0.0))
    except np.linalg.LinAlgError:
        radius = sigma_z = math.inf
    if not math.isfinite(radius):
        radius = math.inf
    # the mirror image is indistinguishable when the height is within noise of zero
    degenerate = bool(abs(p[2]) <= 1e-6 * max(scale, 1.0) or abs(p[2]) < sigma_z)
    if not converged and not degenerate and rms > 1e-6 * max(scale, 1.0) + 10 * anchors.ranging_std:
        raise EstimationError(f"no convergence after {max_iter} iterations (rms {rms:.3g} m)")
    position = Position3D.from_array(basis @ p + origin)
    return PositionEstimate(position, radius, degenerate, it, rms)


@dataclass(frozen=True)
class UserChannelEstimate:
    aod_at_ris: AnglePair
    aoa_at_user: AnglePair
    distance: float
    gain_power: float


def estimate_user_channel_params(est: PositionEstimate, subris_center: Position3D,
                                 model: PathLossModel, ris_orientation=None) -> UserChannelEstimate:
    """LOS angles, distance and free-space gain of a sub-RIS to the estimated user position."""
    aod, aoa, d2 = angles_subris_to_user(est.position, subris_center, ris_orientation)
    return UserChannelEstimate(aod, aoa, d2, los_gain_power(model, d2))
