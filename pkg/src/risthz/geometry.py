"""Placement, angle and spacing helpers for RIS-aided THz links.

All positions are in meters in a global frame whose origin is the RIS
center. Arrays carry an optional 3x3 rotation (columns are the local x, y,
z axes expressed in global coordinates); angles are always measured in the
local frame of the array that observes them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class DomainError(ValueError):
    """An argument lies outside the domain of the requested operation."""


@dataclass(frozen=True)
class Position3D:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise DomainError(f"non-finite coordinate in {self!r}")

    @classmethod
    def from_array(cls, arr) -> "Position3D":
        a = np.asarray(arr, dtype=float).reshape(3)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def distance_to(self, other: "Position3D") -> float:
        return float(np.linalg.norm(self.as_array() - other.as_array()))


def wrap_azimuth(az: float) -> float:
    """Map an angle onto (-pi, pi]."""
    w = math.remainder(az, 2 * math.pi)
    return math.pi if w <= -math.pi else w


@dataclass(frozen=True)
class AnglePair:
    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (-math.pi - 1e-12 < self.azimuth <= math.pi + 1e-12):
            raise DomainError(f"azimuth {self.azimuth} outside (-pi, pi]")
        if abs(self.elevation) > math.pi / 2 + 1e-12:
            raise DomainError(f"elevation {self.elevation} outside [-pi/2, pi/2]")

    def negated(self) -> "AnglePair":
        """Reverse-link angles: (-azimuth, -elevation)."""
        return AnglePair(wrap_azimuth(-self.azimuth), -self.elevation)

    def direction(self) -> np.ndarray:
        """Unit vector in the local frame pointing along these angles."""
        ce = math.cos(self.elevation)
        return np.array([ce * math.cos(self.azimuth), ce * math.sin(self.azimuth),
                         math.sin(self.elevation)])


def angular_separation(a: AnglePair, b: AnglePair) -> float:
    """Great-circle angle (rad) between two pointing directions."""
    c = float(np.clip(np.dot(a.direction(), b.direction()), -1.0, 1.0))
    return math.acos(c)


def _rotation(orientation) -> np.ndarray:
    if orientation is None:
        return np.eye(3)
    R = np.asarray(orientation, dtype=float)
    if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
        raise DomainError("orientation must be a 3x3 rotation matrix")
    return R


@dataclass(frozen=True)
class ArrayGeometry:
    """A uniform planar array, optionally partitioned into a grid of subarrays.

    ``rows x cols`` is the element grid of ONE subarray (or sub-RIS);
    ``subgrid_rows x subgrid_cols`` is the number of such subarrays laid out
    on a regular grid with pitch ``subgrid_spacing``, centered on ``center``.
    Everything lies in the local x-y plane; local x indexes rows.
    """

    rows: int
    cols: int
    element_spacing: float
    subgrid_rows: int = 1
    subgrid_cols: int = 1
    subgrid_spacing: Optional[float] = None
    center: Position3D = Position3D(0.0, 0.0, 0.0)
    orientation: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError("element grid must be at least 1x1")
        if self.subgrid_rows < 1 or self.subgrid_cols < 1:
            raise DomainError("subgrid must be at least 1x1")
        if not self.element_spacing > 0:
            raise DomainError("element_spacing must be positive")
        if self.n_subgrids > 1:
            if self.subgrid_spacing is None:
                raise DomainError("subgrid_spacing required for more than one subarray")
            if self.subgrid_spacing < self.element_spacing:
                raise DomainError("subgrid_spacing must be >= element_spacing")
        _rotation(self.orientation)

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols

    @property
    def n_subgrids(self) -> int:
        return self.subgrid_rows * self.subgrid_cols

    @property
    def rotation(self) -> np.ndarray:
        return _rotation(self.orientation)

    def subgrid_centers(self) -> np.ndarray:
        """Global (L, 3) centers of the subarrays, row-major over the subgrid."""
        pitch = self.subgrid_spacing or 0.0
        u = (np.arange(self.subgrid_rows) - (self.subgrid_rows - 1) / 2) * pitch
        v = (np.arange(self.subgrid_cols) - (self.subgrid_cols - 1) / 2) * pitch
        uu, vv = np.meshgrid(u, v, indexing="ij")
        local = np.stack([uu.ravel(), vv.ravel(), np.zeros(uu.size)], axis=1)
        return local @ self.rotation.T + self.center.as_array()

    def subgrid_center(self, index: int) -> Position3D:
        return Position3D.from_array(self.subgrid_centers()[index])

    def element_positions(self, index: int = 0) -> np.ndarray:
        """Global (rows*cols, 3) element positions of subarray ``index``."""
        a = (np.arange(self.rows) - (self.rows - 1) / 2) * self.element_spacing
        b = (np.arange(self.cols) - (self.cols - 1) / 2) * self.element_spacing
        aa, bb = np.meshgrid(a, b, indexing="ij")
        local = np.stack([aa.ravel(), bb.ravel(), np.zeros(aa.size)], axis=1)
        return local @ self.rotation.T + self.subgrid_centers()[index]

    def with_center(self, center: Position3D) -> "ArrayGeometry":
        return ArrayGeometry(self.rows, self.cols, self.element_spacing,
                             self.subgrid_rows, self.subgrid_cols,
                             self.subgrid_spacing, center, self.orientation)


# ---------------------------------------------------------------------------
# spacing rules and field boundary

def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if not value > 0:
            raise DomainError(f"{name} must be positive, got {value!r}")


def optimal_subris_spacing(d1: float, wavelength: float, N: int, q: int = 1) -> float:
    """Sub-RIS pitch that makes the BS-RIS channel columns orthogonal.

    Returns ``sqrt(q * d1 * wavelength / N)`` for an ``N x N`` sub-RIS grid at
    distance ``d1`` from the BS.
    """
    _check_positive(d1=d1, wavelength=wavelength, N=N, q=q)
    if int(q) != q:
        raise DomainError("q must be an integer")
    return math.sqrt(q * d1 * wavelength / N)


def optimal_bs_subarray_spacing(d1: float, wavelength: float, M: int, q: int = 1) -> float:
    """BS subarray pitch for an ``M x M`` subarray grid (dual of the sub-RIS rule)."""
    _check_positive(d1=d1, wavelength=wavelength, M=M, q=q)
    if int(q) != q:
        raise DomainError("q must be an integer")
    return math.sqrt(q * d1 * wavelength / M)


class FieldRegion(enum.Enum):
    NEAR = "near"
    FAR = "far"


def field_boundary(N: int, m_s: int, n_s: int, wavelength: float) -> float:
    """Rayleigh distance of an ``N x N`` grid of ``m_s x n_s`` half-wavelength sub-RISs."""
    _check_positive(N=N, m_s=m_s, n_s=n_s, wavelength=wavelength)
    return N ** 2 * m_s * n_s * wavelength / 2


def classify_field(distance: float, boundary: float) -> FieldRegion:
    return FieldRegion.NEAR if distance < boundary else FieldRegion.FAR


# ---------------------------------------------------------------------------
# angles

def angles_in_frame(origin: Position3D, target: Position3D, orientation=None):
    """Angles and distance of ``target`` as seen from ``origin``.

    Azimuth is the four-quadrant ``atan2(dy, dx)``; elevation is
    ``arcsin(dz / d)``, both in the local frame given by ``orientation``.
    """
    delta = _rotation(orientation).T @ (target.as_array() - origin.as_array())
    d = float(np.linalg.norm(delta))
    if d == 0.0:
        raise DomainError("coincident points have no direction")
    az = wrap_azimuth(math.atan2(delta[1], delta[0]))
    el = math.asin(max(-1.0, min(1.0, delta[2] / d)))
    return AnglePair(az, el), d


def angles_bs_to_subris(bs_center: Position3D, subris_center: Position3D,
                        ris_orientation=None):
    """Return ``(aoa_at_ris, aod_at_bs, d1)`` for one BS subarray / sub-RIS pair.

    The AOD at the BS is the negated AOA at the sub-RIS.
    """
    aoa, d1 = angles_in_frame(subris_center, bs_center, ris_orientation)
    return aoa, aoa.negated(), d1


def angles_subris_to_user(user: Position3D, subris_center: Position3D,
                          ris_orientation=None):
    """Return ``(aod_at_ris, aoa_at_user, d2)``; the user AOA is the negated AOD."""
    aod, d2 = angles_in_frame(subris_center, user, ris_orientation)
    return aod, aod.negated(), d2


def point_at(origin: Position3D, angles: AnglePair, distance: float,
             orientation=None) -> Position3D:
    """Inverse of :func:`angles_in_frame`."""
    local = distance * angles.direction()
    return Position3D.from_array(_rotation(orientation) @ local + origin.as_array())


# ---------------------------------------------------------------------------
# orthogonality of the BS-RIS channel columns

def channel_column_inner_product(n_subris: int, index, index_hat, d1: float,
                                 frequency: float, alpha: float,
                                 absorption: float = 0.0,
                                 n_subarrays: Optional[int] = None) -> complex:
    """Inner product of the BS-RIS channel columns of two BS subarrays.

    ``index`` and ``index_hat`` are the (x, y) grid coordinates of the two
    subarrays. The sum runs over the ``n_subris x n_subris`` sub-RIS grid
    with the paraxial (binomial) distance expansion, and is scaled by the
    free-space power gain at ``d1``. Steering-vector factors are left out
    because they have unit magnitude for matched beams.
    """
    _check_positive(n_subris=n_subris, d1=d1, frequency=frequency, alpha=alpha)
    bound = n_subarrays if n_subarrays is not None else n_subris
    x, y = index
    xh, yh = index_hat
    for c in (x, y, xh, yh):
        if not 0 <= c < bound:
            raise DomainError(f"subarray index {c} outside [0, {bound})")
    u = np.arange(n_subris)
    k = math.pi * frequency * alpha ** 2 / (SPEED_OF_LIGHT * d1)
    pu = np.exp(1j * k * ((u - x) ** 2 - (u - xh) ** 2))
    pv = np.exp(1j * k * ((u - y) ** 2 - (u - yh) ** 2))
    prefactor = (SPEED_OF_LIGHT / (4 * math.pi * frequency * d1)) ** 2 * math.exp(-absorption * d1)
    return complex(prefactor * pu.sum() * pv.sum())


def orthogonality_residual(n_subris: int, d1: float, frequency: float, alpha: float,
                           n_subarrays: Optional[int] = None, q: Optional[int] = None) -> float:
    """Largest normalized inner product over distinct subarray pairs.

    Normalization is by the coherent value ``n_subris**2 * prefactor``. When
    ``q`` is given, only pairs whose index difference along some axis is not
    a multiple of ``n_subris / gcd(n_subris, q)`` are considered; those are
    the pairs the spacing rule can decorrelate.
    """
    M = n_subarrays if n_subarrays is not None else n_subris
    coherent = abs(channel_column_inner_product(n_subris, (0, 0), (0, 0), d1, frequency,
                                                alpha, n_subarrays=M))
    period = n_subris // math.gcd(n_subris, q) if q is not None else None
    worst = 0.0
    cells = [(a, b) for a in range(M) for b in range(M)]
    for i, (x, y) in enumerate(cells):
        for (xh, yh) in cells[i + 1:]:
            if period is not None and (xh - x) % period == 0 and (yh - y) % period == 0:
                continue
            val = abs(channel_column_inner_product(n_subris, (x, y), (xh, yh), d1,
                                                   frequency, alpha, n_subarrays=M))
            worst = max(worst, val / coherent)
    return worst
