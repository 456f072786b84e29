"""Steering vectors, THz path loss and channel-matrix synthesis.

Channel matrices follow the array-of-subarrays layout: ``G`` maps the
``L_B`` BS subarrays onto the ``L_s`` sub-RISs, ``H_k`` maps the sub-RISs
onto the antennas of user ``k``, and ``Q_k`` is the (NLOS-only) direct link.
Every (receive block, transmit block) pair is an independent sparse
geometric channel: one LOS ray plus ``NlosProfile.count`` scattered rays.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .geometry import (SPEED_OF_LIGHT, AnglePair, ArrayGeometry, DomainError, Position3D,
                       angles_bs_to_subris, angles_in_frame, angles_subris_to_user,
                       wrap_azimuth)


# ---------------------------------------------------------------------------
# steering vectors

@functools.lru_cache(maxsize=64)
def _grid_indices(rows: int, cols: int):
    a = np.repeat(np.arange(rows), cols)
    b = np.tile(np.arange(cols), rows)
    a.flags.writeable = b.flags.writeable = False
    return a, b


def steering_phases(geometry: ArrayGeometry, azimuth, elevation, wavelength: float) -> np.ndarray:
    """Element phases (rad) for one or many pointing angles.

    Returns an array of shape ``angles.shape + (rows*cols,)``; entry
    ``a*cols + b`` is ``2*pi*spacing/wavelength * (a*cos(az) + b*sin(az)) * sin(el)``.
    """
    az = np.asarray(azimuth, dtype=float)[..., None]
    el = np.asarray(elevation, dtype=float)[..., None]
    a, b = _grid_indices(geometry.rows, geometry.cols)
    k = 2 * np.pi * geometry.element_spacing / wavelength
    return k * (a * np.cos(az) + b * np.sin(az)) * np.sin(el)


def steering_vector(geometry: ArrayGeometry, angles: AnglePair, wavelength: float) -> np.ndarray:
    """Unit-norm UPA response toward ``angles`` (entries of magnitude 1/sqrt(mn))."""
    ph = steering_phases(geometry, angles.azimuth, angles.elevation, wavelength)
    return np.exp(1j * ph) / math.sqrt(geometry.n_elements)


def steering_matrix(geometry: ArrayGeometry, azimuths, elevations, wavelength: float) -> np.ndarray:
    """Stack of steering vectors, one row per (azimuth, elevation) pair."""
    ph = steering_phases(geometry, azimuths, elevations, wavelength)
    return np.exp(1j * ph) / math.sqrt(geometry.n_elements)


# ---------------------------------------------------------------------------
# path loss

@dataclass(frozen=True)
class PathLossModel:
    """Free-space spreading with molecular absorption ``exp(-mu * d)``."""

    frequency: float
    absorption: float = 0.0

    def __post_init__(self):
        if not self.frequency > 0:
            raise DomainError("frequency must be positive")
        if self.absorption < 0:
            raise DomainError("absorption coefficient must be nonnegative")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency

    @classmethod
    def from_table(cls, frequency: float, path) -> "PathLossModel":
        """Interpolate the absorption coefficient from a two-column text table.

        Columns: frequency in GHz, coefficient in 1/m, ascending frequency.
        """
        table = np.loadtxt(path, ndmin=2)
        if table.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns, got {table.shape[1]}")
        if np.any(np.diff(table[:, 0]) <= 0):
            raise ValueError(f"{path}: frequency column must be strictly ascending")
        mu = float(np.interp(frequency / 1e9, table[:, 0], table[:, 1]))
        return cls(frequency, mu)


def los_gain_power(model: PathLossModel, d: float) -> float:
    """``|beta|^2 = (c / (4 pi d f))^2 * exp(-mu d)``."""
    if not d > 0:
        raise DomainError(f"distance must be positive, got {d!r}")
    return (SPEED_OF_LIGHT / (4 * math.pi * d * model.frequency)) ** 2 * math.exp(-model.absorption * d)


def los_gain(model: PathLossModel, d: float, rng: Optional[np.random.Generator] = None) -> complex:
    """Complex LOS gain; the phase is uniform on [0, 2pi) when ``rng`` is given, else zero."""
    mag = math.sqrt(los_gain_power(model, d))
    phase = rng.uniform(0.0, 2 * math.pi) if rng is not None else 0.0
    return mag * complex(math.cos(phase), math.sin(phase))


def cascade_pathloss_nearfield(model: PathLossModel, d1: float, d2: float) -> float:
    """Cascaded BS-RIS-user power gain when both ends are in the RIS near field."""
    if not (d1 > 0 and d2 > 0):
        raise DomainError("distances must be positive")
    return los_gain_power(model, d1 + d2)


def cascade_pathloss_farfield(model: PathLossModel, d1: float, d2: float) -> float:
    """Cascaded power gain in the far field: ``c^2 / ((4 pi f)^2 d1^2 d2^2) * exp(-mu (d1+d2))``."""
    if not (d1 > 0 and d2 > 0):
        raise DomainError("distances must be positive")
    c = SPEED_OF_LIGHT / (4 * math.pi * model.frequency)
    return c ** 2 / (d1 ** 2 * d2 ** 2) * math.exp(-model.absorption * (d1 + d2))


# ---------------------------------------------------------------------------
# channel matrices

@dataclass(frozen=True)
class NlosProfile:
    count: int = 2
    attenuation_db_range: Tuple[float, float] = (10.0, 20.0)
    angular_spread: float = math.radians(40.0)

    def __post_init__(self):
        if self.count < 0:
            raise DomainError("NLOS count must be nonnegative")
        lo, hi = self.attenuation_db_range
        if lo > hi:
            raise DomainError("attenuation range must satisfy min <= max")
        if not self.angular_spread > 0:
            raise DomainError("angular spread must be positive")


@dataclass
class ChannelMatrix:
    """A channel matrix with labeled dimensions and its per-block LOS gains.

    ``los_gains[i, j]`` is the complex LOS gain of the block coupling receive
    block ``i`` with transmit block ``j`` (all zeros for NLOS-only links).
    """

    entries: np.ndarray
    row_dim: str
    col_dim: str
    row_block: int
    col_block: int
    los_gains: np.ndarray = field(default=None)

    @property
    def shape(self):
        return self.entries.shape

    def block(self, i: int, j: int) -> np.ndarray:
        r, c = self.row_block, self.col_block
        return self.entries[i * r:(i + 1) * r, j * c:(j + 1) * c]


def _perturb(angles: AnglePair, spread: float, rng: np.random.Generator) -> AnglePair:
    daz, del_ = rng.uniform(-spread / 2, spread / 2, size=2)
    el = float(np.clip(angles.elevation + del_, -math.pi / 2, math.pi / 2))
    return AnglePair(wrap_azimuth(angles.azimuth + daz), el)


def _nlos_gain(los_power: float, nlos: NlosProfile, rng: np.random.Generator) -> complex:
    atten_db = rng.uniform(*nlos.attenuation_db_range)
    mag = math.sqrt(los_power) * 10 ** (-atten_db / 20)
    return mag * np.exp(1j * rng.uniform(0, 2 * math.pi))


def _sparse_block(rx_geom, tx_geom, rx_angles, tx_angles, los, los_power, model, nlos, rng,
                  include_los=True):
    lam = model.wavelength
    scale = math.sqrt(rx_geom.n_elements * tx_geom.n_elements)
    block = np.zeros((rx_geom.n_elements, tx_geom.n_elements), dtype=complex)
    if include_los:
        block += los * np.outer(steering_vector(rx_geom, rx_angles, lam),
                                steering_vector(tx_geom, tx_angles, lam).conj())
    for _ in range(nlos.count):
        rx_p = _perturb(rx_angles, nlos.angular_spread, rng)
        tx_p = _perturb(tx_angles, nlos.angular_spread, rng)
        g = _nlos_gain(los_power, nlos, rng)
        block += g * np.outer(steering_vector(rx_geom, rx_p, lam),
                              steering_vector(tx_geom, tx_p, lam).conj())
    return scale * block


def _los_coefficient(model: PathLossModel, d: float, common_phase: float) -> complex:
    # common random phase per link plus the propagation phase of this block
    mag = math.sqrt(los_gain_power(model, d))
    return mag * np.exp(1j * (common_phase - 2 * math.pi * d / model.wavelength))


def synthesize_G(bs_geom: ArrayGeometry, ris_geom: ArrayGeometry, model: PathLossModel,
                 nlos: NlosProfile, rng: np.random.Generator) -> ChannelMatrix:
    """BS-to-RIS channel, ``L_s*m_s*n_s x L_B*m_t*n_t``.

    Block ``(i, j)`` couples BS subarray ``j`` with sub-RIS ``i``; its LOS
    ray uses the AOA at the sub-RIS and the (negated) AOD at the subarray.
    """
    bs_centers = bs_geom.subgrid_centers()
    ris_centers = ris_geom.subgrid_centers()
    Ls, Lb = len(ris_centers), len(bs_centers)
    rows, cols = ris_geom.n_elements, bs_geom.n_elements
    G = np.empty((Ls * rows, Lb * cols), dtype=complex)
    gains = np.empty((Ls, Lb), dtype=complex)
    phi0 = rng.uniform(0, 2 * math.pi)
    for i in range(Ls):
        ris_c = Position3D.from_array(ris_centers[i])
        for j in range(Lb):
            bs_c = Position3D.from_array(bs_centers[j])
            aoa, aod, d1 = angles_bs_to_subris(bs_c, ris_c, ris_geom.orientation)
            gains[i, j] = _los_coefficient(model, d1, phi0)
            G[i * rows:(i + 1) * rows, j * cols:(j + 1) * cols] = _sparse_block(
                ris_geom, bs_geom, aoa, aod, gains[i, j], abs(gains[i, j]) ** 2,
                model, nlos, rng)
    return ChannelMatrix(G, "ris_elements", "bs_elements", rows, cols, gains)


def synthesize_H(user_geom: ArrayGeometry, ris_geom: ArrayGeometry, model: PathLossModel,
                 nlos: NlosProfile, rng: np.random.Generator) -> ChannelMatrix:
    """RIS-to-user channel, ``m_r*n_r x L_s*m_s*n_s``, for a single-array user."""
    user = user_geom.center
    ris_centers = ris_geom.subgrid_centers()
    Ls = len(ris_centers)
    rows, cols = user_geom.n_elements, ris_geom.n_elements
    H = np.empty((rows, Ls * cols), dtype=complex)
    gains = np.empty((1, Ls), dtype=complex)
    phi0 = rng.uniform(0, 2 * math.pi)
    for j in range(Ls):
        ris_c = Position3D.from_array(ris_centers[j])
        aod, aoa, d2 = angles_subris_to_user(user, ris_c, ris_geom.orientation)
        gains[0, j] = _los_coefficient(model, d2, phi0)
        H[:, j * cols:(j + 1) * cols] = _sparse_block(
            user_geom, ris_geom, aoa, aod, gains[0, j], abs(gains[0, j]) ** 2, model, nlos, rng)
    return ChannelMatrix(H, "user_elements", "ris_elements", rows, cols, gains)


def synthesize_direct_Q(bs_geom: ArrayGeometry, user_geom: ArrayGeometry, model: PathLossModel,
                        nlos: NlosProfile, rng: np.random.Generator) -> ChannelMatrix:
    """Blocked direct BS-user link: NLOS rays only, ``m_r*n_r x L_B*m_t*n_t``.

    Each scattered ray is shared by all BS subarrays (rank <= ``nlos.count``)
    and sits at least ``attenuation_db_range[0]`` below the LOS power the
    BS-user distance would give.
    """
    bs_centers = bs_geom.subgrid_centers()
    Lb = len(bs_centers)
    rows, cols = user_geom.n_elements, bs_geom.n_elements
    Q = np.zeros((rows, Lb * cols), dtype=complex)
    if nlos.count == 0:
        return ChannelMatrix(Q, "user_elements", "bs_elements", rows, cols, np.zeros((1, Lb), complex))
    lam = model.wavelength
    aoa_user, d = angles_in_frame(user_geom.center, bs_geom.center, user_geom.orientation)
    aod_bs, _ = angles_in_frame(bs_geom.center, user_geom.center, bs_geom.orientation)
    los_power = los_gain_power(model, d)
    scale = math.sqrt(rows * cols)
    for _ in range(nlos.count):
        rx_p = _perturb(aoa_user, nlos.angular_spread, rng)
        tx_p = _perturb(aod_bs, nlos.angular_spread, rng)
        g = _nlos_gain(los_power, nlos, rng)
        a_r = steering_vector(user_geom, rx_p, lam)
        a_t = steering_vector(bs_geom, tx_p, lam).conj()
        # per-subarray phase offsets keep the ray rank-one across the BS
        offsets = np.exp(1j * rng.uniform(0, 2 * math.pi, size=Lb))
        Q += scale * g * np.outer(a_r, np.kron(offsets, a_t))
    return ChannelMatrix(Q, "user_elements", "bs_elements", rows, cols, np.zeros((1, Lb), complex))


def reflection_matrix(phase_vectors) -> np.ndarray:
    """Block-diagonal RIS reflection matrix ``O = blkdiag(diag(q_1), ..., diag(q_L))``."""
    q = np.concatenate([np.asarray(p, dtype=complex).ravel() for p in phase_vectors])
    return np.diag(q)


def cascade(H, O, G) -> np.ndarray:
    """Cascaded BS-RIS-user channel ``T = H O G``."""
    H = H.entries if isinstance(H, ChannelMatrix) else np.asarray(H)
    G = G.entries if isinstance(G, ChannelMatrix) else np.asarray(G)
    O = np.asarray(O)
    if O.ndim == 1:
        if H.shape[1] != O.size or O.size != G.shape[0]:
            raise ValueError(f"non-conformable cascade: {H.shape} x diag({O.size}) x {G.shape}")
        return (H * O) @ G
    if H.shape[1] != O.shape[0] or O.shape[1] != G.shape[0]:
        raise ValueError(f"non-conformable cascade: {H.shape} x {O.shape} x {G.shape}")
    return H @ O @ G
