"""Location-driven analog beams, RIS phase design, PBA refinement and digital precoders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .channel import steering_matrix, steering_vector
from .geometry import AnglePair, ArrayGeometry, DomainError, wrap_azimuth


class PrecoderError(np.linalg.LinAlgError):
    """The channel Gramian is too ill-conditioned to invert."""


# ---------------------------------------------------------------------------
# analog beams

@dataclass
class AnalogBeamformer:
    """Block-diagonal analog precoder ``W`` (``L_B*m_t*n_t x L_B``)."""

    W: np.ndarray
    powers: np.ndarray

    @classmethod
    def from_beams(cls, beams: Sequence[np.ndarray], powers=None) -> "AnalogBeamformer":
        W = block_diag(*[np.asarray(b, dtype=complex).reshape(-1, 1) for b in beams])
        p = np.ones(len(beams)) if powers is None else np.asarray(powers, dtype=float)
        return cls(W, p)


def design_transmit_beam(aod_at_bs: AnglePair, subarray: ArrayGeometry, wavelength: float,
                         power: float = 1.0):
    """Phase-only subarray beam toward the serving sub-RIS.

    Returns ``(w, power)``: ``w`` has entries of magnitude ``1/sqrt(m_t n_t)``
    and the subarray power is carried separately.
    """
    if power < 0:
        raise DomainError("power must be nonnegative")
    return steering_vector(subarray, aod_at_bs, wavelength), power


def design_receive_beam(aoa_at_user: AnglePair, user: ArrayGeometry, wavelength: float) -> np.ndarray:
    """Unit-norm receive combiner matched to the estimated AOA."""
    return steering_vector(user, aoa_at_user, wavelength)


# ---------------------------------------------------------------------------
# passive (RIS) beamforming

def diag_bilinear(y: np.ndarray, x: np.ndarray, z: np.ndarray) -> complex:
    """``y^H diag(x) z`` evaluated as ``x^T (y* . z)``."""
    return complex(np.asarray(x) @ (np.conj(y) * np.asarray(z)))


def ris_phase_objective(q: np.ndarray, H_block: np.ndarray, v: np.ndarray, a_sa: np.ndarray) -> float:
    """``|q^T [(H^T v*) . a_sa]|^2``."""
    c = (H_block.T @ np.conj(v)) * a_sa
    return float(abs(q @ c) ** 2)


def closed_form_ris_phase(H_block: np.ndarray, v: np.ndarray, a_sa: np.ndarray):
    """Unit-modulus sub-RIS phases maximizing the received amplitude.

    Returns ``(q, degenerate)``. ``q`` is the conjugate phase of
    ``(H^T v*) . a_sa``; entries whose magnitude vanishes get phase zero and
    set ``degenerate``.
    """
    H_block = np.asarray(H_block)
    if H_block.shape[0] != len(v) or H_block.shape[1] != len(a_sa):
        raise ValueError(f"non-conformable inputs: H {H_block.shape}, v {len(v)}, a_sa {len(a_sa)}")
    c = np.conj((H_block.T @ np.conj(v)) * a_sa)
    mag = np.abs(c)
    zero = mag <= 1e-300
    q = np.where(zero, 1.0 + 0j, c / np.where(zero, 1.0, mag))
    return q, bool(np.any(zero))


# ---------------------------------------------------------------------------
# codebooks

@dataclass
class Codebook:
    """Beams on a uniform azimuth x elevation lattice.

    ``beams[i]`` points along ``angles[i]`` (azimuth, elevation). RIS
    codebooks hold unit-modulus phase vectors instead of unit-norm beams.
    """

    beams: np.ndarray
    angles: np.ndarray
    resolution: float
    center: AnglePair
    span: float

    def __len__(self):
        return len(self.beams)

    def angle(self, i: int) -> AnglePair:
        return AnglePair(float(self.angles[i, 0]), float(self.angles[i, 1]))


def lattice(center: AnglePair, resolution: float, span: float) -> np.ndarray:
    """``(n, 2)`` lattice of (azimuth, elevation) covering ``center +- span/2``.

    The center is always lattice point ``(0, 0)``; points with elevation
    outside ``[-pi/2, pi/2]`` are dropped and azimuths are wrapped.
    """
    if not resolution > 0:
        raise DomainError("resolution must be positive")
    if span < 0:
        raise DomainError("span must be nonnegative")
    n = int(math.ceil(span / (2 * resolution) - 1e-9)) if span > 0 else 0
    offsets = np.arange(-n, n + 1) * resolution
    daz, del_ = np.meshgrid(offsets, offsets, indexing="ij")
    # center first, then outward rings, so argmax ties favour the location-derived beam
    ring = np.maximum(np.abs(daz), np.abs(del_)).ravel()
    order = np.argsort(ring, kind="stable")
    pts = np.stack([center.azimuth + daz.ravel(), center.elevation + del_.ravel()], axis=1)[order]
    keep = np.abs(pts[:, 1]) <= math.pi / 2 + 1e-12
    pts = pts[keep]
    pts[:, 1] = np.clip(pts[:, 1], -math.pi / 2, math.pi / 2)
    pts[:, 0] = [wrap_azimuth(a) for a in pts[:, 0]]
    return pts


def generate_codebook(geometry: ArrayGeometry, wavelength: float, resolution: float,
                      center: AnglePair, span: float) -> Codebook:
    """Steering-vector codebook on a lattice around ``center``."""
    pts = lattice(center, resolution, span)
    beams = steering_matrix(geometry, pts[:, 0], pts[:, 1], wavelength)
    return Codebook(beams, pts, resolution, center, span)


def ris_codebook(geometry: ArrayGeometry, wavelength: float, resolution: float,
                 center: AnglePair, span: float, a_sa: np.ndarray) -> Codebook:
    """Sub-RIS phase codebook: each entry reflects the incident ``a_sa`` toward a lattice AOD."""
    cb = generate_codebook(geometry, wavelength, resolution, center, span)
    beams = np.exp(1j * (np.angle(cb.beams) - np.angle(a_sa)[None, :]))
    return Codebook(beams, cb.angles, resolution, center, span)


def restrict(codebook: Codebook, center: AnglePair, half_angle: float) -> np.ndarray:
    """Indices of beams pointing within ``half_angle`` (great-circle) of ``center``."""
    az, el = codebook.angles[:, 0], codebook.angles[:, 1]
    dirs = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
    cosang = np.clip(dirs @ center.direction(), -1.0, 1.0)
    return np.flatnonzero(np.arccos(cosang) <= half_angle + 1e-12)


def error_cone(error_radius: float, distance: float) -> float:
    """Half-angle subtended by the position-error sphere at ``distance``."""
    if distance <= 0:
        raise DomainError("distance must be positive")
    return math.asin(min(1.0, max(error_radius, 0.0) / distance))


def restricted_size(resolution: float, error_radius: float, distance: float,
                    center: AnglePair = AnglePair(0.0, math.pi / 4)) -> int:
    """Number of lattice beams inside the error cone around ``center``."""
    cone = error_cone(error_radius, distance)
    pts = lattice(center, resolution, 2 * cone + 2 * resolution)
    dirs = np.stack([np.cos(pts[:, 1]) * np.cos(pts[:, 0]),
                     np.cos(pts[:, 1]) * np.sin(pts[:, 0]), np.sin(pts[:, 1])], axis=1)
    ang = np.arccos(np.clip(dirs @ center.direction(), -1.0, 1.0))
    return int(np.count_nonzero(ang <= cone + 1e-12))


# ---------------------------------------------------------------------------
# precise beamforming

@dataclass
class PbaResult:
    v: np.ndarray
    q: np.ndarray
    iterations: int
    trace: List[float]
    v_angles: Optional[AnglePair] = None
    q_angles: Optional[AnglePair] = None
    fallback: bool = False
    evaluations: int = 0
    subcodebook_sizes: tuple = field(default=(0, 0))


def pba_objective(v: np.ndarray, H_block: np.ndarray, q: np.ndarray, incident: np.ndarray) -> float:
    """Received power ``|v^H H diag(q) g|^2`` through one sub-RIS."""
    return float(abs(np.conj(v) @ (H_block @ (q * incident))) ** 2)


def pba(v_init: np.ndarray, q_init: np.ndarray, H_block: np.ndarray, incident: np.ndarray,
        v_codebook: Codebook, q_codebook: Codebook, error_radius: float, distance: float,
        v_center: AnglePair, q_center: AnglePair, max_iters: int = 20,
        rel_tol: float = 1e-6) -> PbaResult:
    """Refine a receive beam and a sub-RIS phase vector by restricted codebook search.

    Both codebooks are cut down to the beams pointing inside the cone that
    the error sphere of radius ``error_radius`` subtends at ``distance``
    around the location-derived angles. The search then alternates between
    the best combiner for the current RIS phases and the best RIS phases for
    the current combiner, measuring ``|v^H H diag(q) g|^2`` on the true
    channel, until the relative gain drops below ``rel_tol`` or
    ``max_iters`` rounds have run. A beam is replaced only on strict
    improvement, so the trace is nondecreasing and zero error radius returns
    the inputs unchanged.
    """
    cone = error_cone(error_radius, distance)
    vi = restrict(v_codebook, v_center, cone)
    qi = restrict(q_codebook, q_center, cone)
    v, q = np.asarray(v_init, dtype=complex), np.asarray(q_init, dtype=complex)
    best = pba_objective(v, H_block, q, incident)
    trace = [best]
    if len(vi) == 0 or len(qi) == 0:
        return PbaResult(v, q, 0, trace, v_center, q_center, fallback=True)

    V = v_codebook.beams[vi]
    Wq = q_codebook.beams[qi]
    v_ang, q_ang = v_center, q_center
    evals = 0
    it = 0
    for it in range(1, max_iters + 1):
        prev = best
        x = H_block @ (q * incident)
        scores = np.abs(V.conj() @ x) ** 2
        evals += len(scores)
        j = int(np.argmax(scores))
        if scores[j] > best * (1 + 1e-12):
            v, best, v_ang = V[j], float(scores[j]), v_codebook.angle(vi[j])
        y = (np.conj(v) @ H_block) * incident
        scores = np.abs(Wq @ y) ** 2
        evals += len(scores)
        j = int(np.argmax(scores))
        if scores[j] > best * (1 + 1e-12):
            q, best, q_ang = Wq[j], float(scores[j]), q_codebook.angle(qi[j])
        trace.append(best)
        if best - prev <= rel_tol * prev:
            break
    return PbaResult(v, q, it, trace, v_ang, q_ang, False, evals, (len(vi), len(qi)))


# ---------------------------------------------------------------------------
# search complexity

def _log3(N: int) -> float:
    k, n = 0, N
    while n > 1 and n % 3 == 0:
        n //= 3
        k += 1
    return float(k) if n == 1 else math.log(N, 3)


def search_complexity(scheme: str, N: int, subcodebook_sizes: Optional[tuple] = None):
    """Beam-search operation count of a training scheme for ``N x N`` sub-RISs.

    ``scheme`` is ``"exhaustive"``, ``"td"``, ``"psd"`` or ``"pba"``; the
    PBA count is the product of the restricted sub-codebook sizes and does
    not depend on ``N``.
    """
    if N < 1:
        raise DomainError("N must be >= 1")
    scheme = scheme.lower()
    if scheme == "exhaustive":
        return N ** 2 + N ** 4
    if scheme in ("td", "psd"):
        value = (18 * N + 12 * _log3(N) - 3) if scheme == "td" else (6 * N + 4 * _log3(N) - 1)
        return int(round(value)) if abs(value - round(value)) < 1e-9 else value
    if scheme == "pba":
        if subcodebook_sizes is None:
            raise ValueError("PBA complexity needs the restricted sub-codebook sizes")
        return int(np.prod(subcodebook_sizes))
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# digital precoders

@dataclass
class DigitalPrecoder:
    F: np.ndarray
    kind: str


def _normalize_columns(F: np.ndarray, W: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W @ F, axis=0)
    if np.any(norms == 0):
        raise PrecoderError("precoder column with zero power")
    return F / norms


def _solve(A: np.ndarray, B: np.ndarray, max_cond: float) -> np.ndarray:
    if np.linalg.cond(A) > max_cond:
        raise PrecoderError("Gramian is singular to working precision")
    return np.linalg.solve(A, B)


def mmse_precoder(T: np.ndarray, W: np.ndarray, noise_power: float, total_power: float,
                  max_cond: float = 1e12) -> DigitalPrecoder:
    """Regularized (MMSE) precoder ``(T^H T + K sigma^2/P W^H W)^-1 T^H``.

    ``T`` is the ``K x L_B`` effective channel seen through the analog
    beams. Columns are scaled to ``||W f_k|| = 1``.
    """
    T = np.atleast_2d(T)
    K = T.shape[0]
    A = T.conj().T @ T + (K * noise_power / total_power) * (W.conj().T @ W)
    F = _solve(A, T.conj().T, max_cond)
    return DigitalPrecoder(_normalize_columns(F, W), "mmse")


def matched_filter_precoder(T: np.ndarray, W: np.ndarray) -> DigitalPrecoder:
    """Conjugate precoder ``T^H``; leaves interference to the channel's own orthogonality."""
    T = np.atleast_2d(T)
    return DigitalPrecoder(_normalize_columns(T.conj().T, W), "mf")


def zf_precoder(T: np.ndarray, W: np.ndarray, max_cond: float = 1e12) -> DigitalPrecoder:
    """Zero-forcing precoder ``T^H (T T^H)^-1`` with per-column power normalization."""
    T = np.atleast_2d(T)
    F_hat = T.conj().T @ _solve(T @ T.conj().T, np.eye(T.shape[0]), max_cond)
    return DigitalPrecoder(_normalize_columns(F_hat, W), "zf")
