"""Received-signal bookkeeping, achievable rates and the Monte Carlo harness.

One trial draws every channel and every ranging error from independent
streams of a per-trial :class:`numpy.random.SeedSequence`, so all schemes
evaluated with the same seed see identical propagation and positioning
conditions. Sweeps reuse the same trial seeds at every transmit power.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import beamforming as bf
from .channel import (ChannelMatrix, NlosProfile, PathLossModel, cascade_pathloss_farfield,
                      cascade_pathloss_nearfield, los_gain_power, steering_vector,
                      synthesize_direct_Q, synthesize_G, synthesize_H)
from .config import ScenarioConfig
from .geometry import (AnglePair, ArrayGeometry, FieldRegion, Position3D, angles_bs_to_subris,
                       orthogonality_residual,
                       classify_field, field_boundary, optimal_bs_subarray_spacing,
                       optimal_subris_spacing)
from .localization import (EstimationError, PositionEstimate, UwbAnchorSet,
                           estimate_user_channel_params, multilaterate, range_measurements)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# signal and rate

def received_signal_terms(v_k, H_k, O, G, W, F, k: int, power: float = 1.0, Q_k=None):
    """Desired and interference power at user ``k``.

    The interference uses user ``k``'s own combiner and channel against the
    other users' precoding columns. ``power`` is the total transmit power,
    split equally over the ``K`` streams.
    """
    H = H_k.entries if isinstance(H_k, ChannelMatrix) else np.asarray(H_k)
    Gm = G.entries if isinstance(G, ChannelMatrix) else np.asarray(G)
    O = np.asarray(O)
    Oq = O if O.ndim == 1 else np.diag(O)
    row = (np.conj(v_k) @ H) * Oq @ Gm
    if Q_k is not None:
        row = row + np.conj(v_k) @ (Q_k.entries if isinstance(Q_k, ChannelMatrix) else Q_k)
    t = row @ W @ F
    K = F.shape[1]
    gains = np.abs(t) ** 2 * power / K
    return float(gains[k]), float(gains.sum() - gains[k])


def user_rate(signal: float, interference: float, noise: float) -> float:
    """``log2(1 + signal / (interference + noise))`` in bits/s/Hz."""
    if signal < 0 or interference < 0 or noise < 0:
        raise ValueError("powers must be nonnegative")
    if signal == 0:
        return 0.0
    return math.log2(1.0 + signal / (interference + noise))


def sampled_noise_power(v: np.ndarray, noise_power: float, samples: int,
                        rng: np.random.Generator) -> float:
    """Empirical ``E|v^H n|^2`` for ``n ~ CN(0, noise_power I)``; validates the analytic noise term."""
    n = (rng.normal(size=(samples, len(v))) + 1j * rng.normal(size=(samples, len(v))))
    n *= math.sqrt(noise_power / 2)
    return float(np.mean(np.abs(n @ np.conj(v)) ** 2))


def rates_from_effective(T: np.ndarray, F: np.ndarray, power: float, noise: float):
    """Per-user signal, interference and rate for an effective ``K x L_B`` channel."""
    K = F.shape[1]
    P = np.abs(T @ F) ** 2 * power / K
    signal = np.diag(P).copy()
    interference = P.sum(axis=1) - signal
    sinr = signal / (interference + noise)
    return signal, interference, sinr, np.log2(1.0 + sinr)


# ---------------------------------------------------------------------------
# scenario construction

@dataclass
class Scenario:
    config: ScenarioConfig
    model: PathLossModel
    bs: ArrayGeometry
    ris: ArrayGeometry
    users: List[ArrayGeometry]
    anchors: UwbAnchorSet
    nlos_ris: NlosProfile
    nlos_direct: NlosProfile
    boundary: float

    @property
    def wavelength(self) -> float:
        return self.model.wavelength


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Resolve defaults (half-wavelength elements, optimal subarray pitches) into geometries."""
    if config.absorption_table:
        model = PathLossModel.from_table(config.frequency, config.absorption_table)
    else:
        model = PathLossModel(config.frequency, config.absorption)
    lam = model.wavelength
    spacing = config.element_spacing or lam / 2
    bs_c = Position3D(*config.bs_center)
    ris_c = Position3D(*config.ris_center)
    d1 = bs_c.distance_to(ris_c)
    (Mt, Nt), (Ms, Ns) = config.subgrid("bs"), config.subgrid("ris")
    chi = config.bs_subarray_spacing or optimal_bs_subarray_spacing(d1, lam, Mt, config.spacing_q)
    alpha = config.subris_spacing or optimal_subris_spacing(d1, lam, Ns, config.spacing_q)
    bs = ArrayGeometry(*config.bs_array, spacing, Mt, Nt, max(chi, spacing), bs_c)
    ris = ArrayGeometry(*config.ris_array, spacing, Ms, Ns, max(alpha, spacing), ris_c)
    users = [ArrayGeometry(*config.user_array, spacing, center=Position3D(*u)) for u in config.users]
    anchors = UwbAnchorSet.at_ris_corners(ris_c, config.uwb_panel_width,
                                          ranging_error=config.ranging_error,
                                          error_model=config.ranging_error_model)
    spread = math.radians(config.nlos_angular_spread_deg)
    nlos_ris = NlosProfile(config.nlos_ris_count, config.nlos_attenuation_db, spread)
    nlos_direct = NlosProfile(config.nlos_direct_count, config.nlos_attenuation_db, spread)
    boundary = field_boundary(Ns, config.ris_array[0], config.ris_array[1], lam)
    return Scenario(config, model, bs, ris, users, anchors, nlos_ris, nlos_direct, boundary)


def cascade_power(sc: Scenario, d1: float, d2: float) -> float:
    """Cascaded BS-RIS-user power gain for the configured path-loss rule."""
    rule = sc.config.cascade_pathloss
    if rule == "per_hop":
        return los_gain_power(sc.model, d1) * los_gain_power(sc.model, d2)
    if rule == "auto":
        near = (classify_field(d1, sc.boundary) is FieldRegion.NEAR
                and classify_field(d2, sc.boundary) is FieldRegion.NEAR)
        rule = "near" if near else "far"
    if rule == "near":
        return cascade_pathloss_nearfield(sc.model, d1, d2)
    return cascade_pathloss_farfield(sc.model, d1, d2)


def _cascade_scale(sc: Scenario, d1: float, d2: float) -> float:
    # rescales the RIS-user hop so |beta1 beta2|^2 equals the cascade rule
    return math.sqrt(cascade_power(sc, d1, d2)
                     / (los_gain_power(sc.model, d1) * los_gain_power(sc.model, d2)))


# ---------------------------------------------------------------------------
# trials

@dataclass
class TrialResult:
    power_dbm: float
    signal: np.ndarray
    interference: np.ndarray
    sinr: np.ndarray
    rates: np.ndarray
    sum_rate: float
    search_counts: Dict[str, int] = field(default_factory=dict)
    degraded: bool = False
    variant: str = ""


def trial_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream for trial ``index`` of a run seeded with ``master_seed``."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def _streams(seed, n: int = 6) -> List[np.random.SeedSequence]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    # fresh children each call, independent of how often ``ss`` was spawned before
    return [np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (i,)) for i in range(n)]


@dataclass
class _TrialState:
    T_true: np.ndarray
    T_est: np.ndarray
    W: np.ndarray
    perfect_csi: bool
    search_counts: Dict[str, int]
    degraded: bool


def _phase_only(vec: np.ndarray) -> np.ndarray:
    return np.exp(1j * np.angle(vec)) / math.sqrt(vec.size)


def _localize(sc: Scenario, user: Position3D, rng) -> (PositionEstimate, bool):
    meas = range_measurements(sc.anchors, user, rng)
    try:
        est = multilaterate(sc.anchors, meas, half_space=1)
        return est, est.degenerate
    except EstimationError:
        # fall back to the range-weighted point on the RIS normal
        origin, basis = sc.anchors.plane_frame()
        guess = origin + basis[:, 2] * float(np.mean(meas))
        return PositionEstimate(Position3D.from_array(guess), math.inf, True), True


@dataclass
class _Draw:
    """Everything random in one trial; shared by all compared schemes."""
    G: ChannelMatrix
    H: List[ChannelMatrix]
    Q: List[ChannelMatrix]
    estimates: list
    links: list
    ris_centers: List[Position3D]
    random_phase_seed: np.random.SeedSequence


def _draw(sc: Scenario, seed) -> _Draw:
    K = sc.config.K
    ss_g, ss_h, ss_q, ss_loc, ss_rand, _ = _streams(seed)
    rng_g, rng_h, rng_q, rng_loc = map(np.random.default_rng, (ss_g, ss_h, ss_q, ss_loc))
    G = synthesize_G(sc.bs, sc.ris, sc.model, sc.nlos_ris, rng_g)
    H = [synthesize_H(u, sc.ris, sc.model, sc.nlos_ris, rng_h) for u in sc.users]
    Q = [synthesize_direct_Q(sc.bs, u, sc.model, sc.nlos_direct, rng_q) for u in sc.users]
    estimates = [_localize(sc, u.center, rng_loc) for u in sc.users]
    bs_centers = [Position3D.from_array(c) for c in sc.bs.subgrid_centers()]
    ris_centers = [Position3D.from_array(c) for c in sc.ris.subgrid_centers()]
    links = [angles_bs_to_subris(bs_centers[k], ris_centers[k]) for k in range(K)]
    for k in range(K):
        d2 = sc.users[k].center.distance_to(ris_centers[k])
        H[k].entries *= _cascade_scale(sc, links[k][2], d2)
    return _Draw(G, H, Q, estimates, links, ris_centers, ss_rand)


def _trial_state(sc: Scenario, draw: _Draw, cfg: Optional[ScenarioConfig] = None) -> _TrialState:
    cfg = cfg or sc.config
    lam = sc.wavelength
    K = cfg.K
    G, H, Q, estimates, links = draw.G, draw.H, draw.Q, draw.estimates, draw.links
    d1 = [lk[2] for lk in links]
    counts: Dict[str, int] = {}
    degraded = any(flag for _, flag in estimates)

    if not cfg.enable_ris:
        # direct link only, beams from the dominant singular pair of the serving block
        beams_t, beams_r = [], []
        for k in range(K):
            u, _, vh = np.linalg.svd(Q[k].block(0, k))
            beams_r.append(_phase_only(u[:, 0]))
            beams_t.append(_phase_only(vh[0].conj()))
        W = bf.AnalogBeamformer.from_beams(beams_t).W
        T = np.stack([np.conj(beams_r[k]) @ Q[k].entries @ W for k in range(K)])
        return _TrialState(T, T, W, True, counts, False)

    W = bf.AnalogBeamformer.from_beams(
        [bf.design_transmit_beam(links[k][1], sc.bs, lam)[0] for k in range(K)]).W
    a_sa = [steering_vector(sc.ris, links[k][0], lam) for k in range(K)]
    Qd = Q if cfg.enable_direct_link else None

    if cfg.random_phase_baseline:
        rng = np.random.default_rng(draw.random_phase_seed)
        ms_ns, mr_nr = sc.ris.n_elements, sc.users[0].n_elements
        q = [np.exp(1j * rng.uniform(0, 2 * math.pi, ms_ns)) for _ in range(K)]
        v = [np.exp(1j * rng.uniform(0, 2 * math.pi, mr_nr)) / math.sqrt(mr_nr)
             for _ in range(K)]
        T = _effective(v, H, np.concatenate(q), G.entries, W, Qd)
        return _TrialState(T, T, W, True, counts, degraded)

    H_est, v, q = [], [], []
    for k in range(K):
        est, _ = estimates[k]
        r_e = cfg.error_radius if cfg.error_radius is not None else est.error_radius
        blocks, params = [], []
        for j in range(K):
            p = estimate_user_channel_params(est, draw.ris_centers[j], sc.model)
            params.append(p)
            blocks.append(_los_block(sc, sc.users[k], p.aoa_at_user, p.aod_at_ris, p.distance,
                                     d1[j]))
        v_k = bf.design_receive_beam(params[k].aoa_at_user, sc.users[k], lam)
        q_k, _ = bf.closed_form_ris_phase(blocks[k], v_k, a_sa[k])
        if cfg.use_pba:
            res = _run_pba(sc, cfg, k, v_k, q_k, H[k], G, W, a_sa[k], params[k], r_e)
            v_k, q_k = res.v, res.q
            counts[f"pba_user{k}"] = res.evaluations
            blocks[k] = _los_block(sc, sc.users[k], res.v_angles, res.q_angles,
                                   params[k].distance, d1[k])
        H_est.append(np.concatenate(blocks, axis=1))
        v.append(v_k)
        q.append(q_k)
    O = np.concatenate(q)
    T_true = _effective(v, H, O, G.entries, W, Qd)
    T_est = np.stack([(np.conj(v[k]) @ H_est[k]) * O @ G.entries @ W for k in range(K)])
    return _TrialState(T_true, T_est, W, False, counts, degraded)


def _los_block(sc: Scenario, user: ArrayGeometry, aoa_user: AnglePair, aod_ris: AnglePair,
               d2: float, d1: float) -> np.ndarray:
    lam = sc.wavelength
    beta = (math.sqrt(los_gain_power(sc.model, d2)) * _cascade_scale(sc, d1, d2)
            * np.exp(-2j * math.pi * d2 / lam))
    scale = math.sqrt(user.n_elements * sc.ris.n_elements)
    return scale * beta * np.outer(steering_vector(user, aoa_user, lam),
                                   steering_vector(sc.ris, aod_ris, lam).conj())


def _effective(v, H, O, G, W, Q=None) -> np.ndarray:
    rows = []
    for k, vk in enumerate(v):
        row = (np.conj(vk) @ H[k].entries) * O @ G
        if Q is not None:
            row = row + np.conj(vk) @ Q[k].entries
        rows.append(row @ W)
    return np.stack(rows)


def _run_pba(sc: Scenario, cfg: ScenarioConfig, k, v_k, q_k, H_k, G, W, a_sa_k, params, r_e) -> bf.PbaResult:
    lam = sc.wavelength
    res = math.radians(cfg.codebook_resolution_deg)
    cone = bf.error_cone(r_e, params.distance)
    span = 2 * cone + 2 * res
    incident = G.block(k, k) @ W[k * sc.bs.n_elements:(k + 1) * sc.bs.n_elements, k]
    v_cb = bf.generate_codebook(sc.users[k], lam, res, params.aoa_at_user, span)
    q_cb = bf.ris_codebook(sc.ris, lam, res, params.aod_at_ris, span, a_sa_k)
    return bf.pba(v_k, q_k, H_k.block(0, k), incident, v_cb, q_cb, r_e, params.distance,
                  params.aoa_at_user, params.aod_at_ris, cfg.pba_max_iters, cfg.pba_tolerance)


def _precode(cfg: ScenarioConfig, state: _TrialState, power: float):
    # "measured": effective channel sounded after the analog and RIS beams are set
    T = state.T_true if cfg.effective_csi == "measured" else state.T_est
    if cfg.precoder == "zf":
        return bf.zf_precoder(T, state.W).F
    return bf.mmse_precoder(T, state.W, cfg.noise_power, power).F


def _evaluate(cfg: ScenarioConfig, state: _TrialState, power_dbm: float) -> TrialResult:
    power = 10 ** ((power_dbm - 30) / 10)
    F = _precode(cfg, state, power)
    signal, interference, sinr, rates = rates_from_effective(state.T_true, F, power,
                                                             cfg.noise_power)
    return TrialResult(power_dbm, signal, interference, sinr, rates, float(rates.sum()),
                       dict(state.search_counts), state.degraded, cfg.variant)


def run_trial_sweep(config: ScenarioConfig, seed, scenario: Optional[Scenario] = None,
                    powers: Optional[Sequence[float]] = None) -> List[TrialResult]:
    """One trial evaluated at every power of the sweep (channels drawn once)."""
    sc = scenario or build_scenario(config)
    state = _trial_state(sc, _draw(sc, seed), config)
    return [_evaluate(config, state, p) for p in (powers or config.powers_dbm)]


def effective_channel(config: ScenarioConfig, seed, scenario: Optional[Scenario] = None):
    """True ``K x L_B`` effective channel and analog precoder ``W`` of one trial."""
    sc = scenario or build_scenario(config)
    state = _trial_state(sc, _draw(sc, seed), config)
    return state.T_true, state.W


def run_paired_trial(config: ScenarioConfig, seed, variants: Sequence[str],
                     powers: Optional[Sequence[float]] = None,
                     scenario: Optional[Scenario] = None) -> Dict[str, List[TrialResult]]:
    """Evaluate several schemes on one shared channel and positioning draw.

    Equivalent to calling :func:`run_trial_sweep` per variant with the same
    seed, but synthesizes the channels only once.
    """
    sc = scenario or build_scenario(config)
    draw = _draw(sc, seed)
    out = {}
    for v in variants:
        cfg = config.with_variant(v)
        state = _trial_state(sc, draw, cfg)
        out[v] = [_evaluate(cfg, state, p) for p in (powers or config.powers_dbm)]
    return out


def run_trial(config: ScenarioConfig, seed, power_dbm: Optional[float] = None,
              scenario: Optional[Scenario] = None) -> TrialResult:
    """One full pipeline pass at a single transmit power (default: first sweep point)."""
    p = config.powers_dbm[0] if power_dbm is None else power_dbm
    return run_trial_sweep(config, seed, scenario, [p])[0]


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepResult:
    powers_dbm: np.ndarray
    sum_rates: np.ndarray          # (trials, powers)
    degraded: int = 0

    @property
    def mean(self) -> np.ndarray:
        return self.sum_rates.mean(axis=0)

    @property
    def ci95(self) -> np.ndarray:
        n = self.sum_rates.shape[0]
        if n < 2:
            return np.zeros(self.sum_rates.shape[1])
        return 1.96 * self.sum_rates.std(axis=0, ddof=1) / math.sqrt(n)

    def rows(self):
        return list(zip(self.powers_dbm.tolist(), self.mean.tolist(), self.ci95.tolist()))


def _run_chunk(args):
    config, indices = args
    sc = build_scenario(config)
    out = []
    for i in indices:
        results = run_trial_sweep(config, trial_seed(config.seed, i), sc)
        out.append(([r.sum_rate for r in results], results[0].degraded))
    return out


def run_sweep(config: ScenarioConfig, trials: Optional[int] = None,
              workers: int = 1) -> SweepResult:
    """Mean sum rate and 95% confidence half-width at each sweep power.

    Trial ``i`` always uses :func:`trial_seed` ``(config.seed, i)``, so the
    result does not depend on ``workers``.
    """
    n = trials or config.trials
    idx = list(range(n))
    if workers > 1 and n > 1:
        chunks = [idx[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, [(config, c) for c in chunks]))
        rows: List = [None] * n
        for c, part in zip(chunks, parts):
            for i, r in zip(c, part):
                rows[i] = r
    else:
        rows = _run_chunk((config, idx))
    rates = np.array([r[0] for r in rows], dtype=float).reshape(n, len(config.powers_dbm))
    degraded = sum(1 for r in rows if r[1])
    if degraded:
        log.info("%d of %d trials had degraded localization", degraded, n)
    return SweepResult(np.asarray(config.powers_dbm, dtype=float), rates, degraded)


def _run_paired_chunk(args):
    config, variants, indices = args
    sc = build_scenario(config)
    out = []
    for i in indices:
        res = run_paired_trial(config, trial_seed(config.seed, i), variants, scenario=sc)
        out.append({v: ([r.sum_rate for r in rs], rs[0].degraded) for v, rs in res.items()})
    return out


def run_variant_sweeps(config: ScenarioConfig, variants: Optional[Sequence[str]] = None,
                       trials: Optional[int] = None, workers: int = 1) -> Dict[str, SweepResult]:
    """:func:`run_sweep` for several schemes on paired draws.

    Each variant's result equals ``run_sweep(config.with_variant(v))``; the
    channels of each trial are synthesized once and shared.
    """
    variants = tuple(variants or config.variants)
    n = trials or config.trials
    idx = list(range(n))
    if workers > 1 and n > 1:
        chunks = [idx[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_paired_chunk, [(config, variants, c) for c in chunks]))
        rows: List = [None] * n
        for c, part in zip(chunks, parts):
            for i, r in zip(c, part):
                rows[i] = r
    else:
        rows = _run_paired_chunk((config, variants, idx))
    powers = np.asarray(config.powers_dbm, dtype=float)
    out = {}
    for v in variants:
        rates = np.array([r[v][0] for r in rows], dtype=float).reshape(n, len(powers))
        out[v] = SweepResult(powers, rates, sum(1 for r in rows if r[v][1]))
    return out


# ---------------------------------------------------------------------------
# static geometry summary

def geometry_report(config: ScenarioConfig) -> Dict[str, object]:
    """Spacing rules, field boundary, per-user field region and orthogonality residual."""
    sc = build_scenario(config)
    lam = sc.wavelength
    (Mt, _), (Ms, Ns) = config.subgrid("bs"), config.subgrid("ris")
    d1 = Position3D(*config.bs_center).distance_to(Position3D(*config.ris_center))
    alpha_op = optimal_subris_spacing(d1, lam, Ns, config.spacing_q)
    chi_op = optimal_bs_subarray_spacing(d1, lam, Mt, config.spacing_q)
    alpha = sc.ris.subgrid_spacing or alpha_op
    ris_centers = [Position3D.from_array(c) for c in sc.ris.subgrid_centers()]
    users = []
    for k, u in enumerate(sc.users):
        d2 = u.center.distance_to(ris_centers[k])
        users.append({
            "user": k,
            "d2_m": d2,
            "region": classify_field(d2, sc.boundary).value,
            "cascade_near": cascade_pathloss_nearfield(sc.model, d1, d2),
            "cascade_far": cascade_pathloss_farfield(sc.model, d1, d2),
        })
    residual = orthogonality_residual(Ns, d1, config.frequency, alpha, n_subarrays=Mt,
                                      q=config.spacing_q)
    return {
        "wavelength_m": lam,
        "d1_m": d1,
        "q": config.spacing_q,
        "alpha_op_m": alpha_op,
        "chi_op_m": chi_op,
        "alpha_m": alpha,
        "field_boundary_m": sc.boundary,
        "orthogonality_residual": residual,
        "users": users,
    }
