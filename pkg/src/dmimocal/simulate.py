"""End-to-end trial simulation: oscillator drift -> scheduled over-the-air
measurements -> phase tracking -> compensation -> residual-phase statistics ->
achievable SE.

A trial fixes the placement, shadowing, and inter-AP channels, then runs one
warm-up frame (to complete a first bidirectional measurement of every edge and
initialize the trackers) followed by `frames_per_trial` frames over which the
residual phase factor Delta is accumulated per within-frame sequence index.
Kalman and direct estimation ride the same measurement stream, so estimator
comparisons are paired. A single-AP track (AP 1, conventional TDD, no inter-AP
calibration) can be accumulated from the same oscillator/channel draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .angles import unwrap_step, wrap
from .calibration import (MeasurementRecord, bidirectional_difference,
                          leading_singular_vectors, make_cal_signal,
                          simulate_directional_measurement, single_beam_signal)
from .config import SlotTiming, SystemConfig, compute_sigma_nu_sq
from .errors import InvalidConfigError
from .phase_noise import advance_phase, initial_trajectory
from .propagation import (LargeScale, Placement, draw_ap_channels,
                          draw_ue_channels, large_scale_fading,
                          lmmse_coefficients, place_nodes)
from .spectral import (DeltaAccumulator, RateInputs, ResidualPhaseStats,
                       downlink_power_allocation, perfect_delta_stats,
                       rates_conjugate, rates_zf, spectral_efficiency)
from .topology import (ApGraph, Schedule, build_graph, build_schedule,
                       distance2_coloring)
from .tracking import (FilterTrace, KalmanState, NoiseCovariances,
                       kalman_update, sigma_mu, sigma_xi, sigma_zeta,
                       sigma_zeta_xi, solve_phases)

ESTIMATORS = ("kalman", "direct")
BEAMFORMERS = ("conj", "zf")

RngFactory = Callable[[str], np.random.Generator]


@dataclass(frozen=True)
class TrialSetup:
    """Static per-trial state: world, graph, schedule, and calibration beams."""
    cfg: SystemConfig
    placement: Placement
    large_scale: LargeScale
    gamma: np.ndarray          # (K, L)
    eta: np.ndarray            # (K, L)
    graph: ApGraph
    schedule: Schedule
    g: np.ndarray              # physical inter-AP channels
    g_cal: np.ndarray          # channels as known to the calibration processing
    signals: dict              # (kind, slot_index, tx) -> CalSignal


def build_trial_setup(cfg: SystemConfig, rng_for: RngFactory) -> TrialSetup:
    placement = place_nodes(cfg, rng_for("placement"))
    large_scale = large_scale_fading(placement, rng_for("shadow"))
    g = draw_ap_channels(large_scale.beta_ap, cfg.N, rng_for("ap_channels"))

    if cfg.g_common_phase == "random":
        g_cal = g.copy()
        rng = rng_for("g_phase")
        for a in range(cfg.L):
            for b in range(a + 1, cfg.L):
                c = np.exp(1j * rng.uniform(-np.pi, np.pi))
                g_cal[a, b] = c * g[a, b]
                g_cal[b, a] = c * g[b, a]
    else:
        g_cal = g

    strengths = np.zeros((cfg.L, cfg.L))
    for a in range(cfg.L):
        for b in range(a + 1, cfg.L):
            strengths[a, b] = strengths[b, a] = np.linalg.norm(g_cal[a, b])
    graph = build_graph(strengths, cfg.L, cfg.m_min_effective)
    schedule = build_schedule(graph, distance2_coloring(graph), cfg)

    beams = {}
    for (a, b) in graph.edges:
        for tx, rx in ((a, b), (b, a)):
            _, u = leading_singular_vectors(g_cal[tx - 1, rx - 1])
            beams[(tx, rx)] = u

    signals = {}
    for plan in schedule.slots:
        for m in plan.masters:
            targets = graph.neighbors(m)
            norms = [np.linalg.norm(g_cal[m - 1, t - 1]) for t in targets]
            signals[("master", plan.index, m)] = make_cal_signal(
                m, targets, [beams[(m, t)] for t in targets], norms, cfg.rho_AP)
        for master, r in plan.responders.items():
            signals[("responder", plan.index, r)] = single_beam_signal(
                r, master, beams[(r, master)], cfg.rho_AP)

    _, gamma = lmmse_coefficients(large_scale.beta_ue, cfg.rho_UE, cfg.K)
    eta = downlink_power_allocation(large_scale.beta_ue)
    return TrialSetup(cfg, placement, large_scale, gamma, eta, graph, schedule,
                      g, g_cal, signals)


def broken_activity(schedule: Schedule) -> np.ndarray:
    """Downlink-data mask (L, F*tau_c) over one frame of the broken TDD flow.

    Normal slots: active on the downlink period. In a measurement slot the
    master's downlink shifts early (active [i1+1, i1+tau_d-1]: the i1 sample
    carries the calibration signal, and its trailing guard overlaps the
    others' downlink); a responder loses the i2 sample to its calibration
    transmission.
    """
    t = schedule.timing
    L = schedule.graph.n_nodes
    a = np.zeros((L, schedule.F * t.tau_c), dtype=np.int8)
    for slot in range(1, schedule.F + 1):
        base = (slot - 1) * t.tau_c
        a[:, base + t.dl_start - 1: base + t.dl_end] = 1
        plan = schedule.slot_plan_at(slot)
        if plan is None:
            continue
        for m in plan.masters:
            a[m - 1, base: base + t.tau_c] = 0
            a[m - 1, base + t.master_dl_start: base + t.master_dl_end] = 1
        for r in plan.responders.values():
            a[r - 1, base + t.i2 - 1] = 0
    return a


def conventional_activity(timing: SlotTiming, n_aps: int, n_slots: int = 1) -> np.ndarray:
    """Unbroken TDD mask: every AP active on the downlink period of every slot."""
    a = np.zeros((n_aps, n_slots * timing.tau_c), dtype=np.int8)
    for slot in range(n_slots):
        base = slot * timing.tau_c
        a[:, base + timing.dl_start - 1: base + timing.dl_end] = 1
    return a


class _EstimatorTrack:
    """Per-estimator compensation state plus its Delta accumulator."""

    def __init__(self, name: str, weights: np.ndarray, m_edges: int, L: int,
                 n_ues: int, retain_samples: bool, collect_trace: bool):
        self.name = name
        self.acc = DeltaAccumulator(weights, retain_samples)
        self.theta = np.zeros(L)
        self.theta_pending: Optional[np.ndarray] = None
        self.psi = np.zeros(n_ues)
        self.state: Optional[KalmanState] = None
        self.alpha_direct = np.zeros(m_edges)
        self.trace = FilterTrace() if collect_trace else None

    def roll_theta(self):
        if self.theta_pending is not None:
            self.theta = self.theta_pending
            self.theta_pending = None


@dataclass
class DeltaSimOutput:
    stats: dict                     # estimator -> ResidualPhaseStats (broken-TDD track)
    stats_single_ap: Optional[ResidualPhaseStats]
    traces: dict                    # estimator -> FilterTrace or None


def estimate_delta_stats(setup: TrialSetup, rng_for: RngFactory,
                         estimators=("kalman",), policy: Optional[str] = None,
                         n_frames: Optional[int] = None,
                         include_single_ap: bool = False,
                         retain_samples: bool = False,
                         collect_trace: bool = False) -> DeltaSimOutput:
    """Simulate warm-up plus `n_frames` frames and accumulate Delta statistics.

    Under the genie policy every track's theta is reset to the true per-AP
    phase sum at each measurement slot and psi is exact; under the pilot
    policy theta comes from the named estimator and psi from the per-slot
    downlink pilot.
    """
    cfg = setup.cfg
    policy = policy or cfg.compensation_policy
    n_frames = n_frames if n_frames is not None else cfg.frames_per_trial
    for est in estimators:
        if est not in ESTIMATORS:
            raise InvalidConfigError(f"unknown estimator {est!r}")

    schedule, graph, timing = setup.schedule, setup.graph, setup.schedule.timing
    L, K, F, tau_c = cfg.L, cfg.K, schedule.F, timing.tau_c
    frame_len = F * tau_c
    edges = graph.edges
    m_edges = graph.n_edges
    B = graph.incidence
    sigma2 = compute_sigma_nu_sq(cfg)

    activity = broken_activity(schedule)
    weights = activity[None, :, :] * np.sqrt(setup.eta * setup.gamma)[:, :, None]
    tracks = [_EstimatorTrack(est, weights, m_edges, L, K, retain_samples, collect_trace)
              for est in estimators]

    single_acc = None
    eta_single = None
    if include_single_ap:
        beta1 = setup.large_scale.beta_ue[:, :1]
        eta_single = downlink_power_allocation(beta1)
        a1 = conventional_activity(timing, 1, 1)
        w1 = a1[None, :, :] * np.sqrt(eta_single * setup.gamma[:, :1])[:, :, None]
        single_acc = DeltaAccumulator(w1, retain_samples)

    rng_phase = rng_for("phase")
    rng_meas = rng_for("meas_noise")
    rng_slot = rng_for("slot_channels")

    records = {e: MeasurementRecord(edges[e]) for e in range(m_edges)}
    prev_unwrapped = np.zeros(m_edges)
    last_meas_slot = None        # global slot of the previous measurement slot
    last_edge_slot = {}          # edge -> global slot of its latest measurement

    traj = initial_trajectory(L, sigma2, rng_phase)
    amp_ul = np.sqrt(cfg.rho_UE * cfg.K)
    c_coeff, _ = lmmse_coefficients(setup.large_scale.beta_ue, cfg.rho_UE, cfg.K)
    pilot_gain = np.sqrt(cfg.rho_AP * setup.eta / (cfg.N * setup.gamma))
    pilot_gain_single = (np.sqrt(cfg.rho_AP * eta_single[:, 0] /
                                 (cfg.N * setup.gamma[:, 0]))
                         if include_single_ap else None)

    psi_single = np.zeros(K)

    for frame in range(n_frames + 1):          # frame 0 is the warm-up
        warmup = frame == 0
        steps = frame_len - 1 if frame == 0 else frame_len
        traj = advance_phase(traj.tail(1) if frame > 0 else traj, steps, rng_phase)
        frame_nu = traj.nu[:, -frame_len:]
        frame_start = frame * frame_len + 1

        frame_delta = None if warmup else {
            t.name: np.zeros((K, L, frame_len), dtype=complex) for t in tracks}

        for slot in range(1, F + 1):
            base = (slot - 1) * tau_c
            global_slot = frame * F + slot
            for t in tracks:
                t.roll_theta()

            if not warmup:
                nu_pilots = frame_nu[:, base: base + K]          # (L, K)
                if policy == "pilot":
                    inner = _dl_pilot_inner(setup, c_coeff, frame_nu, base,
                                            timing, amp_ul, rng_slot)
                    z_dl = (rng_slot.standard_normal(K)
                            + 1j * rng_slot.standard_normal(K)) / np.sqrt(2.0)
                    nu_p = frame_nu[:, base + timing.dl_pilot - 1]
                    core = inner * np.exp(-1j * nu_p)[None, :]   # (K, L)
                    for t in tracks:
                        y = (pilot_gain * core * np.exp(1j * t.theta)[None, :]).sum(axis=1) + z_dl
                        t.psi = -np.angle(y)
                    if include_single_ap:
                        y1 = pilot_gain_single * core[:, 0] + z_dl
                        psi_single = -np.angle(y1)
                else:
                    # Genie: theta already carries the exact per-AP phase sums
                    # (common constant c = 0), so psi = 0. The uncalibrated
                    # single-AP track gets the noise-free pilot equivalent:
                    # the common phase of AP 1 at the pilot instant.
                    for t in tracks:
                        t.psi = np.zeros(K)
                    if include_single_ap:
                        psi_single = np.full(
                            K, frame_nu[0, base + timing.dl_pilot - 1]
                            + frame_nu[0, base + timing.mid_pilot - 1])

                ws = slice(base + timing.i1 - 1, base + timing.i2)
                nu_ws = frame_nu[:, ws]                          # (L, n_active)
                for t in tracks:
                    expo = (-nu_ws[None, :, :] - nu_pilots.T[:, :, None]
                            + t.theta[None, :, None] + t.psi[:, None, None])
                    frame_delta[t.name][:, :, ws] = np.exp(1j * expo)
                if include_single_ap:
                    expo1 = (-nu_ws[None, :1, :] - nu_pilots.T[:, :1, None]
                             + psi_single[:, None, None])
                    delta1 = np.zeros((K, 1, tau_c), dtype=complex)
                    delta1[:, :, timing.i1 - 1: timing.i2] = np.exp(1j * expo1)
                    single_acc.add_frame(delta1)

            plan = schedule.slot_plan_at(slot)
            if plan is None:
                continue

            i1_col = base + timing.i1 - 1
            i2_col = base + timing.i2 - 1
            i1_global = frame_start + i1_col
            i2_global = frame_start + i2_col
            for ev in plan.fwd_events:
                sig = setup.signals[("master", plan.index, ev.tx)]
                _measure(setup, records, ev, sig, frame_nu[ev.tx - 1, i1_col],
                         frame_nu[ev.rx - 1, i1_col], i1_global, rng_meas, cfg)
                last_edge_slot[ev.edge] = global_slot
            for ev in plan.bwd_events:
                sig = setup.signals[("responder", plan.index, ev.tx)]
                _measure(setup, records, ev, sig, frame_nu[ev.tx - 1, i2_col],
                         frame_nu[ev.rx - 1, i2_col], i2_global, rng_meas, cfg)
                last_edge_slot[ev.edge] = global_slot

            i_mid_global = frame_start + base + timing.mid_pilot - 1
            if warmup:
                last_meas_slot = global_slot
                if plan.index == schedule.n_m:
                    _initialize_tracks(tracks, records, prev_unwrapped, m_edges,
                                       i2_global, i_mid_global, sigma2, B)
                    init_stamps = {edges[e]: (records[e].i_minus, records[e].i_plus)
                                   for e in range(m_edges)}
                    _reset_theta(tracks, policy, frame_nu, base, timing, B,
                                 records=records, stamps=init_stamps,
                                 i_now=i2_global, i_mid=i_mid_global,
                                 sigma2=sigma2)
                continue

            measured = plan.measured_edges
            obs = np.empty(len(measured))
            for row, e in enumerate(measured):
                raw = bidirectional_difference(records[e])
                prev_unwrapped[e] = unwrap_step(prev_unwrapped[e], raw)
                obs[row] = prev_unwrapped[e]
            stamps = {e: (records[e].i_minus, records[e].i_plus) for e in range(m_edges)}
            d = global_slot - last_meas_slot
            last_meas_slot = global_slot

            meas_edge_keys = [edges[e] for e in measured]
            all_edge_stamps = {edges[e]: stamps[e] for e in range(m_edges)}
            cov = NoiseCovariances(
                sigma_zeta(edges, d, timing, sigma2),
                sigma_xi(meas_edge_keys, all_edge_stamps, i2_global,
                         i_mid_global, sigma2),
                sigma_zeta_xi(edges, meas_edge_keys, all_edge_stamps,
                              i2_global, i_mid_global, sigma2,
                              window=d * tau_c),
                sigma_mu([records[e].var_total for e in measured]),
            )
            A_n = np.zeros((len(measured), m_edges))
            for row, e in enumerate(measured):
                A_n[row, e] = 1.0

            for t in tracks:
                if t.name == "kalman":
                    innovation = wrap(obs - A_n @ t.state.alpha_hat)
                    t.state = kalman_update(t.state, obs, A_n, cov)
                    if t.trace is not None:
                        t.trace.record(t.state.n, i2_global, t.state.alpha_hat,
                                       t.state.P_post, measured, innovation)
                else:
                    t.alpha_direct[list(measured)] = obs
            _reset_theta(tracks, policy, frame_nu, base, timing, B,
                         records=records, stamps=all_edge_stamps,
                         i_now=i2_global, i_mid=i_mid_global, sigma2=sigma2)

        if not warmup:
            for t in tracks:
                t.acc.add_frame(frame_delta[t.name])

    stats = {t.name: t.acc.finalize() for t in tracks}
    return DeltaSimOutput(
        stats,
        single_acc.finalize() if include_single_ap else None,
        {t.name: t.trace for t in tracks},
    )


def _dl_pilot_inner(setup, c_coeff, frame_nu, base, timing, amp_ul, rng_slot):
    """Per-(UE, AP) inner products h^T q_hat* for this slot's downlink pilot."""
    cfg = setup.cfg
    K, L, N = cfg.K, cfg.L, cfg.N
    h = draw_ue_channels(setup.large_scale.beta_ue, N, rng_slot)
    z = (rng_slot.standard_normal((K, L, N))
         + 1j * rng_slot.standard_normal((K, L, N))) / np.sqrt(2.0)
    nu_at_pilot = frame_nu[:, base: base + K].T                  # (K, L)
    q_hat = c_coeff[:, :, None] * (amp_ul * np.exp(1j * nu_at_pilot)[:, :, None] * h + z)
    return np.einsum("kln,kln->kl", h, q_hat.conj())


def _measure(setup, records, ev, sig, nu_tx, nu_rx, t_global, rng, cfg):
    channel = setup.g[ev.tx - 1, ev.rx - 1]
    mf_channel = setup.g_cal[ev.tx - 1, ev.rx - 1]
    angle, var = simulate_directional_measurement(
        sig, ev.rx, channel, nu_tx, nu_rx, rng,
        variance_signal=cfg.mu_variance_signal, mf_channel=mf_channel)
    rec = records[ev.edge]
    if ev.tx < ev.rx:
        rec.alpha_fwd, rec.t_fwd, rec.var_fwd = angle, t_global, var
    else:
        rec.alpha_bwd, rec.t_bwd, rec.var_bwd = angle, t_global, var


def _initialize_tracks(tracks, records, prev_unwrapped, m_edges, i_now, i_mid,
                       sigma2, B):
    """First raw bidirectional value per edge; P0 = Sigma_mu + Sigma_xi (diagonal)."""
    alpha0 = np.empty(m_edges)
    p0 = np.empty(m_edges)
    for e in range(m_edges):
        rec = records[e]
        alpha0[e] = wrap(bidirectional_difference(rec))
        prev_unwrapped[e] = alpha0[e]
        xi = 2.0 * ((i_now - rec.i_plus) + abs(i_mid - rec.i_minus)) * sigma2
        p0[e] = rec.var_total + xi
    for t in tracks:
        if t.name == "kalman":
            t.state = KalmanState(alpha0.copy(), np.diag(p0), 0)
        else:
            t.alpha_direct = alpha0.copy()


def _direct_weight_matrix(records, stamps, i_now, i_mid, sigma2, m_edges):
    """Diagonal weighting for the direct estimate: measurement error plus the
    drift of each stored value relative to now (the xi formula grows with
    staleness, so no separate aging term is needed)."""
    p = np.empty(m_edges)
    for e in range(m_edges):
        rec = records[e]
        i_minus, i_plus = stamps[rec.edge]
        xi = 2.0 * ((i_now - i_plus) + abs(i_mid - i_minus)) * sigma2
        p[e] = rec.var_total + xi
    return np.diag(np.maximum(p, 1e-20))


def _reset_theta(tracks, policy, frame_nu, base, timing, B, records=None,
                 stamps=None, i_now=None, i_mid=None, sigma2=None):
    if policy == "genie":
        phi_true = (frame_nu[:, base + timing.i2 - 1]
                    + frame_nu[:, base + timing.mid_pilot - 1])
        for t in tracks:
            t.theta_pending = phi_true.copy()
        return
    for t in tracks:
        if t.name == "kalman":
            sol = solve_phases(t.state.alpha_hat, t.state.P_post, B)
        else:
            if records is not None:
                p_mat = _direct_weight_matrix(records, stamps, i_now, i_mid,
                                              sigma2, B.shape[0])
            else:
                p_mat = np.eye(B.shape[0])
            sol = solve_phases(t.alpha_direct, p_mat, B)
        t.theta_pending = sol.phi_hat


@dataclass(frozen=True)
class TrialResult:
    """Per-UE SE for every (estimator, beamformer) plus requested baselines."""
    se: dict                 # (estimator, beamformer) -> (K,)
    se_single_ap: dict       # beamformer -> (K,)
    se_no_phase_noise: dict  # beamformer -> (K,)
    stats: dict              # estimator -> ResidualPhaseStats


def run_trial(cfg: SystemConfig, rng_for: RngFactory, estimators=("kalman",),
              beamformers=BEAMFORMERS, include_single_ap: bool = False,
              include_no_phase_noise: bool = False,
              policy: Optional[str] = None,
              n_frames: Optional[int] = None) -> TrialResult:
    """One placement trial: build the world, simulate, and evaluate SE."""
    setup = build_trial_setup(cfg, rng_for)
    sim = estimate_delta_stats(setup, rng_for, estimators, policy, n_frames,
                               include_single_ap=include_single_ap)
    timing = setup.schedule.timing
    inputs = RateInputs(broken_activity(setup.schedule), setup.eta,
                        setup.gamma, setup.large_scale.beta_ue)

    se = {}
    for est in estimators:
        for bf in beamformers:
            se[(est, bf)] = _se_for(inputs, sim.stats[est], cfg, bf)

    se_single = {}
    if include_single_ap:
        beta1 = setup.large_scale.beta_ue[:, :1]
        inputs1 = RateInputs(conventional_activity(timing, 1, 1),
                             downlink_power_allocation(beta1),
                             setup.gamma[:, :1], beta1)
        for bf in beamformers:
            se_single[bf] = _se_for(inputs1, sim.stats_single_ap, cfg, bf)

    se_no_pn = {}
    if include_no_phase_noise:
        a_conv = conventional_activity(timing, cfg.L, 1)
        w = a_conv[None, :, :] * np.sqrt(setup.eta * setup.gamma)[:, :, None]
        stats = perfect_delta_stats(cfg.K, cfg.L, timing.tau_c, w)
        inputs_pn = RateInputs(a_conv, setup.eta, setup.gamma,
                               setup.large_scale.beta_ue)
        for bf in beamformers:
            se_no_pn[bf] = _se_for(inputs_pn, stats, cfg, bf)

    return TrialResult(se, se_single, se_no_pn, sim.stats)


def _se_for(inputs: RateInputs, stats: ResidualPhaseStats, cfg: SystemConfig,
            beamformer: str) -> np.ndarray:
    if beamformer == "conj":
        rates = rates_conjugate(inputs, stats, cfg.rho_AP, cfg.N)
    elif beamformer == "zf":
        rates = rates_zf(inputs, stats, cfg.rho_AP, cfg.N, cfg.K)
    else:
        raise InvalidConfigError(f"unknown beamformer {beamformer!r}")
    return spectral_efficiency(rates)
