"""Desk-scale simulator for over-the-air inter-AP phase calibration integrated
into the TDD flow of a distributed MIMO network."""

from .angles import latest_pilot_index, unwrap_step, wrap
from .config import (SlotTiming, SystemConfig, compute_sigma_nu_sq,
                     dbm_to_normalized, derive_rng, sigma_nu_sq_from_level)
from .phase_noise import PhaseTrajectory, advance_phase, initial_trajectory
from .propagation import (ChannelEstimate, ChannelRealization, LargeScale,
                          Placement, draw_channels, large_scale_fading,
                          lmmse_estimate, place_nodes, torus_distance)
from .topology import (ApGraph, Schedule, build_graph, build_schedule,
                       distance2_coloring, measurement_matrix,
                       schedule_to_text)
from .calibration import (CalSignal, MeasurementRecord,
                          bidirectional_difference,
                          fractional_power_allocation,
                          leading_singular_vectors,
                          simulate_directional_measurement)
from .tracking import (KalmanState, NoiseCovariances, PhaseSolution,
                       kalman_update, kalman_update_two_ap, sigma_mu,
                       sigma_xi, sigma_zeta, sigma_zeta_xi, solve_phases)
from .spectral import (CompensationState, RateInputs, ResidualPhaseStats,
                       downlink_power_allocation, rate_conjugate, rate_zf,
                       residual_phase, spectral_efficiency,
                       ue_phase_compensation)
from .simulate import (broken_activity, build_trial_setup,
                       conventional_activity, estimate_delta_stats, run_trial)
from .experiments import (ResultTable, Scenario, aggregate, default_scenario,
                          load_config, run_scenario)

__version__ = "0.1.0"
