#pragma once

#include "mzmsim/qchan.hpp"

#include <iosfwd>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace mzmsim::dynamics {

/// Trapezoidal optical power envelope. Rise and fall are 10-90% times of
/// linear power ramps (full ramp duration = time / 0.8); peak power is 1.
struct PulseShape {
  double rise_time_us = 0.3;
  double fall_time_us = 0.5;
  double plateau_us = 21.15;
};

double pulse_power(const PulseShape& p, double t_us);  // P(t) in [0, 1]
double pulse_duration(const PulseShape& p);
double pulse_area(const PulseShape& p);  // integral of P(t), us

/// Ornstein-Uhlenbeck drift of the extinction ratio (dB) and the on-state
/// power (relative), advanced on a shared clock.
struct DriftSpec {
  bool enabled = false;
  double reversion_time_s = 3600.0;
  double extinction_std_db = 1.5;
  double on_power_std_rel = 0.01;
  double sample_period_s = 0.5;  // spacing of successive pulses or sequences
};

struct NoiseModel {
  double energy_jitter_rel = 0.006;  // white pulse-to-pulse energy jitter
  DriftSpec drift;
  std::optional<double> leakage_phase;   // fixed value; nullopt draws uniformly
  double leakage_phase_walk_rad = 0.0;   // per-sequence random-walk step
  bool dephasing = false;
  double t2_us = 600.0;
  double gap_us = 5.0;
};

enum class GateId { sqrt_x = 0, sqrt_y = 1, idle = 2 };

struct OpticalGateSpec {
  GateId gate_id = GateId::sqrt_x;
  double duration_us = 10.975;
  double on_power_rel = 1.0;  // relative on-state power; 1 calibrates theta to pi/2
  double extinction_db = std::numeric_limits<double>::infinity();
};

/// Omega = omega_ref * sqrt(p_rel). Throws std::invalid_argument if p_rel < 0.
double rabi_rate_from_power(double p_rel, double omega_ref);

/// Excited-state population sin^2(omega t / 2) at each duration.
std::vector<double> rabi_flop(double omega_rad_per_us,
                              const std::vector<double>& durations_us);

/// integral of omega_peak * sqrt(P(t)) dt by adaptive quadrature
/// (relative tolerance 1e-10). Linear power ramps contribute 2/3 of a
/// rectangle, so theta = omega * (plateau + (2/3)(full rise + full fall)).
double effective_angle(const PulseShape& p, double omega_peak);

/// Residual rotation angle of a nominally-off pi/2 pulse: (pi/2) * 10^(-er/20).
double theta_from_extinction(double er_db);
double extinction_from_theta(double theta);

/// Stochastic state carried across the gates of one sequence and, for drift,
/// across a whole run.
struct SequenceState {
  double leakage_phase = 0.0;
  double extinction_offset_db = 0.0;  // OU state, stationary mean 0
  double on_power_factor = 1.0;       // OU state, stationary mean 1
};

/// Draws the leakage phase (fixed value or uniform) and stationary drift states.
SequenceState make_sequence_state(const NoiseModel& noise, std::mt19937_64& rng);

void advance_drift(SequenceState& state, const NoiseModel& noise, double dt_s,
                   std::mt19937_64& rng);

/// Applies the per-sequence leakage-phase random walk and the inter-sequence
/// drift step.
void begin_sequence(SequenceState& state, const NoiseModel& noise,
                    std::mt19937_64& rng);

/// One realized gate. sqrt_x: U((pi/2) j, 0); sqrt_y: U((pi/2) j, pi/2);
/// idle: U((pi/2) 10^(-er/20) j, leakage phase) with er the drifted extinction.
/// j = sqrt(on_power_rel * drift factor * jitter); power scales energy, the
/// angle scales with its square root. Advances the drift clock by
/// duration + gap.
qchan::Unitary2 realize_gate(const OpticalGateSpec& spec, const NoiseModel& noise,
                             SequenceState& state, std::mt19937_64& rng);

/// Same gate as a transfer matrix; when dephasing is enabled the off-diagonal
/// Bloch components are damped by exp(-(duration + gap)/t2) after the gate.
qchan::Ptm realize_gate_ptm(const OpticalGateSpec& spec, const NoiseModel& noise,
                            SequenceState& state, std::mt19937_64& rng);

/// n pulse energies relative to nominal (jitter times drift; all 1 when quiet).
/// Pulses are spaced by drift.sample_period_s on the drift clock.
std::vector<double> pulse_energy_histogram(int n, const PulseShape& pulse,
                                           const NoiseModel& noise,
                                           std::mt19937_64& rng);

/// One sample per line; '#' metadata records the seed and noise parameters.
void write_histogram_csv(const std::vector<double>& samples, const PulseShape& pulse,
                         const NoiseModel& noise, std::uint64_t seed,
                         std::ostream& os);

}  // namespace mzmsim::dynamics
