#include "mzmsim/dynamics.hpp"

#include "mzmsim/optim.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace mzmsim::dynamics {

namespace {

constexpr double kPiHalf = std::numbers::pi / 2.0;

double full_rise(const PulseShape& p) { return p.rise_time_us / 0.8; }
double full_fall(const PulseShape& p) { return p.fall_time_us / 0.8; }

void validate(const PulseShape& p) {
  if (!(p.rise_time_us >= 0.0) || !(p.fall_time_us >= 0.0) || !(p.plateau_us >= 0.0))
    throw std::invalid_argument("pulse shape times must be >= 0");
}

}  // namespace

double pulse_power(const PulseShape& p, double t_us) {
  validate(p);
  const double tr = full_rise(p), tf = full_fall(p);
  if (t_us <= 0.0) return 0.0;
  if (t_us < tr) return t_us / tr;
  if (t_us <= tr + p.plateau_us) return 1.0;
  const double tail = tr + p.plateau_us + tf - t_us;
  if (tail <= 0.0) return 0.0;
  return tail / tf;
}

double pulse_duration(const PulseShape& p) {
  validate(p);
  return full_rise(p) + p.plateau_us + full_fall(p);
}

double pulse_area(const PulseShape& p) {
  validate(p);
  return 0.5 * (full_rise(p) + full_fall(p)) + p.plateau_us;
}

double rabi_rate_from_power(double p_rel, double omega_ref) {
  if (!(p_rel >= 0.0)) throw std::invalid_argument("relative power must be >= 0");
  return omega_ref * std::sqrt(p_rel);
}

std::vector<double> rabi_flop(double omega_rad_per_us,
                              const std::vector<double>& durations_us) {
  std::vector<double> pop(durations_us.size());
  for (std::size_t i = 0; i < durations_us.size(); ++i) {
    const double s = std::sin(0.5 * omega_rad_per_us * durations_us[i]);
    pop[i] = s * s;
  }
  return pop;
}

double effective_angle(const PulseShape& p, double omega_peak) {
  validate(p);
  const double tr = full_rise(p), tf = full_fall(p);
  double theta = omega_peak * p.plateau_us;
  if (tr > 0.0)
    theta += omega_peak * optim::integrate_adaptive(
                              [tr](double t) { return std::sqrt(t / tr); }, 0.0, tr);
  if (tf > 0.0)
    theta += omega_peak * optim::integrate_adaptive(
                              [tf](double t) { return std::sqrt(t / tf); }, 0.0, tf);
  return theta;
}

double theta_from_extinction(double er_db) {
  if (std::isinf(er_db)) return 0.0;
  return kPiHalf * std::pow(10.0, -er_db / 20.0);
}

double extinction_from_theta(double theta) {
  if (!(theta > 0.0)) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(kPiHalf / theta);
}

SequenceState make_sequence_state(const NoiseModel& noise, std::mt19937_64& rng) {
  SequenceState state;
  if (noise.leakage_phase) {
    state.leakage_phase = *noise.leakage_phase;
  } else {
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    state.leakage_phase = u(rng);
  }
  if (noise.drift.enabled) {
    std::normal_distribution<double> n;
    state.extinction_offset_db = noise.drift.extinction_std_db * n(rng);
    state.on_power_factor = 1.0 + noise.drift.on_power_std_rel * n(rng);
  }
  return state;
}

void advance_drift(SequenceState& state, const NoiseModel& noise, double dt_s,
                   std::mt19937_64& rng) {
  if (!noise.drift.enabled || dt_s <= 0.0) return;
  const double decay = std::exp(-dt_s / noise.drift.reversion_time_s);
  const double kick = std::sqrt(1.0 - decay * decay);
  std::normal_distribution<double> n;
  state.extinction_offset_db =
      state.extinction_offset_db * decay + noise.drift.extinction_std_db * kick * n(rng);
  state.on_power_factor =
      1.0 + (state.on_power_factor - 1.0) * decay +
      noise.drift.on_power_std_rel * kick * n(rng);
}

void begin_sequence(SequenceState& state, const NoiseModel& noise,
                    std::mt19937_64& rng) {
  if (noise.leakage_phase_walk_rad > 0.0) {
    std::normal_distribution<double> n;
    state.leakage_phase += noise.leakage_phase_walk_rad * n(rng);
  }
  advance_drift(state, noise, noise.drift.sample_period_s, rng);
}

namespace {

double energy_factor(const OpticalGateSpec& spec, const NoiseModel& noise,
                     const SequenceState& state, std::mt19937_64& rng) {
  double e = spec.on_power_rel * state.on_power_factor;
  if (noise.energy_jitter_rel > 0.0) {
    std::normal_distribution<double> n;
    e *= std::max(0.0, 1.0 + noise.energy_jitter_rel * n(rng));
  }
  return e;
}

}  // namespace

qchan::Unitary2 realize_gate(const OpticalGateSpec& spec, const NoiseModel& noise,
                             SequenceState& state, std::mt19937_64& rng) {
  if (!(spec.on_power_rel >= 0.0))
    throw std::invalid_argument("on_power_rel must be >= 0");
  if (!(spec.extinction_db >= 0.0))
    throw std::invalid_argument("extinction_db must be >= 0");
  const double j = std::sqrt(energy_factor(spec, noise, state, rng));
  qchan::Unitary2 u;
  switch (spec.gate_id) {
    case GateId::sqrt_x:
      u = qchan::unitary_from_angles(kPiHalf * j, 0.0);
      break;
    case GateId::sqrt_y:
      u = qchan::unitary_from_angles(kPiHalf * j, kPiHalf);
      break;
    case GateId::idle: {
      const double er = spec.extinction_db + state.extinction_offset_db;
      u = qchan::unitary_from_angles(theta_from_extinction(er) * j,
                                     state.leakage_phase);
      break;
    }
  }
  advance_drift(state, noise, 1e-6 * (spec.duration_us + noise.gap_us), rng);
  return u;
}

qchan::Ptm realize_gate_ptm(const OpticalGateSpec& spec, const NoiseModel& noise,
                            SequenceState& state, std::mt19937_64& rng) {
  qchan::Ptm r = qchan::ptm_from_unitary(realize_gate(spec, noise, state, rng));
  if (noise.dephasing) {
    if (!(noise.t2_us > 0.0)) throw std::invalid_argument("t2 must be positive");
    const double g = std::exp(-(spec.duration_us + noise.gap_us) / noise.t2_us);
    Eigen::Vector4d damp{1.0, g, g, 1.0};
    r = damp.asDiagonal() * r;
  }
  return r;
}

std::vector<double> pulse_energy_histogram(int n, const PulseShape& pulse,
                                           const NoiseModel& noise,
                                           std::mt19937_64& rng) {
  validate(pulse);
  if (n < 0) throw std::invalid_argument("sample count must be >= 0");
  std::vector<double> samples(static_cast<std::size_t>(n));
  SequenceState state = make_sequence_state(noise, rng);
  std::normal_distribution<double> gauss;
  for (auto& s : samples) {
    double e = state.on_power_factor;
    if (noise.energy_jitter_rel > 0.0)
      e *= std::max(0.0, 1.0 + noise.energy_jitter_rel * gauss(rng));
    s = e;
    advance_drift(state, noise, noise.drift.sample_period_s, rng);
  }
  return samples;
}

void write_histogram_csv(const std::vector<double>& samples, const PulseShape& pulse,
                         const NoiseModel& noise, std::uint64_t seed,
                         std::ostream& os) {
  char buf[64];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    os << "# " << key << " = " << buf << '\n';
  };
  os << "# pulse energies relative to nominal, one sample per line\n";
  os << "# seed = " << seed << '\n';
  line("samples", static_cast<double>(samples.size()));
  line("rise_time_us", pulse.rise_time_us);
  line("fall_time_us", pulse.fall_time_us);
  line("plateau_us", pulse.plateau_us);
  line("energy_jitter_rel", noise.energy_jitter_rel);
  os << "# drift_enabled = " << (noise.drift.enabled ? "true" : "false") << '\n';
  line("drift_reversion_time_s", noise.drift.reversion_time_s);
  line("drift_extinction_std_db", noise.drift.extinction_std_db);
  line("drift_on_power_std_rel", noise.drift.on_power_std_rel);
  line("drift_sample_period_s", noise.drift.sample_period_s);
  for (double s : samples) {
    std::snprintf(buf, sizeof buf, "%.12g", s);
    os << buf << '\n';
  }
}

}  // namespace mzmsim::dynamics
