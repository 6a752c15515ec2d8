#pragma once

#include <Eigen/Dense>

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace mzmsim::photonics {

using TransferMatrix2 = Eigen::Matrix2cd;

/// Directional coupler: cross-coupled power fraction and excess loss.
struct CouplerSpec {
  double power_split = 0.5;       // kappa^2, fraction of power in the cross port
  double insertion_loss_db = 0.0;
};

/// One push-pull phase-shifter pair of an MZI stage.
struct ArmSpec {
  double loss_db = 0.0;     // propagation loss per arm
  double bias_phase = 0.0;  // differential phase at zero volts, rad
  double vpi = 24.0;        // volts for a differential phase of pi
};

struct MziStage {
  CouplerSpec splitter;
  CouplerSpec combiner;
  ArmSpec arms;
};

enum class Routing { straight, crossed };  // how MZI-1 outputs feed MZI-2 inputs

/// Dual-MZI modulator; light enters port 0 of stage 1, the ion sees
/// `designated_output` of stage 2.
struct DeviceSpec {
  MziStage stage1;
  MziStage stage2;
  Routing routing = Routing::straight;
  int designated_output = 0;
};

struct PhasePair {
  double top = 0.0;
  double bottom = 0.0;
};

/// sqrt(loss) * [[t, i k], [i k, t]] with k = sqrt(power_split).
/// Throws std::invalid_argument for power_split outside [0, 1] or negative loss.
TransferMatrix2 coupler_matrix(const CouplerSpec& c);

/// Push-pull arm phases: +-(pi v / vpi)/2 plus half the bias each, so the
/// differential phase is pi v / vpi + bias and the common phase is zero.
PhasePair voltage_to_phases(double volts, const ArmSpec& arm);

TransferMatrix2 mzi_matrix(const CouplerSpec& in, const CouplerSpec& out,
                           double phi_top, double phi_bottom,
                           double arm_loss_db = 0.0);
TransferMatrix2 mzi_matrix(const MziStage& stage, double volts);

TransferMatrix2 mzm_matrix(const DeviceSpec& dev, double v1, double v2);

/// |amplitude|^2 at the designated output for unit power into port 0.
double designated_output_power(const DeviceSpec& dev, double v1, double v2);

/// Largest achievable bar-port on/off ratio of a single MZI, in dB:
/// min |M_bar|^2 = (t_in t_out - k_in k_out)^2 over the differential phase.
double single_mzi_bar_extinction_db(const CouplerSpec& in, const CouplerSpec& out);

struct TransmissionMap {
  std::vector<double> v1;  // rows
  std::vector<double> v2;  // columns
  Eigen::MatrixXd power;   // normalized to the grid maximum
  Eigen::MatrixXd rabi;    // sqrt(power): relative Rabi-rate contours
};

/// Throws std::invalid_argument on an empty grid.
TransmissionMap transmission_map(const DeviceSpec& dev,
                                 const std::vector<double>& v1_grid,
                                 const std::vector<double>& v2_grid);

/// Header row = v2 grid, first column = v1 grid, 9 significant digits.
void write_map_csv(const TransmissionMap& map, std::ostream& os);
void write_rabi_csv(const TransmissionMap& map, std::ostream& os);

struct VoltageRange {
  double lo = -48.0;
  double hi = 48.0;
};

struct ExtinctionResult {
  std::array<double, 2> v_on{};   // voltages maximizing the designated output
  std::array<double, 2> v_off{};  // voltages minimizing it
  double on_power = 0.0;
  double off_power = 0.0;
  double extinction_db = 0.0;  // 10 log10(on/off), reported value capped at 120
};

/// Coarse 101x101 grid search over the voltage range followed by local
/// Nelder-Mead refinement of both states (relative power tolerance 1e-12
/// with a 1e-26 absolute floor for null-chasing, 500 iterations).
/// Throws std::runtime_error if refinement fails to converge.
ExtinctionResult optimize_extinction(const DeviceSpec& dev, const VoltageRange& range);

/// All-pass ring resonator in the steady state.
struct RingSpec {
  double intrinsic_rate = 1.0;       // kappa_int > 0
  double coupling_rate = 1.0;        // kappa_ext > 0
  double resonance_detuning = 0.0;   // same units as the rates
  double q_factor = 1e6;
};

/// Normalized transmitted power; ((k_int - k_ext)/(k_int + k_ext))^2 on
/// resonance, 0 at critical coupling. Throws for non-positive rates.
double ring_transmission(const RingSpec& r);
double ring_extinction_db(const RingSpec& r);

struct LossItem {
  std::string label;
  double loss_db = 0.0;
};

struct LossBudget {
  std::vector<LossItem> items;
  double total_db = 0.0;
};

/// Sums per-component dB losses. Throws std::invalid_argument on negative entries.
LossBudget loss_budget(const std::vector<LossItem>& items);

}  // namespace mzmsim::photonics
