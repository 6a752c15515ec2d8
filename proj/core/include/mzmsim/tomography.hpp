#pragma once

#include "mzmsim/dynamics.hpp"
#include "mzmsim/qchan.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mzmsim::tomo {

using dynamics::GateId;
using GateString = std::vector<GateId>;

std::string gate_label(GateId id);  // "Gx", "Gy", "Gi"

/// A run of gates repeated `power` times; printed plain when power == 1,
/// "(...)^power" otherwise.
struct SequenceItem {
  GateString gates;
  int power = 1;
};

struct SequenceSpec {
  std::vector<SequenceItem> items;
  // Design bookkeeping; -1 / 0 for sequences parsed back from files.
  int germ_index = -1;
  int germ_power = 0;

  GateString flat() const;
  std::string label() const;  // "{}" for the empty sequence
};

/// Throws std::invalid_argument on malformed labels.
SequenceSpec parse_sequence_label(const std::string& label);

struct GstDesign {
  std::vector<GateString> fiducials;
  std::vector<GateString> germs;
  std::vector<SequenceSpec> sequences;  // deduplicated by label
};

/// Fiducials {empty, Gx, Gy, GxGx, GxGxGx, GyGyGy}; germs {Gx, Gy, Gi, GxGy,
/// GxGxGy, GxGi, GyGi, GxGyGi}. Germ powers are 1, 2, 4, ..., 2^max_power,
/// keeping the germ section at most 16 gates; bare fiducial pairs are included.
GstDesign make_design(int max_power = 4);

struct SequenceCounts {
  SequenceSpec sequence;
  double shots = 0.0;
  double dark_counts = 0.0;  // shots that ended in |S>
};

struct GstDataset {
  std::vector<SequenceCounts> rows;
  std::uint64_t seed = 0;
  double nominal_shots = 0.0;
  bool infinite_shots = false;
  std::string timestamp = "unspecified";  // caller-supplied, never wall clock
  std::string provenance;
};

/// Simulation truth: one optical gate model per label plus the noise model.
struct TruthModel {
  dynamics::OpticalGateSpec gx;
  dynamics::OpticalGateSpec gy;
  dynamics::OpticalGateSpec gi;
  dynamics::NoiseModel noise;
};

struct PhysicalParams {
  double dtheta = 0.0;   // common pi/2-angle deviation of sqrt_x and sqrt_y
  double theta_i = 0.0;  // residual idle rotation angle, >= 0 once canonical
  double phi_i = 0.0;    // idle rotation axis azimuth
  PhysicalParams canonicalized() const;
};

/// Exact-angle truth: sqrt_x/sqrt_y at pi/2 + dtheta (via on-state power),
/// idle at theta_i (via extinction at unit power) and fixed phase phi_i.
TruthModel make_truth(const PhysicalParams& p, dynamics::NoiseModel noise = {},
                      double duration_us = 10.975);

/// Device-flavored truth: the idle leakage inherits the on-power
/// miscalibration, theta_i = (pi/2 + dtheta) 10^(-extinction/20).
TruthModel make_truth_device(double dtheta, double extinction_db,
                             std::optional<double> leakage_phase,
                             dynamics::NoiseModel noise = {},
                             double duration_us = 10.975);

/// Binomial sampling of every design sequence; with infinite_shots the counts
/// are exact probabilities times `shots`. Per-sequence RNG streams are derived
/// from the seed by sequence index; drift and the leakage-phase walk advance
/// on a dedicated experiment stream.
GstDataset simulate_dataset(const GstDesign& design, const TruthModel& truth,
                            double shots, std::uint64_t seed,
                            bool infinite_shots = false);

// --- gate-set models --------------------------------------------------------

struct GateSet {
  std::array<qchan::Ptm, 3> gates{};  // indexed by GateId
  Eigen::Vector4d rho;                // prepared |S><S|, PTM column
  Eigen::Vector4d effect_s;           // |S> measurement effect, PTM row
};

GateSet ideal_gateset();
GateSet gateset_from_physical(const PhysicalParams& p);

/// P(outcome S) for one sequence under a gate-set model.
double sequence_prob_s(const GateSet& gs, const SequenceSpec& seq);

/// Binomial log-likelihood of the dataset under the model.
double log_likelihood(const GateSet& gs, const GstDataset& data);

// --- fits -------------------------------------------------------------------

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParamInterval {
  double lower = 0.0;
  double upper = 0.0;
  bool unbounded = false;  // profile never dropped by 1 within the search span
  double half_width() const { return 0.5 * (upper - lower); }
};

struct PhysicalFit {
  PhysicalParams params;
  ParamInterval dtheta_interval, theta_i_interval, phi_i_interval;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  bool common_dtheta = true;  // one deviation shared by sqrt_x and sqrt_y
};

/// Three-parameter MLE (sqrt_x at phi = 0 and sqrt_y at phi = pi/2 fixed),
/// Nelder-Mead from phi_i starts {0, pi/2, pi, 3pi/2} plus a Newton polish;
/// intervals are profile likelihoods at a log-likelihood drop of 1.
/// Throws FitError if no start converges.
PhysicalFit fit_physical_gst(const GstDataset& data);

struct StandardOptions {
  bool fit_spam = false;
  int max_iter = 2000;
  double rel_tol = 1e-10;
  bool gauge_optimize = true;
  bool uncertainties = true;
};

struct StandardFit {
  GateSet estimate;      // gauge-optimized toward the ideal targets
  GateSet raw_estimate;  // optimizer output before gauge optimization
  std::array<double, 3> infidelity{}, infidelity_unc{};
  std::array<double, 3> diamond_bound{}, diamond_unc{};
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Linear-inversion seed followed by quasi-Newton MLE over unconstrained
/// transfer matrices (SPAM held ideal unless fit_spam), then gauge
/// optimization toward the ideal targets and observed-Fisher uncertainties.
/// Throws FitError on non-convergence or an ill-conditioned inversion.
StandardFit fit_standard_gst(const GstDataset& data, const StandardOptions& opts = {});

// --- reporting --------------------------------------------------------------

struct MetricsRow {
  std::string gate;
  double infidelity = 0.0, infidelity_unc = 0.0;
  double diamond = 0.0, diamond_unc = 0.0;
};

struct MetricsTable {
  std::string method;
  std::vector<MetricsRow> rows;
  std::optional<double> implied_extinction_db;  // from theta_i
};

/// Closed forms: infidelity sin^2(theta/2), diamond error sin(theta/2), with
/// the common sqrt_x/sqrt_y row printed once. Uncertainties are propagated
/// from the parameter half-widths.
MetricsTable report_metrics(const PhysicalParams& p, double dtheta_unc = 0.0,
                            double theta_i_unc = 0.0);
MetricsTable report_metrics(const PhysicalFit& fit);
MetricsTable report_metrics(const StandardFit& fit);

// --- file formats ------------------------------------------------------------

/// Lines "sequence shots dark_counts" with '#' metadata headers.
void write_dataset(const GstDataset& data, std::ostream& os);
GstDataset read_dataset(std::istream& is);

void write_fit_report(const PhysicalFit& fit, const MetricsTable& metrics,
                      std::ostream& os);
void write_fit_report(const StandardFit& fit, const MetricsTable& metrics,
                      std::ostream& os);
void write_metrics_csv(const MetricsTable& metrics, std::ostream& os);

// Exposed for tests: gauge transform with SPAM co-transformed.
GateSet gauge_transform(const GateSet& gs, const Eigen::Matrix4d& m);
GateSet gauge_optimize(const GateSet& gs, const GateSet& targets);

}  // namespace mzmsim::tomo
