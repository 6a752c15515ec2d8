#include "mzmsim/photonics.hpp"

#include "mzmsim/optim.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace mzmsim::photonics {

using namespace std::complex_literals;

TransferMatrix2 coupler_matrix(const CouplerSpec& c) {
  if (!(c.power_split >= 0.0 && c.power_split <= 1.0))
    throw std::invalid_argument("coupler power_split must be in [0, 1]");
  if (!(c.insertion_loss_db >= 0.0))
    throw std::invalid_argument("coupler insertion loss must be >= 0 dB");
  const double t = std::sqrt(1.0 - c.power_split);
  const double k = std::sqrt(c.power_split);
  const double a = std::pow(10.0, -c.insertion_loss_db / 20.0);
  TransferMatrix2 m;
  m << a * t, 1i * a * k, 1i * a * k, a * t;
  return m;
}

PhasePair voltage_to_phases(double volts, const ArmSpec& arm) {
  if (!(arm.vpi > 0.0)) throw std::invalid_argument("vpi must be positive");
  const double half = 0.5 * (std::numbers::pi * volts / arm.vpi + arm.bias_phase);
  return PhasePair{half, -half};
}

TransferMatrix2 mzi_matrix(const CouplerSpec& in, const CouplerSpec& out,
                           double phi_top, double phi_bottom, double arm_loss_db) {
  if (!(arm_loss_db >= 0.0))
    throw std::invalid_argument("arm loss must be >= 0 dB");
  const double a = std::pow(10.0, -arm_loss_db / 20.0);
  TransferMatrix2 arms = TransferMatrix2::Zero();
  arms(0, 0) = a * std::exp(1i * phi_top);
  arms(1, 1) = a * std::exp(1i * phi_bottom);
  return coupler_matrix(out) * arms * coupler_matrix(in);
}

TransferMatrix2 mzi_matrix(const MziStage& stage, double volts) {
  const PhasePair p = voltage_to_phases(volts, stage.arms);
  return mzi_matrix(stage.splitter, stage.combiner, p.top, p.bottom,
                    stage.arms.loss_db);
}

TransferMatrix2 mzm_matrix(const DeviceSpec& dev, double v1, double v2) {
  TransferMatrix2 m = mzi_matrix(dev.stage1, v1);
  if (dev.routing == Routing::crossed) m = (TransferMatrix2() << 0, 1, 1, 0).finished() * m;
  return mzi_matrix(dev.stage2, v2) * m;
}

double designated_output_power(const DeviceSpec& dev, double v1, double v2) {
  if (dev.designated_output != 0 && dev.designated_output != 1)
    throw std::invalid_argument("designated_output must be 0 or 1");
  return std::norm(mzm_matrix(dev, v1, v2)(dev.designated_output, 0));
}

double single_mzi_bar_extinction_db(const CouplerSpec& in, const CouplerSpec& out) {
  const double t = std::sqrt((1.0 - in.power_split) * (1.0 - out.power_split));
  const double k = std::sqrt(in.power_split * out.power_split);
  const double pmin = (t - k) * (t - k);
  const double pmax = (t + k) * (t + k);
  if (pmin == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(pmax / pmin);
}

TransmissionMap transmission_map(const DeviceSpec& dev,
                                 const std::vector<double>& v1_grid,
                                 const std::vector<double>& v2_grid) {
  if (v1_grid.empty() || v2_grid.empty())
    throw std::invalid_argument("transmission_map: empty voltage grid");
  TransmissionMap map;
  map.v1 = v1_grid;
  map.v2 = v2_grid;
  map.power.resize(static_cast<Eigen::Index>(v1_grid.size()),
                   static_cast<Eigen::Index>(v2_grid.size()));
  for (std::size_t i = 0; i < v1_grid.size(); ++i)
    for (std::size_t j = 0; j < v2_grid.size(); ++j)
      map.power(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          designated_output_power(dev, v1_grid[i], v2_grid[j]);
  const double peak = map.power.maxCoeff();
  if (!(peak > 0.0))
    throw std::runtime_error("transmission_map: no transmission anywhere on the grid");
  map.power /= peak;
  map.rabi = map.power.cwiseSqrt();
  return map;
}

namespace {

void write_grid_csv(const std::vector<double>& v1, const std::vector<double>& v2,
                    const Eigen::MatrixXd& cells, std::ostream& os) {
  auto put = [&os](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    os << buf;
  };
  for (double v : v2) {
    os << ',';
    put(v);
  }
  os << '\n';
  for (std::size_t i = 0; i < v1.size(); ++i) {
    put(v1[i]);
    for (std::size_t j = 0; j < v2.size(); ++j) {
      os << ',';
      put(cells(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    os << '\n';
  }
}

}  // namespace

void write_map_csv(const TransmissionMap& map, std::ostream& os) {
  write_grid_csv(map.v1, map.v2, map.power, os);
}

void write_rabi_csv(const TransmissionMap& map, std::ostream& os) {
  write_grid_csv(map.v1, map.v2, map.rabi, os);
}

ExtinctionResult optimize_extinction(const DeviceSpec& dev, const VoltageRange& range) {
  if (!(range.hi > range.lo))
    throw std::invalid_argument("optimize_extinction: empty voltage range");

  const int n = 101;
  const double step = (range.hi - range.lo) / (n - 1);
  Eigen::Vector2d best_on{range.lo, range.lo}, best_off{range.lo, range.lo};
  double pmax = -1.0, pmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double v1 = range.lo + i * step, v2 = range.lo + j * step;
      const double p = designated_output_power(dev, v1, v2);
      if (p > pmax) {
        pmax = p;
        best_on = {v1, v2};
      }
      if (p < pmin) {
        pmin = p;
        best_off = {v1, v2};
      }
    }

  optim::NelderMeadOptions opts;
  opts.rel_tol = 1e-12;
  // Power is |amplitude|^2 of an O(1) interference sum, so values below
  // ~1e-32 are rounding noise; treat any simplex spread below that as
  // converged instead of chasing a relative tolerance on the noise floor.
  opts.abs_tol = 1e-26;
  opts.max_iter = 500;
  auto clampf = [&](const Eigen::VectorXd& v) {
    const double v1 = std::clamp(v(0), range.lo, range.hi);
    const double v2 = std::clamp(v(1), range.lo, range.hi);
    return designated_output_power(dev, v1, v2);
  };
  auto off_fit = optim::nelder_mead(clampf, best_off, 0.5 * step, opts);
  auto on_fit = optim::nelder_mead(
      [&](const Eigen::VectorXd& v) { return -clampf(v); }, best_on, 0.5 * step, opts);
  if (!off_fit.converged || !on_fit.converged)
    throw std::runtime_error("optimize_extinction: refinement did not converge");

  ExtinctionResult res;
  res.v_on = {std::clamp(on_fit.x(0), range.lo, range.hi),
              std::clamp(on_fit.x(1), range.lo, range.hi)};
  res.v_off = {std::clamp(off_fit.x(0), range.lo, range.hi),
               std::clamp(off_fit.x(1), range.lo, range.hi)};
  res.on_power = -on_fit.value;
  res.off_power = off_fit.value;
  const double ratio_db = res.off_power > 0.0
                              ? 10.0 * std::log10(res.on_power / res.off_power)
                              : std::numeric_limits<double>::infinity();
  res.extinction_db = std::min(ratio_db, 120.0);
  return res;
}

double ring_transmission(const RingSpec& r) {
  if (!(r.intrinsic_rate > 0.0) || !(r.coupling_rate > 0.0))
    throw std::invalid_argument("ring rates must be positive");
  if (!(r.q_factor > 0.0)) throw std::invalid_argument("ring q_factor must be positive");
  const double half_diff = 0.5 * (r.intrinsic_rate - r.coupling_rate);
  const double half_sum = 0.5 * (r.intrinsic_rate + r.coupling_rate);
  const double d2 = r.resonance_detuning * r.resonance_detuning;
  return (d2 + half_diff * half_diff) / (d2 + half_sum * half_sum);
}

double ring_extinction_db(const RingSpec& r) {
  const double t = ring_transmission(r);
  if (t == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(t);
}

LossBudget loss_budget(const std::vector<LossItem>& items) {
  LossBudget budget;
  budget.items = items;
  for (const auto& item : items) {
    if (!(item.loss_db >= 0.0))
      throw std::invalid_argument("loss_budget: negative loss entry '" + item.label + "'");
    budget.total_db += item.loss_db;
  }
  return budget;
}

}  // namespace mzmsim::photonics
