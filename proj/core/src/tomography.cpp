#include "mzmsim/tomography.hpp"

#include "mzmsim/optim.hpp"
#include "mzmsim/rng.hpp"
#include "mzmsim/version.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace mzmsim::tomo {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kProbClamp = 1e-12;

const Eigen::Vector4d& spam_ideal() {
  static const Eigen::Vector4d v =
      (Eigen::Vector4d() << 1.0 / std::numbers::sqrt2, 0.0, 0.0,
       1.0 / std::numbers::sqrt2)
          .finished();
  return v;
}

double clamp_prob(double p) {
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

void append_run(std::string& out, const GateString& gates) {
  for (GateId g : gates) out += gate_label(g);
}

}  // namespace

std::string gate_label(GateId id) {
  switch (id) {
    case GateId::sqrt_x: return "Gx";
    case GateId::sqrt_y: return "Gy";
    case GateId::idle: return "Gi";
  }
  throw std::invalid_argument("unknown gate id");
}

GateString SequenceSpec::flat() const {
  GateString out;
  for (const auto& item : items)
    for (int p = 0; p < item.power; ++p)
      out.insert(out.end(), item.gates.begin(), item.gates.end());
  return out;
}

std::string SequenceSpec::label() const {
  std::string out;
  for (const auto& item : items) {
    if (item.gates.empty()) continue;
    if (item.power == 1) {
      append_run(out, item.gates);
    } else {
      out += '(';
      append_run(out, item.gates);
      out += ")^";
      out += std::to_string(item.power);
    }
  }
  if (out.empty()) out = "{}";
  return out;
}

SequenceSpec parse_sequence_label(const std::string& label) {
  SequenceSpec seq;
  if (label == "{}") return seq;

  std::size_t pos = 0;
  auto parse_gate = [&](const std::string& s, std::size_t& i) -> GateId {
    if (i + 1 >= s.size() || s[i] != 'G')
      throw std::invalid_argument("bad sequence label: " + label);
    const char c = s[i + 1];
    i += 2;
    if (c == 'x') return GateId::sqrt_x;
    if (c == 'y') return GateId::sqrt_y;
    if (c == 'i') return GateId::idle;
    throw std::invalid_argument("bad gate in sequence label: " + label);
  };

  while (pos < label.size()) {
    if (label[pos] == '(') {
      const std::size_t close = label.find(')', pos);
      if (close == std::string::npos || close + 1 >= label.size() ||
          label[close + 1] != '^')
        throw std::invalid_argument("bad group in sequence label: " + label);
      SequenceItem item;
      std::size_t i = pos + 1;
      while (i < close) item.gates.push_back(parse_gate(label, i));
      if (item.gates.empty())
        throw std::invalid_argument("empty group in sequence label: " + label);
      std::size_t digits = close + 2;
      std::size_t end = digits;
      while (end < label.size() && std::isdigit(static_cast<unsigned char>(label[end])))
        ++end;
      if (end == digits)
        throw std::invalid_argument("missing power in sequence label: " + label);
      item.power = std::stoi(label.substr(digits, end - digits));
      if (item.power < 1)
        throw std::invalid_argument("power must be >= 1 in label: " + label);
      seq.items.push_back(std::move(item));
      pos = end;
    } else {
      SequenceItem item;
      while (pos < label.size() && label[pos] != '(')
        item.gates.push_back(parse_gate(label, pos));
      seq.items.push_back(std::move(item));
    }
  }
  return seq;
}

GstDesign make_design(int max_power) {
  if (max_power < 0 || max_power > 16)
    throw std::invalid_argument("max_power out of range");

  const GateId x = GateId::sqrt_x, y = GateId::sqrt_y, i = GateId::idle;
  GstDesign design;
  design.fiducials = {{}, {x}, {y}, {x, x}, {x, x, x}, {y, y, y}};
  design.germs = {{x}, {y}, {i}, {x, y}, {x, x, y}, {x, i}, {y, i}, {x, y, i}};

  std::set<std::string> seen;
  auto add = [&](SequenceSpec seq) {
    if (seen.insert(seq.label()).second)
      design.sequences.push_back(std::move(seq));
  };

  for (const auto& prep : design.fiducials)
    for (const auto& meas : design.fiducials) {
      SequenceSpec seq;
      if (!prep.empty()) seq.items.push_back({prep, 1});
      if (!meas.empty()) seq.items.push_back({meas, 1});
      add(std::move(seq));
    }

  const int max_germ_section = 16;
  for (std::size_t g = 0; g < design.germs.size(); ++g) {
    const auto& germ = design.germs[g];
    const int len = static_cast<int>(germ.size());
    for (int e = 0, power = 1; e <= max_power && power * len <= max_germ_section;
         ++e, power *= 2) {
      for (const auto& prep : design.fiducials)
        for (const auto& meas : design.fiducials) {
          SequenceSpec seq;
          if (!prep.empty()) seq.items.push_back({prep, 1});
          seq.items.push_back({germ, power});
          if (!meas.empty()) seq.items.push_back({meas, 1});
          seq.germ_index = static_cast<int>(g);
          seq.germ_power = power;
          add(std::move(seq));
        }
    }
  }
  return design;
}

PhysicalParams PhysicalParams::canonicalized() const {
  PhysicalParams p = *this;
  if (p.theta_i < 0.0) {
    p.theta_i = -p.theta_i;
    p.phi_i += kPi;
  }
  p.phi_i = std::fmod(p.phi_i, 2.0 * kPi);
  if (p.phi_i < 0.0) p.phi_i += 2.0 * kPi;
  return p;
}

TruthModel make_truth(const PhysicalParams& p, dynamics::NoiseModel noise,
                      double duration_us) {
  const double half_pi = kPi / 2.0;
  TruthModel t;
  const double on_power = std::pow(1.0 + p.dtheta / half_pi, 2);
  t.gx = {GateId::sqrt_x, duration_us, on_power,
          std::numeric_limits<double>::infinity()};
  t.gy = {GateId::sqrt_y, duration_us, on_power,
          std::numeric_limits<double>::infinity()};
  t.gi = {GateId::idle, duration_us, 1.0, dynamics::extinction_from_theta(p.theta_i)};
  if (!noise.leakage_phase) noise.leakage_phase = p.phi_i;
  t.noise = std::move(noise);
  return t;
}

TruthModel make_truth_device(double dtheta, double extinction_db,
                             std::optional<double> leakage_phase,
                             dynamics::NoiseModel noise, double duration_us) {
  const double half_pi = kPi / 2.0;
  TruthModel t;
  const double on_power = std::pow(1.0 + dtheta / half_pi, 2);
  t.gx = {GateId::sqrt_x, duration_us, on_power,
          std::numeric_limits<double>::infinity()};
  t.gy = {GateId::sqrt_y, duration_us, on_power,
          std::numeric_limits<double>::infinity()};
  t.gi = {GateId::idle, duration_us, on_power, extinction_db};
  noise.leakage_phase = leakage_phase;
  t.noise = std::move(noise);
  return t;
}

GstDataset simulate_dataset(const GstDesign& design, const TruthModel& truth,
                            double shots, std::uint64_t seed, bool infinite_shots) {
  if (!(shots > 0.0)) throw std::invalid_argument("shots must be positive");

  GstDataset ds;
  ds.seed = seed;
  ds.nominal_shots = shots;
  ds.infinite_shots = infinite_shots;
  {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "gx(on_power=%.9g) gy(on_power=%.9g) "
                  "gi(extinction_db=%.9g) jitter=%.3g drift=%d dephasing=%d",
                  truth.gx.on_power_rel, truth.gy.on_power_rel,
                  truth.gi.extinction_db, truth.noise.energy_jitter_rel,
                  truth.noise.drift.enabled ? 1 : 0,
                  truth.noise.dephasing ? 1 : 0);
    ds.provenance = buf;
  }

  auto rng_exp = rng::stream(seed, 0);
  dynamics::SequenceState state = dynamics::make_sequence_state(truth.noise, rng_exp);
  const Eigen::Vector4d& rho = spam_ideal();
  const Eigen::Vector4d& effect = spam_ideal();

  ds.rows.reserve(design.sequences.size());
  for (std::size_t k = 0; k < design.sequences.size(); ++k) {
    const SequenceSpec& seq = design.sequences[k];
    auto rng_seq = rng::stream(seed, k + 1);
    dynamics::begin_sequence(state, truth.noise, rng_exp);

    Eigen::Vector4d v = rho;
    for (GateId g : seq.flat()) {
      const dynamics::OpticalGateSpec& spec =
          g == GateId::sqrt_x ? truth.gx : (g == GateId::sqrt_y ? truth.gy : truth.gi);
      v = dynamics::realize_gate_ptm(spec, truth.noise, state, rng_seq) * v;
    }
    const double p_s = std::clamp(effect.dot(v), 0.0, 1.0);

    SequenceCounts row;
    row.sequence = seq;
    row.shots = shots;
    if (infinite_shots) {
      row.dark_counts = shots * p_s;
    } else {
      const long long n = std::llround(shots);
      std::binomial_distribution<long long> bin(n, p_s);
      row.dark_counts = static_cast<double>(bin(rng_seq));
      row.shots = static_cast<double>(n);
    }
    ds.rows.push_back(std::move(row));
  }
  return ds;
}

// --- gate-set models ---------------------------------------------------------

GateSet ideal_gateset() {
  return gateset_from_physical(PhysicalParams{0.0, 0.0, 0.0});
}

namespace {

// PTM of U(theta, phi): diag(1, R) with R the Rodrigues rotation by theta
// about the equatorial axis (cos phi, sin phi, 0).
qchan::Ptm rotation_ptm(double theta, double phi) {
  const double c = std::cos(phi), s = std::sin(phi);
  Eigen::Vector3d n{c, s, 0.0};
  Eigen::Matrix3d k;
  k << 0.0, 0.0, s, 0.0, 0.0, -c, -s, c, 0.0;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity() + std::sin(theta) * k +
                      (1.0 - std::cos(theta)) * (n * n.transpose() - Eigen::Matrix3d::Identity());
  qchan::Ptm ptm = qchan::Ptm::Identity();
  ptm.block<3, 3>(1, 1) = r;
  return ptm;
}

}  // namespace

GateSet gateset_from_physical(const PhysicalParams& p) {
  GateSet gs;
  gs.gates[0] = rotation_ptm(kPi / 2.0 + p.dtheta, 0.0);
  gs.gates[1] = rotation_ptm(kPi / 2.0 + p.dtheta, kPi / 2.0);
  gs.gates[2] = rotation_ptm(p.theta_i, p.phi_i);
  gs.rho = spam_ideal();
  gs.effect_s = spam_ideal();
  return gs;
}

double sequence_prob_s(const GateSet& gs, const SequenceSpec& seq) {
  Eigen::Vector4d v = gs.rho;
  for (const auto& item : seq.items) {
    qchan::Ptm run = qchan::Ptm::Identity();
    for (GateId g : item.gates) run = gs.gates[static_cast<int>(g)] * run;
    for (int p = 0; p < item.power; ++p) v = run * v;
  }
  return std::clamp(gs.effect_s.dot(v), 0.0, 1.0);
}

double log_likelihood(const GateSet& gs, const GstDataset& data) {
  double ll = 0.0;
  for (const auto& row : data.rows) {
    const double p = clamp_prob(sequence_prob_s(gs, row.sequence));
    if (row.dark_counts > 0.0) ll += row.dark_counts * std::log(p);
    if (row.shots - row.dark_counts > 0.0)
      ll += (row.shots - row.dark_counts) * std::log1p(-p);
  }
  return ll;
}

GateSet gauge_transform(const GateSet& gs, const Eigen::Matrix4d& m) {
  const Eigen::Matrix4d minv = m.inverse();
  GateSet out;
  for (int g = 0; g < 3; ++g) out.gates[g] = m * gs.gates[g] * minv;
  out.rho = m * gs.rho;
  out.effect_s = minv.transpose() * gs.effect_s;
  return out;
}

// --- physical (3-parameter) fit ----------------------------------------------

namespace {

// Caches each distinct (gate run, power) item so a likelihood evaluation
// builds every item matrix once and reuses it across sequences.
class PhysicalEvaluator {
 public:
  explicit PhysicalEvaluator(const GstDataset& data) {
    std::map<std::string, int> ids;
    rows_.reserve(data.rows.size());
    for (const auto& row : data.rows) {
      Row r;
      r.shots = row.shots;
      r.dark = row.dark_counts;
      for (const auto& item : row.sequence.items) {
        std::string key;
        append_run(key, item.gates);
        key += '^';
        key += std::to_string(item.power);
        auto [it, fresh] = ids.try_emplace(key, static_cast<int>(items_.size()));
        if (fresh) items_.push_back(item);
        r.item_ids.push_back(it->second);
      }
      rows_.push_back(std::move(r));
    }
    matrices_.resize(items_.size());
  }

  double log_likelihood(const PhysicalParams& p) const {
    std::array<qchan::Ptm, 3> gates = {
        rotation_ptm(kPi / 2.0 + p.dtheta, 0.0),
        rotation_ptm(kPi / 2.0 + p.dtheta, kPi / 2.0),
        rotation_ptm(p.theta_i, p.phi_i)};
    for (std::size_t i = 0; i < items_.size(); ++i) {
      qchan::Ptm run = gates[static_cast<int>(items_[i].gates[0])];
      for (std::size_t k = 1; k < items_[i].gates.size(); ++k)
        run = gates[static_cast<int>(items_[i].gates[k])] * run;
      qchan::Ptm m = run;
      for (int e = 1; e < items_[i].power; ++e) m = run * m;
      matrices_[i] = m;
    }

    const Eigen::Vector4d& rho = spam_ideal();
    const Eigen::Vector4d& effect = spam_ideal();
    double ll = 0.0;
    for (const auto& row : rows_) {
      Eigen::Vector4d v = rho;
      for (int id : row.item_ids) v = matrices_[id] * v;
      const double p_s = clamp_prob(effect.dot(v));
      if (row.dark > 0.0) ll += row.dark * std::log(p_s);
      if (row.shots - row.dark > 0.0)
        ll += (row.shots - row.dark) * std::log1p(-p_s);
    }
    return ll;
  }

 private:
  struct Row {
    std::vector<int> item_ids;
    double shots = 0.0;
    double dark = 0.0;
  };
  std::vector<SequenceItem> items_;
  std::vector<Row> rows_;
  mutable std::vector<qchan::Ptm> matrices_;
};

struct Quadratic {
  Eigen::Vector3d grad;
  Eigen::Matrix3d hess;
};

Quadratic quadratic_model(const std::function<double(const Eigen::Vector3d&)>& f,
                          const Eigen::Vector3d& x, const Eigen::Vector3d& h) {
  Quadratic q;
  const double f0 = f(x);
  std::array<double, 3> fp{}, fm{};
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d xp = x, xm = x;
    xp(i) += h(i);
    xm(i) -= h(i);
    fp[i] = f(xp);
    fm[i] = f(xm);
    q.grad(i) = (fp[i] - fm[i]) / (2.0 * h(i));
    q.hess(i, i) = (fp[i] - 2.0 * f0 + fm[i]) / (h(i) * h(i));
  }
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      Eigen::Vector3d xpp = x, xpm = x, xmp = x, xmm = x;
      xpp(i) += h(i); xpp(j) += h(j);
      xpm(i) += h(i); xpm(j) -= h(j);
      xmp(i) -= h(i); xmp(j) += h(j);
      xmm(i) -= h(i); xmm(j) -= h(j);
      q.hess(i, j) = q.hess(j, i) =
          (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h(i) * h(j));
    }
  return q;
}

}  // namespace

PhysicalFit fit_physical_gst(const GstDataset& data) {
  if (data.rows.empty()) throw FitError("empty dataset");
  PhysicalEvaluator ev(data);
  auto ll_of = [&](const Eigen::Vector3d& x) {
    return ev.log_likelihood({x(0), x(1), x(2)});
  };

  // Multi-start downhill simplex over (dtheta, theta_i, phi_i); the idle
  // phase is started in all four quadrants because the likelihood in phi_i
  // is multimodal when theta_i is small.
  optim::NelderMeadOptions nm;
  nm.rel_tol = 1e-13;
  nm.max_iter = 3000;
  Eigen::Vector3d steps{0.01, 0.02, 0.5};

  optim::NelderMeadResult best;
  best.value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool any_converged = false;
  for (double phi0 : {0.0, kPi / 2.0, kPi, 1.5 * kPi}) {
    Eigen::Vector3d x0{0.0, 0.05, phi0};
    auto res = optim::nelder_mead(
        [&](const Eigen::VectorXd& x) { return -ll_of(x.head<3>()); },
        x0, steps, nm);
    iterations += res.iterations;
    any_converged = any_converged || res.converged;
    if (res.value < best.value) best = res;
  }
  if (!any_converged) throw FitError("physical fit failed to converge");

  // Newton polish with a finite-difference quadratic model; recovers the
  // optimum to well below the simplex tolerance.
  Eigen::Vector3d x = best.x.head<3>();
  const Eigen::Vector3d fd_step{3e-6, 3e-6, 5e-5};
  double ll = ll_of(x);
  Eigen::Matrix3d hess = Eigen::Matrix3d::Zero();
  for (int iter = 0; iter < 12; ++iter) {
    Quadratic q = quadratic_model(ll_of, x, fd_step);
    hess = q.hess;
    Eigen::Matrix3d neg = -q.hess;
    Eigen::LDLT<Eigen::Matrix3d> ldlt(neg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      neg += 1e-3 * std::abs(neg.diagonal().maxCoeff()) * Eigen::Matrix3d::Identity();
      ldlt.compute(neg);
      if (ldlt.info() != Eigen::Success) break;
    }
    Eigen::Vector3d step = ldlt.solve(q.grad);
    bool improved = false;
    for (int halvings = 0; halvings < 12; ++halvings) {
      const Eigen::Vector3d cand = x + step;
      const double ll_cand = ll_of(cand);
      if (ll_cand >= ll - 1e-9) {
        improved = ll_cand > ll;
        x = cand;
        ll = std::max(ll, ll_cand);
        break;
      }
      step *= 0.5;
    }
    ++iterations;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
    if (!improved && step.lpNorm<Eigen::Infinity>() < 1e-8) break;
  }

  PhysicalFit fit;
  PhysicalParams raw{x(0), x(1), x(2)};
  fit.params = raw.canonicalized();
  if (raw.theta_i < 0.0 || std::abs(fit.params.phi_i - raw.phi_i) > 1e-12)
    x = Eigen::Vector3d{fit.params.dtheta, fit.params.theta_i, fit.params.phi_i};
  fit.log_likelihood = ll;
  fit.iterations = iterations;
  fit.converged = true;

  // Profile-likelihood intervals at a log-likelihood drop of 1.
  Eigen::Vector3d sigma;
  {
    Eigen::Matrix3d neg = -hess;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(neg);
    Eigen::Vector3d ev_clamped = es.eigenvalues().cwiseMax(1e-12);
    Eigen::Matrix3d cov = es.eigenvectors() *
                          ev_clamped.cwiseInverse().asDiagonal() *
                          es.eigenvectors().transpose();
    for (int i = 0; i < 3; ++i)
      sigma(i) = std::sqrt(std::max(cov(i, i), 1e-16));
  }

  const double drop = 1.0;
  std::array<double, 3> max_span{0.5, 0.5, kPi};
  std::array<ParamInterval*, 3> out = {&fit.dtheta_interval, &fit.theta_i_interval,
                                       &fit.phi_i_interval};
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector2d nuisance_seed;
    {
      int k = 0;
      for (int j = 0; j < 3; ++j)
        if (j != i) nuisance_seed(k++) = x(j);
    }
    Eigen::Vector2d nuisance_steps;
    {
      int k = 0;
      for (int j = 0; j < 3; ++j)
        if (j != i) nuisance_steps(k++) = std::max(std::min(sigma(j), 0.05), 1e-6);
    }
    auto profile = [&](double xi) {
      optim::NelderMeadOptions pnm;
      pnm.rel_tol = 1e-13;
      pnm.max_iter = 800;
      auto res = optim::nelder_mead(
          [&](const Eigen::VectorXd& nu) {
            Eigen::Vector3d full;
            int k = 0;
            for (int j = 0; j < 3; ++j) full(j) = (j == i) ? xi : nu(k++);
            return -ll_of(full);
          },
          nuisance_seed, nuisance_steps, pnm);
      nuisance_seed = res.x.head<2>();
      return -res.value;
    };

    const double init = std::clamp(sigma(i), 1e-6, 0.25 * max_span[i]);
    auto iv = optim::profile_interval(profile, x(i), ll, drop, init, max_span[i],
                                      std::max(1e-3 * init, 1e-9));
    ParamInterval& pi = *out[i];
    pi.lower = iv.lower.bound;
    pi.upper = iv.upper.bound;
    pi.unbounded = iv.lower.unbounded || iv.upper.unbounded;
    if (i == 1 && pi.lower < 0.0) pi.lower = 0.0;
    if (i == 2 && pi.unbounded) {
      pi.lower = 0.0;
      pi.upper = 2.0 * kPi;
    }
  }
  return fit;
}

// --- standard (full process-matrix) fit --------------------------------------

namespace {

struct FlatData {
  std::vector<std::vector<std::uint8_t>> seqs;
  std::vector<double> shots;
  std::vector<double> dark;
};

FlatData flatten(const GstDataset& data) {
  FlatData fd;
  fd.seqs.reserve(data.rows.size());
  for (const auto& row : data.rows) {
    std::vector<std::uint8_t> s;
    for (GateId g : row.sequence.flat())
      s.push_back(static_cast<std::uint8_t>(g));
    fd.seqs.push_back(std::move(s));
    fd.shots.push_back(row.shots);
    fd.dark.push_back(row.dark_counts);
  }
  return fd;
}

// The optimizer explores unconstrained transfer matrices, so predicted
// probabilities can leave [0, 1]. A hard clamp would make the objective and
// its gradient inconsistent (the line search then stalls); instead extend
// log quadratically below a soft clip and add a smooth penalty outside
// [0, 1], keeping value and gradient consistent for any real p.
constexpr double kSoftClip = 1e-4;

// log z for z >= kSoftClip; second-order Taylor extension below, defined and
// smooth for all real z. d_out receives the derivative.
double soft_log(double z, double& d_out) {
  if (z >= kSoftClip) {
    d_out = 1.0 / z;
    return std::log(z);
  }
  const double d = z - kSoftClip;
  d_out = (1.0 - d / kSoftClip) / kSoftClip;
  return std::log(kSoftClip) + d / kSoftClip - 0.5 * d * d / (kSoftClip * kSoftClip);
}

// Forward/backward likelihood with the analytic gradient with respect to
// every process-matrix entry (and optionally the SPAM vectors).
double ll_and_grad(const std::array<qchan::Ptm, 3>& gates,
                   const Eigen::Vector4d& rho, const Eigen::Vector4d& effect,
                   const FlatData& fd, bool fit_spam, Eigen::VectorXd* grad) {
  if (grad) grad->setZero();
  double ll = 0.0;
  std::vector<Eigen::Vector4d> fwd;
  for (std::size_t r = 0; r < fd.seqs.size(); ++r) {
    const auto& s = fd.seqs[r];
    const std::size_t n = s.size();
    fwd.resize(n + 1);
    fwd[0] = rho;
    for (std::size_t k = 0; k < n; ++k) fwd[k + 1].noalias() = gates[s[k]] * fwd[k];

    const double p = effect.dot(fwd[n]);
    const double dark = fd.dark[r], shots = fd.shots[r];
    double dldp = 0.0, d = 0.0;
    if (dark > 0.0) {
      ll += dark * soft_log(p, d);
      dldp += dark * d;
    }
    if (shots - dark > 0.0) {
      ll += (shots - dark) * soft_log(1.0 - p, d);
      dldp -= (shots - dark) * d;
    }
    if (p < 0.0) {
      ll -= shots * p * p / (2.0 * kSoftClip);
      dldp -= shots * p / kSoftClip;
    } else if (p > 1.0) {
      ll -= shots * (p - 1.0) * (p - 1.0) / (2.0 * kSoftClip);
      dldp -= shots * (p - 1.0) / kSoftClip;
    }
    if (!grad) continue;
    Eigen::Vector4d b = effect;
    for (std::size_t k = n; k-- > 0;) {
      const int g = s[k];
      // d p / d (R_g)_{ab} = b_a * fwd[k]_b summed over occurrences of g.
      Eigen::Map<Eigen::Matrix<double, 4, 4, Eigen::RowMajor>> gblock(
          grad->data() + 16 * g);
      gblock.noalias() += dldp * (b * fwd[k].transpose());
      b = gates[g].transpose() * b;
    }
    if (fit_spam) {
      grad->segment<4>(48) += dldp * b;
      grad->segment<4>(52) += dldp * fwd[n];
    }
  }
  return ll;
}

void unpack_params(const Eigen::VectorXd& x, bool fit_spam,
                   std::array<qchan::Ptm, 3>& gates, Eigen::Vector4d& rho,
                   Eigen::Vector4d& effect) {
  for (int g = 0; g < 3; ++g)
    gates[g] = Eigen::Map<const Eigen::Matrix<double, 4, 4, Eigen::RowMajor>>(
        x.data() + 16 * g);
  if (fit_spam) {
    rho = x.segment<4>(48);
    effect = x.segment<4>(52);
  } else {
    rho = spam_ideal();
    effect = spam_ideal();
  }
}

Eigen::VectorXd pack_params(const GateSet& gs, bool fit_spam) {
  Eigen::VectorXd x(fit_spam ? 56 : 48);
  for (int g = 0; g < 3; ++g)
    Eigen::Map<Eigen::Matrix<double, 4, 4, Eigen::RowMajor>>(x.data() + 16 * g) =
        gs.gates[g];
  if (fit_spam) {
    x.segment<4>(48) = gs.rho;
    x.segment<4>(52) = gs.effect_s;
  }
  return x;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, int rank,
                               double* condition) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (condition) *condition = sv(0) / sv(rank - 1);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (int i = 0; i < rank && i < sv.size(); ++i) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

// Linear-inversion tomography from the fiducial-pair and single-gate blocks
// of the dataset; used to seed the full likelihood fit.
GateSet lgst_seed(const GstDataset& data) {
  std::unordered_map<std::string, double> prob;
  for (const auto& row : data.rows)
    if (row.shots > 0.0)
      prob[row.sequence.label()] = row.dark_counts / row.shots;

  const GateId x = GateId::sqrt_x, y = GateId::sqrt_y;
  const std::vector<GateString> fiducials = {{}, {x},       {y},
                                             {x, x}, {x, x, x}, {y, y, y}};
  auto lookup = [&](const GateString& gates) -> double {
    std::string label;
    append_run(label, gates);
    if (label.empty()) label = "{}";
    auto it = prob.find(label);
    if (it == prob.end())
      throw FitError("dataset is missing sequence required for linear inversion: " +
                     label);
    return it->second;
  };

  const GateSet ideal = ideal_gateset();
  auto apply = [&](const GateString& gates) {
    qchan::Ptm run = qchan::Ptm::Identity();
    for (GateId g : gates) run = ideal.gates[static_cast<int>(g)] * run;
    return run;
  };

  const int nf = static_cast<int>(fiducials.size());
  Eigen::MatrixXd a(4, nf);
  for (int i = 0; i < nf; ++i) a.col(i) = apply(fiducials[i]) * ideal.rho;

  Eigen::MatrixXd p0(nf, nf);
  std::array<Eigen::MatrixXd, 3> pg;
  pg.fill(Eigen::MatrixXd(nf, nf));
  for (int i = 0; i < nf; ++i)
    for (int j = 0; j < nf; ++j) {
      GateString base = fiducials[i];
      GateString meas = fiducials[j];
      GateString pair = base;
      pair.insert(pair.end(), meas.begin(), meas.end());
      p0(j, i) = lookup(pair);
      for (int g = 0; g < 3; ++g) {
        GateString mid = base;
        mid.push_back(static_cast<GateId>(g));
        mid.insert(mid.end(), meas.begin(), meas.end());
        pg[g](j, i) = lookup(mid);
      }
    }

  double cond_a = 0.0, cond_b = 0.0;
  const Eigen::MatrixXd a_pinv = pseudo_inverse(a, 4, &cond_a);
  const Eigen::MatrixXd b_hat = p0 * a_pinv;
  const Eigen::MatrixXd b_pinv = pseudo_inverse(b_hat, 4, &cond_b);
  if (cond_a > 1e8 || cond_b > 1e8)
    throw FitError("linear inversion is ill-conditioned");

  GateSet seed;
  for (int g = 0; g < 3; ++g) seed.gates[g] = b_pinv * pg[g] * a_pinv;
  seed.rho = ideal.rho;
  seed.effect_s = ideal.effect_s;
  return seed;
}

}  // namespace

GateSet gauge_optimize(const GateSet& gs, const GateSet& targets) {
  // Trace-preserving gauge: first row of the transform is pinned to
  // (1, 0, 0, 0) and the remaining 12 entries are optimized to bring the
  // gate set as close as possible to the targets in Frobenius norm.
  auto unpack = [](const Eigen::VectorXd& v) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    m(0, 0) = 1.0;
    for (int r = 1; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = v(4 * (r - 1) + c);
    return m;
  };
  auto objective = [&](const Eigen::VectorXd& v) {
    const Eigen::Matrix4d m = unpack(v);
    const double det = m.determinant();
    if (std::abs(det) < 1e-10) return 1e12;
    const Eigen::Matrix4d minv = m.inverse();
    double sum = 0.0;
    for (int g = 0; g < 3; ++g)
      sum += (m * gs.gates[g] * minv - targets.gates[g]).squaredNorm();
    return sum;
  };

  Eigen::VectorXd v0 = Eigen::VectorXd::Zero(12);
  v0(1) = v0(6) = v0(11) = 1.0;  // identity rows 1..3

  optim::NelderMeadOptions nm;
  nm.rel_tol = 1e-15;
  nm.abs_tol = 1e-18;
  nm.max_iter = 6000;
  Eigen::VectorXd best = v0;
  double best_val = objective(v0);
  for (int round = 0; round < 2; ++round) {
    auto res = optim::nelder_mead(objective, best,
                                  Eigen::VectorXd::Constant(12, 0.02), nm);
    if (res.value < best_val) {
      best_val = res.value;
      best = res.x;
    }
  }
  return gauge_transform(gs, unpack(best));
}

StandardFit fit_standard_gst(const GstDataset& data, const StandardOptions& opts) {
  if (data.rows.empty()) throw FitError("empty dataset");
  const FlatData fd = flatten(data);
  const GateSet targets = ideal_gateset();

  GateSet seed = lgst_seed(data);

  const bool fit_spam = opts.fit_spam;
  const int nparam = fit_spam ? 56 : 48;
  Eigen::VectorXd x0 = pack_params(seed, fit_spam);

  auto negll = [&](const Eigen::VectorXd& xv) {
    std::array<qchan::Ptm, 3> gates;
    Eigen::Vector4d rho, effect;
    unpack_params(xv, fit_spam, gates, rho, effect);
    return -ll_and_grad(gates, rho, effect, fd, fit_spam, nullptr);
  };
  auto negll_grad = [&](const Eigen::VectorXd& xv, Eigen::VectorXd& g) {
    std::array<qchan::Ptm, 3> gates;
    Eigen::Vector4d rho, effect;
    unpack_params(xv, fit_spam, gates, rho, effect);
    Eigen::VectorXd full(fit_spam ? 56 : 48);
    ll_and_grad(gates, rho, effect, fd, fit_spam, &full);
    g = -full;
  };

  optim::BfgsOptions bopt;
  bopt.rel_tol = opts.rel_tol;
  bopt.grad_tol = 1e-7;
  bopt.max_iter = opts.max_iter;
  auto res = optim::minimize_bfgs(negll, negll_grad, x0, bopt);
  if (!res.converged) throw FitError("standard fit failed to converge");

  StandardFit fit;
  {
    std::array<qchan::Ptm, 3> gates;
    Eigen::Vector4d rho, effect;
    unpack_params(res.x, fit_spam, gates, rho, effect);
    fit.raw_estimate.gates = gates;
    fit.raw_estimate.rho = rho;
    fit.raw_estimate.effect_s = effect;
  }
  fit.log_likelihood = -res.value;
  fit.iterations = res.iterations;
  fit.converged = res.converged;

  fit.estimate = opts.gauge_optimize ? gauge_optimize(fit.raw_estimate, targets)
                                     : fit.raw_estimate;

  for (int g = 0; g < 3; ++g) {
    fit.infidelity[g] = qchan::process_infidelity(targets.gates[g], fit.estimate.gates[g]);
    fit.diamond_bound[g] =
        qchan::diamond_error_bound(fit.estimate.gates[g], targets.gates[g]);
  }

  if (opts.uncertainties) {
    // Observed Fisher information of the gate entries at the gauge-fixed
    // estimate (the likelihood is gauge-invariant, so this is still the MLE),
    // propagated to each scalar metric by the delta method.
    const Eigen::Vector4d rho_u = fit.estimate.rho;
    const Eigen::Vector4d eff_u = fit.estimate.effect_s;
    auto grad_at = [&](const Eigen::VectorXd& xv, Eigen::VectorXd& g) {
      std::array<qchan::Ptm, 3> gates;
      for (int k = 0; k < 3; ++k)
        gates[k] = Eigen::Map<const Eigen::Matrix<double, 4, 4, Eigen::RowMajor>>(
            xv.data() + 16 * k);
      Eigen::VectorXd full(48);
      ll_and_grad(gates, rho_u, eff_u, fd, false, &full);
      g = full;
    };

    Eigen::VectorXd xg = pack_params(fit.estimate, false);
    const int ng = 48;
    Eigen::MatrixXd hess(ng, ng);
    const double h = 1e-5;
    Eigen::VectorXd gp(ng), gm(ng);
    for (int i = 0; i < ng; ++i) {
      Eigen::VectorXd xp = xg, xm = xg;
      xp(i) += h;
      xm(i) -= h;
      grad_at(xp, gp);
      grad_at(xm, gm);
      hess.col(i) = (gp - gm) / (2.0 * h);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    Eigen::MatrixXd fisher = -hess;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fisher);
    const double cutoff = 1e-10 * std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
    Eigen::VectorXd inv_ev = Eigen::VectorXd::Zero(ng);
    for (int i = 0; i < ng; ++i)
      if (es.eigenvalues()(i) > cutoff) inv_ev(i) = 1.0 / es.eigenvalues()(i);
    Eigen::MatrixXd cov = es.eigenvectors() * inv_ev.asDiagonal() *
                          es.eigenvectors().transpose();

    for (int g = 0; g < 3; ++g) {
      Eigen::VectorXd jac = Eigen::VectorXd::Zero(ng);
      Eigen::Map<Eigen::Matrix<double, 4, 4, Eigen::RowMajor>>(jac.data() + 16 * g) =
          -targets.gates[g] / 4.0;
      fit.infidelity_unc[g] = std::sqrt(std::max(jac.dot(cov * jac), 0.0));

      Eigen::VectorXd jd = Eigen::VectorXd::Zero(ng);
      const double hd = 1e-6;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
          qchan::Ptm up = fit.estimate.gates[g], dn = fit.estimate.gates[g];
          up(r, c) += hd;
          dn(r, c) -= hd;
          jd(16 * g + 4 * r + c) =
              (qchan::diamond_error_bound(up, targets.gates[g]) -
               qchan::diamond_error_bound(dn, targets.gates[g])) /
              (2.0 * hd);
        }
      fit.diamond_unc[g] = std::sqrt(std::max(jd.dot(cov * jd), 0.0));
    }
  }
  return fit;
}

// --- reporting ----------------------------------------------------------------

namespace {

std::string fmt(double v, const char* spec = "%.12g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

MetricsRow angle_row(std::string gate, double theta, double theta_unc) {
  MetricsRow row;
  row.gate = std::move(gate);
  const double h = 0.5 * theta;
  row.infidelity = std::sin(h) * std::sin(h);
  row.infidelity_unc = std::abs(0.5 * std::sin(theta)) * theta_unc;
  row.diamond = std::abs(std::sin(h));
  row.diamond_unc = std::abs(0.5 * std::cos(h)) * theta_unc;
  return row;
}

}  // namespace

MetricsTable report_metrics(const PhysicalParams& p, double dtheta_unc,
                            double theta_i_unc) {
  MetricsTable t;
  t.method = "physical";
  t.rows.push_back(angle_row("sqrtX/sqrtY", p.dtheta, dtheta_unc));
  t.rows.push_back(angle_row("I", p.theta_i, theta_i_unc));
  t.implied_extinction_db = dynamics::extinction_from_theta(p.theta_i);
  return t;
}

MetricsTable report_metrics(const PhysicalFit& fit) {
  return report_metrics(fit.params, fit.dtheta_interval.half_width(),
                        fit.theta_i_interval.half_width());
}

MetricsTable report_metrics(const StandardFit& fit) {
  MetricsTable t;
  t.method = "standard";
  const std::array<std::string, 3> names = {"sqrtX", "sqrtY", "I"};
  for (int g = 0; g < 3; ++g) {
    MetricsRow row;
    row.gate = names[g];
    row.infidelity = fit.infidelity[g];
    row.infidelity_unc = fit.infidelity_unc[g];
    row.diamond = fit.diamond_bound[g];
    row.diamond_unc = fit.diamond_unc[g];
    t.rows.push_back(std::move(row));
  }
  return t;
}

// --- file formats --------------------------------------------------------------

void write_dataset(const GstDataset& data, std::ostream& os) {
  os << "# mzmsim gate-sequence dataset\n";
  os << "# version = " << kVersion << "\n";
  os << "# seed = " << data.seed << "\n";
  os << "# nominal_shots = " << fmt(data.nominal_shots) << "\n";
  os << "# infinite_shots = " << (data.infinite_shots ? 1 : 0) << "\n";
  os << "# timestamp = " << data.timestamp << "\n";
  if (!data.provenance.empty()) os << "# provenance = " << data.provenance << "\n";
  os << "# columns: sequence shots dark_counts\n";
  for (const auto& row : data.rows)
    os << row.sequence.label() << ' ' << fmt(row.shots) << ' '
       << fmt(row.dark_counts) << '\n';
}

GstDataset read_dataset(std::istream& is) {
  GstDataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      std::string value = line.substr(eq + 1);
      auto trim = [](std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t\r");
        s = (b == std::string::npos) ? std::string() : s.substr(b, e - b + 1);
      };
      trim(key);
      trim(value);
      if (key == "seed") ds.seed = std::stoull(value);
      else if (key == "nominal_shots") ds.nominal_shots = std::stod(value);
      else if (key == "infinite_shots") ds.infinite_shots = value == "1" || value == "true";
      else if (key == "timestamp") ds.timestamp = value;
      else if (key == "provenance") ds.provenance = value;
      continue;
    }
    std::istringstream ss(line);
    std::string label;
    double shots = 0.0, dark = 0.0;
    if (!(ss >> label >> shots >> dark))
      throw std::invalid_argument("malformed dataset line " + std::to_string(lineno));
    if (shots <= 0.0 || dark < 0.0 || dark > shots)
      throw std::invalid_argument("invalid counts on dataset line " +
                                  std::to_string(lineno));
    SequenceCounts row;
    row.sequence = parse_sequence_label(label);
    row.shots = shots;
    row.dark_counts = dark;
    ds.rows.push_back(std::move(row));
  }
  return ds;
}

void write_metrics_csv(const MetricsTable& metrics, std::ostream& os) {
  os << "# method = " << metrics.method << "\n";
  if (metrics.implied_extinction_db)
    os << "# implied_extinction_db = " << fmt(*metrics.implied_extinction_db) << "\n";
  os << "gate,process_infidelity,process_infidelity_unc,"
        "diamond_error_bound,diamond_error_bound_unc\n";
  for (const auto& row : metrics.rows)
    os << row.gate << ',' << fmt(row.infidelity) << ',' << fmt(row.infidelity_unc)
       << ',' << fmt(row.diamond) << ',' << fmt(row.diamond_unc) << '\n';
}

namespace {

void write_interval(std::ostream& os, const std::string& name, double value,
                    const ParamInterval& iv) {
  os << name << " = " << fmt(value) << "\n";
  if (iv.unbounded) {
    os << name << "_unbounded = 1\n";
  } else {
    os << name << "_lo = " << fmt(iv.lower) << "\n";
    os << name << "_hi = " << fmt(iv.upper) << "\n";
    os << name << "_unc = " << fmt(iv.half_width()) << "\n";
  }
}

}  // namespace

void write_fit_report(const PhysicalFit& fit, const MetricsTable& metrics,
                      std::ostream& os) {
  os << "# mzmsim fit report\n";
  os << "version = " << kVersion << "\n";
  os << "method = physical\n";
  os << "converged = " << (fit.converged ? 1 : 0) << "\n";
  os << "iterations = " << fit.iterations << "\n";
  os << "log_likelihood = " << fmt(fit.log_likelihood) << "\n";
  os << "common_dtheta = " << (fit.common_dtheta ? 1 : 0) << "\n";
  write_interval(os, "dtheta_rad", fit.params.dtheta, fit.dtheta_interval);
  write_interval(os, "theta_i_rad", fit.params.theta_i, fit.theta_i_interval);
  write_interval(os, "phi_i_rad", fit.params.phi_i, fit.phi_i_interval);
  if (metrics.implied_extinction_db)
    os << "implied_extinction_db = " << fmt(*metrics.implied_extinction_db) << "\n";
  os << "\n";
  write_metrics_csv(metrics, os);
}

void write_fit_report(const StandardFit& fit, const MetricsTable& metrics,
                      std::ostream& os) {
  os << "# mzmsim fit report\n";
  os << "version = " << kVersion << "\n";
  os << "method = standard\n";
  os << "converged = " << (fit.converged ? 1 : 0) << "\n";
  os << "iterations = " << fit.iterations << "\n";
  os << "log_likelihood = " << fmt(fit.log_likelihood) << "\n";
  const std::array<std::string, 3> names = {"Gx", "Gy", "Gi"};
  for (int g = 0; g < 3; ++g)
    for (int r = 0; r < 4; ++r) {
      os << "gate_" << names[g] << "_row" << r << " =";
      for (int c = 0; c < 4; ++c)
        os << ' ' << fmt(fit.estimate.gates[g](r, c), "%.9g");
      os << "\n";
    }
  os << "rho =";
  for (int i = 0; i < 4; ++i) os << ' ' << fmt(fit.estimate.rho(i), "%.9g");
  os << "\n";
  os << "effect_s =";
  for (int i = 0; i < 4; ++i) os << ' ' << fmt(fit.estimate.effect_s(i), "%.9g");
  os << "\n\n";
  write_metrics_csv(metrics, os);
}

}  // namespace mzmsim::tomo
