#include "doctest.h"

#include "mzmsim/dynamics.hpp"
#include "mzmsim/tomography.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

using namespace mzmsim;
using namespace mzmsim::tomo;

namespace {
constexpr double kPi = std::numbers::pi;

dynamics::NoiseModel no_noise() {
  dynamics::NoiseModel n;
  n.energy_jitter_rel = 0.0;
  n.drift.enabled = false;
  return n;
}

GstDataset exact_dataset(const PhysicalParams& truth, int max_power = 4,
                         double shots = 1000.0, std::uint64_t seed = 1) {
  return simulate_dataset(make_design(max_power), make_truth(truth, no_noise()),
                          shots, seed, /*infinite_shots=*/true);
}
}  // namespace

TEST_CASE("sequence labels survive a parse round trip") {
  SequenceSpec seq;
  seq.items.push_back({{GateId::sqrt_x, GateId::sqrt_x}, 1});
  seq.items.push_back({{GateId::sqrt_x, GateId::sqrt_y, GateId::idle}, 4});
  seq.items.push_back({{GateId::sqrt_y}, 1});
  CHECK(seq.label() == "GxGx(GxGyGi)^4Gy");
  const SequenceSpec parsed = parse_sequence_label(seq.label());
  CHECK(parsed.label() == seq.label());
  CHECK(parsed.flat() == seq.flat());
  CHECK(parse_sequence_label("{}").flat().empty());
  CHECK(parse_sequence_label("{}").label() == "{}");
}

TEST_CASE("malformed sequence labels are rejected") {
  CHECK_THROWS_AS(parse_sequence_label("Gz"), std::invalid_argument);
  CHECK_THROWS_AS(parse_sequence_label("G"), std::invalid_argument);
  CHECK_THROWS_AS(parse_sequence_label("(Gx"), std::invalid_argument);
  CHECK_THROWS_AS(parse_sequence_label("(Gx)"), std::invalid_argument);
  CHECK_THROWS_AS(parse_sequence_label("(Gx)^"), std::invalid_argument);
  CHECK_THROWS_AS(parse_sequence_label("(Gx)^0"), std::invalid_argument);
  CHECK_THROWS_AS(parse_sequence_label("()^2"), std::invalid_argument);
}

TEST_CASE("design matches an independently generated label set") {
  const std::vector<std::string> fids = {"",     "Gx",     "Gy",
                                         "GxGx", "GxGxGx", "GyGyGy"};
  const std::vector<std::string> germs = {"Gx",     "Gy",   "Gi",   "GxGy",
                                          "GxGxGy", "GxGi", "GyGi", "GxGyGi"};
  const std::vector<int> germ_len = {1, 1, 1, 2, 3, 2, 2, 3};

  std::set<std::string> expected;
  for (const auto& a : fids)
    for (const auto& b : fids)
      expected.insert(a + b == "" ? "{}" : a + b);
  for (std::size_t g = 0; g < germs.size(); ++g)
    for (int p = 1; p <= 16 && p * germ_len[g] <= 16; p *= 2) {
      const std::string mid =
          p == 1 ? germs[g] : "(" + germs[g] + ")^" + std::to_string(p);
      for (const auto& a : fids)
        for (const auto& b : fids) expected.insert(a + mid + b);
    }

  const GstDesign design = make_design(4);
  std::set<std::string> got;
  for (const auto& s : design.sequences) CHECK(got.insert(s.label()).second);
  CHECK(got == expected);
  CHECK(design.fiducials.size() == 6);
  CHECK(design.germs.size() == 8);
}

TEST_CASE("design respects the power ladder and the germ-section cap") {
  const GstDesign design = make_design(4);
  std::set<int> gx_powers, gxgyi_powers;
  for (const auto& s : design.sequences) {
    if (s.germ_index < 0) continue;
    const int len = static_cast<int>(design.germs[s.germ_index].size());
    CHECK(s.germ_power * len <= 16);
    if (s.germ_index == 0) gx_powers.insert(s.germ_power);
    if (s.germ_index == 7) gxgyi_powers.insert(s.germ_power);
  }
  CHECK(gx_powers == std::set<int>{1, 2, 4, 8, 16});
  CHECK(gxgyi_powers == std::set<int>{1, 2, 4});  // length-3 germ caps at 16/3

  CHECK(make_design(0).sequences.size() < design.sequences.size());
  CHECK_THROWS_AS(make_design(-1), std::invalid_argument);
}

TEST_CASE("physical gate set matches the unitary construction") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> small(-0.2, 0.2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  for (int n = 0; n < 20; ++n) {
    const PhysicalParams p{small(rng), std::abs(small(rng)), phase(rng)};
    const GateSet gs = gateset_from_physical(p);
    const qchan::Ptm rx = qchan::ptm_from_unitary(
        qchan::unitary_from_angles(kPi / 2.0 + p.dtheta, 0.0));
    const qchan::Ptm ry = qchan::ptm_from_unitary(
        qchan::unitary_from_angles(kPi / 2.0 + p.dtheta, kPi / 2.0));
    const qchan::Ptm ri = qchan::ptm_from_unitary(
        qchan::unitary_from_angles(p.theta_i, p.phi_i));
    CHECK((gs.gates[0] - rx).norm() < 1e-12);
    CHECK((gs.gates[1] - ry).norm() < 1e-12);
    CHECK((gs.gates[2] - ri).norm() < 1e-12);
  }
}

TEST_CASE("sequence probabilities follow the transfer-matrix product") {
  const GateSet gs = gateset_from_physical({0.05, 0.1, 1.0});
  const SequenceSpec seq = parse_sequence_label("Gy(GxGi)^3Gx");
  Eigen::Vector4d v = gs.rho;
  for (GateId g : seq.flat()) v = gs.gates[static_cast<int>(g)] * v;
  CHECK(sequence_prob_s(gs, seq) ==
        doctest::Approx(gs.effect_s.dot(v)).epsilon(1e-14));
  CHECK(sequence_prob_s(gs, SequenceSpec{}) == doctest::Approx(1.0));
}

TEST_CASE("ideal gate set reproduces textbook survival probabilities") {
  const GateSet gs = ideal_gateset();
  CHECK(sequence_prob_s(gs, parse_sequence_label("Gx")) == doctest::Approx(0.5));
  CHECK(sequence_prob_s(gs, parse_sequence_label("GxGx")) ==
        doctest::Approx(0.0));
  CHECK(sequence_prob_s(gs, parse_sequence_label("GxGxGxGx")) ==
        doctest::Approx(1.0));
  CHECK(sequence_prob_s(gs, parse_sequence_label("GxGyGxGy")) ==
        doctest::Approx(0.5));
  CHECK(sequence_prob_s(gs, parse_sequence_label("(Gi)^16")) ==
        doctest::Approx(1.0));
}

TEST_CASE("noise-free infinite-shot datasets carry exact probabilities") {
  const GstDataset ds = exact_dataset(PhysicalParams{0.0, 0.0, 0.0});
  auto find = [&](const std::string& label) -> const SequenceCounts& {
    for (const auto& row : ds.rows)
      if (row.sequence.label() == label) return row;
    REQUIRE(false);
    return ds.rows.front();
  };
  CHECK(find("{}").dark_counts == doctest::Approx(1000.0));
  CHECK(find("GxGx").dark_counts == doctest::Approx(0.0));
  CHECK(find("Gx").dark_counts == doctest::Approx(500.0));
  CHECK(ds.infinite_shots);
  CHECK(ds.nominal_shots == doctest::Approx(1000.0));
}

TEST_CASE("finite-shot sampling is seeded and reproducible") {
  const GstDesign design = make_design(1);
  const TruthModel truth = make_truth({0.01, 0.05, 1.0}, no_noise());
  const GstDataset a = simulate_dataset(design, truth, 200, 42);
  const GstDataset b = simulate_dataset(design, truth, 200, 42);
  const GstDataset c = simulate_dataset(design, truth, 200, 43);
  REQUIRE(a.rows.size() == b.rows.size());
  bool all_equal_ab = true, all_equal_ac = true;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    all_equal_ab &= a.rows[i].dark_counts == b.rows[i].dark_counts;
    all_equal_ac &= a.rows[i].dark_counts == c.rows[i].dark_counts;
    CHECK(a.rows[i].dark_counts >= 0.0);
    CHECK(a.rows[i].dark_counts <= a.rows[i].shots);
  }
  CHECK(all_equal_ab);
  CHECK_FALSE(all_equal_ac);
}

TEST_CASE("probabilities are invariant under gauge transformations") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> eps(-0.05, 0.05);
  const GateSet gs = gateset_from_physical({-0.03, 0.08, 3.0});
  const GstDesign design = make_design(2);
  for (int n = 0; n < 20; ++n) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int r = 1; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) += eps(rng);
    const GateSet gt = gauge_transform(gs, m);
    for (std::size_t k = 0; k < design.sequences.size(); k += 37) {
      const auto& seq = design.sequences[k];
      CHECK(sequence_prob_s(gt, seq) ==
            doctest::Approx(sequence_prob_s(gs, seq)).epsilon(1e-9));
    }
  }
}

TEST_CASE("gauge optimization undoes a synthetic gauge twist") {
  const GateSet targets = ideal_gateset();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(1, 2) += 0.04;
  m(2, 0) -= 0.03;
  m(3, 3) += 0.05;
  const GateSet twisted = gauge_transform(targets, m);
  double before = 0.0;
  for (int g = 0; g < 3; ++g)
    before += (twisted.gates[g] - targets.gates[g]).norm();
  CHECK(before > 1e-3);

  const GateSet fixed = gauge_optimize(twisted, targets);
  for (int g = 0; g < 3; ++g)
    CHECK((fixed.gates[g] - targets.gates[g]).norm() < 1e-5);
}

TEST_CASE("log likelihood peaks at the generating model") {
  const PhysicalParams truth{-0.02, 0.07, 2.5};
  const GstDataset ds = exact_dataset(truth, 2);
  const double at_truth = log_likelihood(gateset_from_physical(truth), ds);
  for (const PhysicalParams& other :
       {PhysicalParams{-0.02 + 5e-3, 0.07, 2.5},
        PhysicalParams{-0.02, 0.07 + 5e-3, 2.5},
        PhysicalParams{-0.02, 0.07, 2.6}, PhysicalParams{0.0, 0.0, 0.0}}) {
    CHECK(log_likelihood(gateset_from_physical(other), ds) < at_truth);
  }
}

TEST_CASE("physical fit recovers exact-data parameters to 1e-6") {
  const PhysicalParams truth{-0.0301, 0.0804, 3.16};
  const PhysicalFit fit = fit_physical_gst(exact_dataset(truth));
  CHECK(fit.converged);
  CHECK(std::abs(fit.params.dtheta - truth.dtheta) < 1e-6);
  CHECK(std::abs(fit.params.theta_i - truth.theta_i) < 1e-6);
  CHECK(std::abs(fit.params.phi_i - truth.phi_i) < 1e-6);
  CHECK(fit.dtheta_interval.lower < truth.dtheta);
  CHECK(fit.dtheta_interval.upper > truth.dtheta);
  CHECK(fit.theta_i_interval.lower < truth.theta_i);
  CHECK(fit.theta_i_interval.upper > truth.theta_i);
  CHECK_FALSE(fit.phi_i_interval.unbounded);
}

TEST_CASE("physical fit flags the idle phase as unbounded when there is no idle error") {
  const PhysicalFit fit = fit_physical_gst(exact_dataset({0.0, 0.0, 0.0}, 2));
  CHECK(fit.converged);
  CHECK(std::abs(fit.params.dtheta) < 1e-7);
  CHECK(std::abs(fit.params.theta_i) < 1e-5);
  CHECK(fit.phi_i_interval.unbounded);
  CHECK(fit.phi_i_interval.lower == doctest::Approx(0.0));
  CHECK(fit.phi_i_interval.upper == doctest::Approx(2.0 * kPi));
}

TEST_CASE("physical fit on sampled data stays within its own intervals") {
  const PhysicalParams truth{-0.0301, 0.0804, 3.16};
  const GstDataset ds = simulate_dataset(
      make_design(4), make_truth(truth, no_noise()), 1000, 2026);
  const PhysicalFit fit = fit_physical_gst(ds);
  CHECK(fit.converged);
  CHECK(std::abs(fit.params.dtheta - truth.dtheta) <
        4.0 * fit.dtheta_interval.half_width());
  CHECK(std::abs(fit.params.theta_i - truth.theta_i) <
        4.0 * fit.theta_i_interval.half_width());
  CHECK(std::abs(fit.params.phi_i - truth.phi_i) <
        4.0 * fit.phi_i_interval.half_width());
  CHECK(fit.dtheta_interval.half_width() > 0.0);
  CHECK(fit.dtheta_interval.half_width() < 0.01);
}

TEST_CASE("standard fit is exact on ideal data") {
  const GstDataset ds = exact_dataset({0.0, 0.0, 0.0}, 2);
  const StandardFit fit = fit_standard_gst(ds);
  CHECK(fit.converged);
  for (int g = 0; g < 3; ++g) {
    CHECK(fit.infidelity[g] < 1e-8);
    CHECK(fit.diamond_bound[g] < 1e-4);
  }
}

TEST_CASE("standard fit reproduces the data and tracks the physical error scale") {
  const PhysicalParams truth{-0.0301, 0.0804, 3.16};
  const GstDataset ds = exact_dataset(truth);
  const StandardFit fit = fit_standard_gst(ds);
  CHECK(fit.converged);

  // The fitted model must explain exact data essentially perfectly.
  const double ll_truth = log_likelihood(gateset_from_physical(truth), ds);
  CHECK(fit.log_likelihood >= ll_truth - 1e-2);
  double max_dev = 0.0;
  for (const auto& row : ds.rows) {
    const double p_fit = sequence_prob_s(fit.raw_estimate, row.sequence);
    max_dev = std::max(max_dev,
                       std::abs(p_fit - row.dark_counts / row.shots));
  }
  CHECK(max_dev < 1e-3);

  // Gauge-fixed metrics sit at the physical error scale (the gauge choice
  // moves them by O(1) factors, as in any unconstrained-gauge report).
  const double infid_xy = std::pow(std::sin(truth.dtheta / 2.0), 2);
  const double infid_i = std::pow(std::sin(truth.theta_i / 2.0), 2);
  CHECK(fit.infidelity[0] > 0.2 * infid_xy);
  CHECK(fit.infidelity[0] < 5.0 * infid_xy);
  CHECK(fit.infidelity[1] > 0.2 * infid_xy);
  CHECK(fit.infidelity[1] < 5.0 * infid_xy);
  CHECK(fit.infidelity[2] > 0.5 * infid_i);
  CHECK(fit.infidelity[2] < 2.0 * infid_i);
  CHECK(fit.diamond_bound[2] > 0.5 * std::sin(truth.theta_i / 2.0));
  CHECK(fit.diamond_bound[2] < 2.0 * std::sin(truth.theta_i / 2.0));
}

TEST_CASE("standard fit reports finite uncertainties on sampled data") {
  const GstDataset ds = simulate_dataset(
      make_design(2), make_truth({-0.0301, 0.0804, 3.16}, no_noise()), 1000, 7);
  const StandardFit fit = fit_standard_gst(ds);
  for (int g = 0; g < 3; ++g) {
    CHECK(std::isfinite(fit.infidelity_unc[g]));
    CHECK(fit.infidelity_unc[g] > 0.0);
    CHECK(fit.infidelity_unc[g] < 1e-2);
    CHECK(std::isfinite(fit.diamond_unc[g]));
    CHECK(fit.diamond_unc[g] < 0.1);
  }
}

TEST_CASE("degenerate data trips the linear-inversion condition guard") {
  GstDataset flat;
  flat.nominal_shots = 1000;
  for (const auto& seq : make_design(1).sequences) {
    SequenceCounts row;
    row.sequence = seq;
    row.shots = 1000;
    row.dark_counts = 500;
    flat.rows.push_back(row);
  }
  CHECK_THROWS_AS(fit_standard_gst(flat), FitError);
}

TEST_CASE("datasets survive a write/read round trip byte for byte") {
  const GstDataset ds = simulate_dataset(
      make_design(0), make_truth({0.01, 0.03, 0.5}, no_noise()), 250, 99);
  std::ostringstream first;
  write_dataset(ds, first);
  std::istringstream in(first.str());
  const GstDataset back = read_dataset(in);
  REQUIRE(back.rows.size() == ds.rows.size());
  CHECK(back.seed == ds.seed);
  CHECK(back.nominal_shots == ds.nominal_shots);
  CHECK(back.infinite_shots == ds.infinite_shots);
  CHECK(back.timestamp == ds.timestamp);
  CHECK(back.provenance == ds.provenance);
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    CHECK(back.rows[i].sequence.label() == ds.rows[i].sequence.label());
    CHECK(back.rows[i].shots == ds.rows[i].shots);
    CHECK(back.rows[i].dark_counts == ds.rows[i].dark_counts);
  }
  std::ostringstream second;
  write_dataset(back, second);
  CHECK(second.str() == first.str());
}

TEST_CASE("dataset reader rejects malformed rows") {
  std::istringstream bad1("Gx 100\n");
  CHECK_THROWS_AS(read_dataset(bad1), std::invalid_argument);
  std::istringstream bad2("Gx 100 200\n");
  CHECK_THROWS_AS(read_dataset(bad2), std::invalid_argument);
  std::istringstream bad3("Gq 100 50\n");
  CHECK_THROWS_AS(read_dataset(bad3), std::invalid_argument);
}

TEST_CASE("closed-form metrics from the physical parameters") {
  const MetricsTable t = report_metrics(PhysicalParams{-0.0301, 0.0804, 3.16},
                                        1e-3, 2e-3);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].gate == "sqrtX/sqrtY");
  CHECK(t.rows[0].infidelity == doctest::Approx(2.264787e-4).epsilon(1e-5));
  CHECK(t.rows[0].diamond == doctest::Approx(1.504943e-2).epsilon(1e-5));
  CHECK(t.rows[1].gate == "I");
  CHECK(t.rows[1].infidelity == doctest::Approx(1.615172e-3).epsilon(1e-5));
  CHECK(t.rows[1].diamond == doctest::Approx(4.018917e-2).epsilon(1e-5));
  CHECK(t.rows[0].infidelity_unc ==
        doctest::Approx(std::abs(std::sin(-0.0301) / 2.0) * 1e-3).epsilon(1e-9));
  CHECK(t.rows[1].diamond_unc ==
        doctest::Approx(std::abs(std::cos(0.0402) / 2.0) * 2e-3).epsilon(1e-9));
  REQUIRE(t.implied_extinction_db.has_value());
  CHECK(*t.implied_extinction_db == doctest::Approx(25.817).epsilon(1e-3));
}

TEST_CASE("fit reports and metrics files carry the required keys") {
  const PhysicalFit fit = fit_physical_gst(exact_dataset({-0.01, 0.05, 1.0}, 1));
  const MetricsTable metrics = report_metrics(fit);
  std::ostringstream report;
  write_fit_report(fit, metrics, report);
  const std::string text = report.str();
  for (const char* key :
       {"method = physical", "converged = 1", "dtheta_rad", "theta_i_rad",
        "phi_i_rad", "implied_extinction_db", "process_infidelity"})
    CHECK(text.find(key) != std::string::npos);

  std::ostringstream csv;
  write_metrics_csv(metrics, csv);
  CHECK(csv.str().find("gate,process_infidelity,process_infidelity_unc,"
                       "diamond_error_bound,diamond_error_bound_unc") !=
        std::string::npos);
}
