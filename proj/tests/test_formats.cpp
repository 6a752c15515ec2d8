#include "doctest.h"

#include "mzmsim/dynamics.hpp"
#include "mzmsim/photonics.hpp"
#include "mzmsim/tomography.hpp"

#include <sstream>
#include <string>

using namespace mzmsim;

TEST_CASE("metrics CSV golden output") {
  tomo::MetricsTable t;
  t.method = "physical";
  t.implied_extinction_db = 25.5;
  t.rows.push_back({"sqrtX/sqrtY", 0.00023, 1e-05, 0.0152, 0.0005});
  t.rows.push_back({"I", 0.00162, 2e-05, 0.0403, 0.001});
  std::ostringstream os;
  tomo::write_metrics_csv(t, os);
  CHECK(os.str() ==
        "# method = physical\n"
        "# implied_extinction_db = 25.5\n"
        "gate,process_infidelity,process_infidelity_unc,"
        "diamond_error_bound,diamond_error_bound_unc\n"
        "sqrtX/sqrtY,0.00023,1e-05,0.0152,0.0005\n"
        "I,0.00162,2e-05,0.0403,0.001\n");
}

TEST_CASE("dataset reader accepts comments, blank lines, and metadata") {
  const std::string text =
      "# mzmsim dataset\n"
      "# seed = 77\n"
      "# nominal_shots = 500\n"
      "# infinite_shots = 0\n"
      "# timestamp = run-2024-11-05\n"
      "# provenance = unit-test fixture\n"
      "\n"
      "{} 500 498\n"
      "Gx 500 251\n"
      "(GxGy)^4 500 260\n";
  std::istringstream is(text);
  const tomo::GstDataset ds = tomo::read_dataset(is);
  CHECK(ds.seed == 77);
  CHECK(ds.nominal_shots == 500.0);
  CHECK_FALSE(ds.infinite_shots);
  CHECK(ds.timestamp == "run-2024-11-05");
  CHECK(ds.provenance == "unit-test fixture");
  REQUIRE(ds.rows.size() == 3);
  CHECK(ds.rows[0].sequence.label() == "{}");
  CHECK(ds.rows[0].dark_counts == 498.0);
  CHECK(ds.rows[2].sequence.label() == "(GxGy)^4");
  CHECK(ds.rows[2].sequence.flat().size() == 8);
}

TEST_CASE("dataset writer emits parseable metadata headers") {
  tomo::GstDataset ds;
  ds.seed = 12345;
  ds.nominal_shots = 100;
  ds.infinite_shots = true;
  ds.timestamp = "fixture";
  ds.provenance = "synthetic";
  tomo::SequenceCounts row;
  row.sequence = tomo::parse_sequence_label("GxGy");
  row.shots = 100;
  row.dark_counts = 12.5;
  ds.rows.push_back(row);
  std::ostringstream os;
  tomo::write_dataset(ds, os);
  const std::string text = os.str();
  CHECK(text.find("# seed = 12345") != std::string::npos);
  CHECK(text.find("# infinite_shots = 1") != std::string::npos);
  CHECK(text.find("# timestamp = fixture") != std::string::npos);
  CHECK(text.find("GxGy 100 12.5\n") != std::string::npos);
}

TEST_CASE("standard fit report lists every transfer-matrix row") {
  tomo::StandardFit fit;
  fit.estimate = tomo::ideal_gateset();
  fit.raw_estimate = fit.estimate;
  fit.converged = true;
  fit.log_likelihood = -1.5;
  tomo::MetricsTable t;
  t.method = "standard";
  t.rows.push_back({"sqrtX", 0.0, 0.0, 0.0, 0.0});
  std::ostringstream os;
  tomo::write_fit_report(fit, t, os);
  const std::string text = os.str();
  for (const char* key :
       {"method = standard", "converged = 1", "gate_Gx_row0", "gate_Gy_row3",
        "gate_Gi_row2", "rho =", "effect_s =", "log_likelihood = -1.5"})
    CHECK(text.find(key) != std::string::npos);
}

TEST_CASE("transmission and Rabi CSV share the grid layout") {
  photonics::DeviceSpec dev;  // lossless 50/50 by default
  const photonics::TransmissionMap map =
      photonics::transmission_map(dev, {0.0, 12.0}, {0.0});
  std::ostringstream ms, rs;
  photonics::write_map_csv(map, ms);
  photonics::write_rabi_csv(map, rs);
  // Header row = v2 grid; rows lead with v1. Power 1 at the origin.
  CHECK(ms.str().substr(0, 2) == ",0");
  CHECK(ms.str().find("\n0,1\n") != std::string::npos);
  CHECK(rs.str().substr(0, 2) == ",0");
  CHECK(rs.str().find("\n0,1\n") != std::string::npos);
  // cos^2(pi/4) = 0.5 transmission, rabi = sqrt(0.5).
  CHECK(ms.str().find("\n12,0.5\n") != std::string::npos);
  CHECK(rs.str().find("\n12,0.707106781\n") != std::string::npos);
}

TEST_CASE("histogram CSV records the noise configuration and samples") {
  dynamics::NoiseModel noise;
  noise.energy_jitter_rel = 0.006;
  noise.drift.enabled = true;
  std::ostringstream os;
  dynamics::write_histogram_csv({1.0, 0.9975}, dynamics::PulseShape{}, noise,
                                2024, os);
  const std::string text = os.str();
  CHECK(text.find("# seed = 2024") != std::string::npos);
  CHECK(text.find("# samples = 2") != std::string::npos);
  CHECK(text.find("# energy_jitter_rel = 0.006") != std::string::npos);
  CHECK(text.find("# drift_enabled = true") != std::string::npos);
  CHECK(text.find("\n1\n0.9975\n") != std::string::npos);
}
