#include "mzmsim/qchan.hpp"

#include <cmath>
#include <numbers>

namespace mzmsim::qchan {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_2pi(double x) {
  double w = std::fmod(x, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  return w;
}

}  // namespace

GateAngles GateAngles::canonicalized() const {
  return GateAngles{wrap_2pi(theta), wrap_2pi(phi)};
}

const Unitary2& pauli(int j) {
  using namespace std::complex_literals;
  static const Unitary2 sigma[4] = {
      (Unitary2() << 1, 0, 0, 1).finished(),
      (Unitary2() << 0, 1, 1, 0).finished(),
      (Unitary2() << 0, -1i, 1i, 0).finished(),
      (Unitary2() << 1, 0, 0, -1).finished()};
  return sigma[j];
}

Unitary2 unitary_from_angles(double theta, double phi) {
  using namespace std::complex_literals;
  const double c = std::cos(0.5 * theta);
  const double s = std::sin(0.5 * theta);
  Unitary2 axis = std::cos(phi) * pauli(1) + std::sin(phi) * pauli(2);
  return c * pauli(0) - 1i * s * axis;
}

Unitary2 unitary_from_angles(const GateAngles& g) {
  return unitary_from_angles(g.theta, g.phi);
}

bool is_unitary(const Eigen::Matrix2cd& m, double tol) {
  return (m.adjoint() * m - Eigen::Matrix2cd::Identity()).cwiseAbs().maxCoeff() <= tol;
}

Ptm ptm_from_unitary(const Unitary2& u) {
  Ptm r;
  const Unitary2 ud = u.adjoint();
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k < 4; ++k)
      r(j, k) = 0.5 * (pauli(j) * u * pauli(k) * ud).trace().real();
  return r;
}

double process_infidelity(const Ptm& estimate, const Ptm& target) {
  return 1.0 - (target.transpose() * estimate).trace() / 4.0;
}

double process_infidelity(const Unitary2& estimate, const Unitary2& target) {
  const Complex tr = (target.adjoint() * estimate).trace();
  return 1.0 - 0.25 * std::norm(tr);
}

double diamond_error_unitary(const Unitary2& u, const Unitary2& v) {
  Eigen::ComplexEigenSolver<Eigen::Matrix2cd> es(u.adjoint() * v, false);
  const double a = std::arg(es.eigenvalues()[0]);
  const double b = std::arg(es.eigenvalues()[1]);
  double spread = std::abs(a - b);
  if (spread > std::numbers::pi) spread = kTwoPi - spread;
  return std::sin(0.5 * spread);
}

Eigen::Matrix4cd choi_from_ptm(const Ptm& r) {
  Eigen::Matrix4cd j = Eigen::Matrix4cd::Zero();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      if (r(a, b) == 0.0) continue;
      Eigen::Matrix2cd right = pauli(b).transpose();
      Eigen::Matrix4cd kron;
      for (int m = 0; m < 2; ++m)
        for (int n = 0; n < 2; ++n)
          kron.block<2, 2>(2 * m, 2 * n) = pauli(a)(m, n) * right;
      j += (r(a, b) / 8.0) * kron;
    }
  return j;
}

double diamond_error_bound(const Ptm& estimate, const Ptm& target) {
  Eigen::Matrix4cd dj = choi_from_ptm(estimate) - choi_from_ptm(target);
  dj = 0.5 * (dj + dj.adjoint().eval());  // difference is Hermitian up to rounding
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> es(dj);
  return es.eigenvalues().cwiseAbs().sum();
}

}  // namespace mzmsim::qchan
