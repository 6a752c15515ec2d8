#pragma once

#include <Eigen/Dense>

#include <complex>

namespace mzmsim::qchan {

using Complex = std::complex<double>;
using Unitary2 = Eigen::Matrix2cd;
// Pauli transfer matrix in the normalized Pauli basis {I,X,Y,Z}/sqrt(2).
using Ptm = Eigen::Matrix4d;

/// Rotation angle and equatorial axis azimuth of a single-qubit gate:
/// U(theta, phi) = cos(theta/2) I - i sin(theta/2) (cos(phi) X + sin(phi) Y).
struct GateAngles {
  double theta = 0.0;
  double phi = 0.0;
  GateAngles canonicalized() const;  // both wrapped into [0, 2*pi)
};

const Unitary2& pauli(int j);  // j in 0..3 for I, X, Y, Z

Unitary2 unitary_from_angles(const GateAngles& g);
Unitary2 unitary_from_angles(double theta, double phi);

bool is_unitary(const Eigen::Matrix2cd& m, double tol = 1e-12);

/// R_jk = (1/2) tr(sigma_j U sigma_k U^dag).
Ptm ptm_from_unitary(const Unitary2& u);

/// 1 - tr(target^T estimate) / 4. Equals sin^2(dtheta/2) for two rotations
/// about the same axis differing by dtheta.
double process_infidelity(const Ptm& estimate, const Ptm& target);
double process_infidelity(const Unitary2& estimate, const Unitary2& target);

/// Half diamond distance between two unitary channels: sin(spread/2) where
/// spread is the eigenphase spread of U^dag V after global-phase removal.
double diamond_error_unitary(const Unitary2& u, const Unitary2& v);

/// Choi matrix J = (1/d^2) sum_ij E(|i><j|) (x) |i><j| of the channel with
/// transfer matrix r (d = 2, trace 1/d).
Eigen::Matrix4cd choi_from_ptm(const Ptm& r);

/// Upper bound on the half diamond distance: half the trace norm of the
/// Choi difference times the dimension. Coincides with diamond_error_unitary
/// for unitary pairs.
double diamond_error_bound(const Ptm& estimate, const Ptm& target);

}  // namespace mzmsim::qchan
