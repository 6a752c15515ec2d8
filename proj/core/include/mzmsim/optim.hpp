#pragma once

#include <Eigen/Dense>

#include <functional>

namespace mzmsim::optim {

using Objective = std::function<double(const Eigen::VectorXd&)>;
using Gradient = std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct NelderMeadOptions {
  double rel_tol = 1e-12;   // on the simplex value spread, relative to |f_best|
  double abs_tol = 1e-300;  // floor so minima at 0 can converge
  int max_iter = 500;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Downhill simplex minimizer. `steps` sets the initial simplex edge per axis.
NelderMeadResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& steps,
                             const NelderMeadOptions& opts = {});
NelderMeadResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                             double step, const NelderMeadOptions& opts = {});

struct BfgsOptions {
  double rel_tol = 1e-10;  // on the objective change between accepted steps
  double grad_tol = 1e-6;  // infinity norm; stalls below this count as converged
  int max_iter = 2000;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Quasi-Newton minimizer with an analytic gradient and backtracking line search.
BfgsResult minimize_bfgs(const Objective& f, const Gradient& grad,
                         const Eigen::VectorXd& x0, const BfgsOptions& opts = {});

// Adaptive Simpson quadrature of f over [a, b].
double integrate_adaptive(const std::function<double(double)>& f, double a,
                          double b, double rel_tol = 1e-10, int max_depth = 60);

struct ProfileSide {
  double bound = 0.0;
  bool unbounded = false;  // drop level never crossed inside the search span
};

struct ProfileInterval {
  ProfileSide lower, upper;
};

// Interval around `x_mle` where `profile_value` (a maximized log-likelihood
// profile) stays above value_max - drop. Marches geometrically outward from
// step `initial_step` up to `max_span` on each side, then bisects the crossing.
ProfileInterval profile_interval(const std::function<double(double)>& profile_value,
                                 double x_mle, double value_max, double drop,
                                 double initial_step, double max_span,
                                 double x_tol);

}  // namespace mzmsim::optim
