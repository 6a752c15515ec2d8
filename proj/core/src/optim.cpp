#include "mzmsim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mzmsim::optim {

NelderMeadResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& steps,
                             const NelderMeadOptions& opts) {
  const int n = static_cast<int>(x0.size());
  if (steps.size() != n) throw std::invalid_argument("nelder_mead: steps size mismatch");

  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;

  std::vector<Eigen::VectorXd> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (int i = 0; i < n; ++i) xs[i + 1](i) += steps(i);
  for (int i = 0; i <= n; ++i) fs[i] = f(xs[i]);

  std::vector<int> order(n + 1);
  NelderMeadResult res;
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    const int best = order[0], worst = order[n], second = order[n - 1];

    if (std::abs(fs[worst] - fs[best]) <=
        opts.rel_tol * std::abs(fs[best]) + opts.abs_tol) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += xs[i];
    centroid /= n;

    Eigen::VectorXd xr = centroid + alpha * (centroid - xs[worst]);
    const double fr = f(xr);
    if (fr < fs[best]) {
      Eigen::VectorXd xe = centroid + gamma * (centroid - xs[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second]) {
      xs[worst] = xr;
      fs[worst] = fr;
    } else {
      Eigen::VectorXd xc = centroid + rho * (xs[worst] - centroid);
      const double fc = f(xc);
      if (fc < fs[worst]) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          xs[i] = xs[best] + sigma * (xs[i] - xs[best]);
          fs[i] = f(xs[i]);
        }
      }
    }
  }

  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (fs[i] < fs[best]) best = i;
  res.x = xs[best];
  res.value = fs[best];
  res.iterations = iter;
  return res;
}

NelderMeadResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                             double step, const NelderMeadOptions& opts) {
  return nelder_mead(f, x0, Eigen::VectorXd::Constant(x0.size(), step), opts);
}

BfgsResult minimize_bfgs(const Objective& f, const Gradient& grad,
                         const Eigen::VectorXd& x0, const BfgsOptions& opts) {
  const int n = static_cast<int>(x0.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);  // inverse Hessian approximation
  Eigen::VectorXd x = x0;
  double fx = f(x);
  Eigen::VectorXd g(n);
  grad(x, g);

  BfgsResult res;
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd p = -h * g;
    if (p.dot(g) >= 0.0) {  // not a descent direction; reset
      h.setIdentity();
      p = -g;
    }

    double t = 1.0;
    const double slope = g.dot(p);
    double fnew = fx;
    Eigen::VectorXd xnew = x;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      xnew = x + t * p;
      fnew = f(xnew);
      if (fnew <= fx + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      res.converged = g.lpNorm<Eigen::Infinity>() <= 1e3 * opts.grad_tol ||
                      std::abs(fx) * opts.rel_tol * 10 > std::abs(slope) * t;
      break;
    }

    Eigen::VectorXd gnew(n);
    grad(xnew, gnew);
    const Eigen::VectorXd s = xnew - x;
    const Eigen::VectorXd y = gnew - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const Eigen::VectorXd hy = h * y;
      const double yhy = y.dot(hy);
      h += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
           (hy * s.transpose() + s * hy.transpose()) / sy;
    }

    const double change = std::abs(fx - fnew);
    x = xnew;
    g = gnew;
    const double prev = fx;
    fx = fnew;
    if (change <= opts.rel_tol * (std::abs(prev) + 1e-12)) {
      res.converged = true;
      ++iter;
      break;
    }
  }

  res.x = x;
  res.value = fx;
  res.iterations = iter;
  return res;
}

namespace {

double simpson(double fa, double fm, double fb, double h) {
  return h / 6.0 * (fa + 4.0 * fm + fb);
}

double adapt(const std::function<double(double)>& f, double a, double b,
             double fa, double fm, double fb, double whole, double tol,
             int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(fa, flm, fm, m - a);
  const double right = simpson(fm, frm, fb, b - m);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double integrate_adaptive(const std::function<double(double)>& f, double a,
                          double b, double rel_tol, int max_depth) {
  if (a == b) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = simpson(fa, fm, fb, b - a);
  const double scale = std::max(std::abs(whole), 1e-300);
  return adapt(f, a, b, fa, fm, fb, whole, rel_tol * scale, max_depth);
}

namespace {

ProfileSide profile_side(const std::function<double(double)>& profile_value,
                         double x_mle, double threshold, double step,
                         double max_span, double x_tol, double direction) {
  ProfileSide side;
  double inner = x_mle;
  double span = step;
  double outer = x_mle + direction * span;
  while (profile_value(outer) > threshold) {
    inner = outer;
    span *= 2.0;
    if (span > max_span) {
      side.bound = x_mle + direction * max_span;
      side.unbounded = true;
      return side;
    }
    outer = x_mle + direction * span;
  }
  // crossing bracketed between inner and outer
  while (std::abs(outer - inner) > x_tol) {
    const double mid = 0.5 * (inner + outer);
    if (profile_value(mid) > threshold)
      inner = mid;
    else
      outer = mid;
  }
  side.bound = 0.5 * (inner + outer);
  return side;
}

}  // namespace

ProfileInterval profile_interval(const std::function<double(double)>& profile_value,
                                 double x_mle, double value_max, double drop,
                                 double initial_step, double max_span,
                                 double x_tol) {
  const double threshold = value_max - drop;
  ProfileInterval interval;
  interval.lower = profile_side(profile_value, x_mle, threshold, initial_step,
                                max_span, x_tol, -1.0);
  interval.upper = profile_side(profile_value, x_mle, threshold, initial_step,
                                max_span, x_tol, +1.0);
  return interval;
}

}  // namespace mzmsim::optim
