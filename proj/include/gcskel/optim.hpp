#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "gcskel/types.hpp"

namespace gcskel {

struct BfgsOptions {
  int max_iterations = 50;
  double gradient_tolerance = 1e-8;  // on the infinity norm of the gradient
  double c1 = 1e-4;                  // sufficient decrease
  double c2 = 0.9;                   // curvature
  int max_line_search = 40;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Dense BFGS with a strong-Wolfe line search (bracket + zoom).
///
/// `fn(x, grad)` returns f(x) and writes the gradient into `grad`. A
/// non-finite value is treated as "step too long" by the line search; a
/// non-finite value at the start point throws NumericalError.
template <class Fn>
BfgsResult bfgs_minimize(Fn&& fn, Eigen::VectorXd x0,
                         const BfgsOptions& opt = {}) {
  using Vec = Eigen::VectorXd;
  const Eigen::Index n = x0.size();
  BfgsResult res;
  Vec g(n);
  double f = fn(x0, g);
  if (!std::isfinite(f) || !g.allFinite())
    throw NumericalError("objective is not finite at the start point");
  Vec x = std::move(x0);
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;

  auto eval = [&](const Vec& p, const Vec& dir, double a, Vec& gout,
                  double& dphi) {
    const double v = fn(p + a * dir, gout);
    if (!std::isfinite(v) || !gout.allFinite()) {
      dphi = std::numeric_limits<double>::quiet_NaN();
      return std::numeric_limits<double>::infinity();
    }
    dphi = gout.dot(dir);
    return v;
  };

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) {
      res.converged = true;
      break;
    }
    Vec d = -h * g;
    double dphi0 = g.dot(d);
    if (!(dphi0 < 0.0)) {  // lost descent: restart from steepest descent
      h.setIdentity();
      d = -g;
      dphi0 = g.dot(d);
    }

    // Strong Wolfe line search (Nocedal & Wright, algorithms 3.5 / 3.6).
    double a_prev = 0.0, f_prev = f, dphi_prev = dphi0;
    double a = 1.0;
    double a_star = 0.0, f_star = f;
    Vec g_star = g, g_new(n);
    bool found = false;
    auto zoom = [&](double lo, double f_lo, double dlo, double hi, double f_hi) {
      for (int k = 0; k < opt.max_line_search; ++k) {
        // Safeguarded quadratic interpolation inside [lo, hi].
        double trial = 0.5 * (lo + hi);
        if (std::isfinite(f_hi)) {
          const double span = hi - lo;
          const double denom = 2.0 * (f_hi - f_lo - dlo * span);
          if (denom > 0.0) {
            const double q = lo - dlo * span * span / denom;
            const double lo_b = std::min(lo, hi), hi_b = std::max(lo, hi);
            const double margin = 0.1 * (hi_b - lo_b);
            if (q > lo_b + margin && q < hi_b - margin) trial = q;
          }
        }
        double dt;
        const double ft = eval(x, d, trial, g_new, dt);
        if (!std::isfinite(ft) || ft > f + opt.c1 * trial * dphi0 || ft >= f_lo) {
          hi = trial;
          f_hi = ft;
        } else {
          if (ft < f_star) {  // best sufficient-decrease point so far
            a_star = trial;
            f_star = ft;
            g_star = g_new;
          }
          if (std::abs(dt) <= -opt.c2 * dphi0) {
            found = true;
            return;
          }
          if (dt * (hi - lo) >= 0.0) {
            hi = lo;
            f_hi = f_lo;
          }
          lo = trial;
          f_lo = ft;
          dlo = dt;
        }
        if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) return;
      }
    };

    for (int k = 0; k < opt.max_line_search && !found; ++k) {
      double dphi;
      const double fa = eval(x, d, a, g_new, dphi);
      if (!std::isfinite(fa) || fa > f + opt.c1 * a * dphi0 ||
          (k > 0 && fa >= f_prev)) {
        zoom(a_prev, f_prev, dphi_prev, a, fa);
        break;
      }
      if (std::abs(dphi) <= -opt.c2 * dphi0) {
        a_star = a;
        f_star = fa;
        g_star = g_new;
        found = true;
        break;
      }
      if (dphi >= 0.0) {
        if (fa < f_star) {
          a_star = a;
          f_star = fa;
          g_star = g_new;
        }
        zoom(a, fa, dphi, a_prev, f_prev);
        break;
      }
      a_prev = a;
      f_prev = fa;
      dphi_prev = dphi;
      if (fa < f_star) {
        a_star = a;
        f_star = fa;
        g_star = g_new;
      }
      a *= 2.0;
    }
    if (!(f_star < f)) break;  // no progress possible along d

    const Vec s = a_star * d;
    const Vec y = g_star - g;
    x += s;
    f = f_star;
    g = g_star;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        h *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Vec hy = h * y;
      h += ((sy + y.dot(hy)) * rho * rho) * (s * s.transpose()) -
           rho * (hy * s.transpose() + s * hy.transpose());
    }
  }
  if (!res.converged && g.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance)
    res.converged = true;
  res.x = std::move(x);
  res.value = f;
  return res;
}

}  // namespace gcskel
