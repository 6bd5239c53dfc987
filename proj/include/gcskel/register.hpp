#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "gcskel/cloud.hpp"
#include "gcskel/optim.hpp"
#include "gcskel/quaternion_chart.hpp"
#include "gcskel/types.hpp"

// Similarity registration of two oriented point sets.
//
// Y is the mixture: component j is a Gaussian at s R y_p^j + t times a
// von Mises-Fisher density on the normal sphere centred on R y_n^j with
// concentration alpha. X is the observed data. EM alternates posterior
// computation with a BFGS M-step over (rotation chart, s, alpha, sigma);
// t has a closed form.

namespace gcskel {

struct RegistrationParams {
  Mat3 rotation = Mat3::Identity();
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();
  double alpha = 1.0;  // (0, alpha_max]
  double sigma = 1.0;

  Vec3 apply(const Vec3& p) const { return scale * rotation * p + translation; }
};

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Positions and normals as N x 3 matrices.
struct OrientedSet {
  PointMatrix pos, nrm;

  OrientedSet() = default;
  explicit OrientedSet(const PointCloud& c) : pos(c.size(), 3), nrm(c.size(), 3) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      pos.row(Eigen::Index(i)) = c.position(i).transpose();
      nrm.row(Eigen::Index(i)) = c.normal(i).transpose();
    }
  }
  Eigen::Index size() const { return pos.rows(); }
};

struct RegConfig {
  double tolerance = 1e-6;  // relative change of the negative log-likelihood
  int max_iterations = 100;
  BfgsOptions bfgs{};       // 50 iterations, gradient tolerance 1e-8
  double alpha_max = 10.0;
  double alpha_init = 1.0;
  bool use_normals = true;  // false drops every alpha term (position-only)
  double chart_recenter_norm = 1e3;
  double sigma_floor_ratio = 1e-7;  // sigma never drops below ratio * sigma0
};

/// Posteriors p_ji, M x N; every column sums to one.
struct CorrespondenceMatrix {
  Eigen::MatrixXd P;
};

struct IterationRecord {
  int iteration = 0;
  double nll = 0.0;  // negative log-likelihood after this iteration
  double q = 0.0;    // M-step objective at the returned parameters
  double sigma = 0.0, scale = 0.0, alpha = 0.0;
};

struct RegistrationReport {
  RegistrationParams params;
  CorrespondenceMatrix P;
  double mean_best_match_angle = 0.0;  // degrees
  int iterations = 0;
  bool converged = false;
  double initial_nll = 0.0;
  std::vector<IterationRecord> trace;
};

/// Thrown when the M-step objective stops being finite.
class MStepError : public NumericalError {
 public:
  MStepError(const std::string& what, RegistrationParams last)
      : NumericalError(what), last_(last) {}
  const RegistrationParams& last_finite() const { return last_; }

 private:
  RegistrationParams last_;
};

namespace detail {

// log(e^a - e^-a), stable for small and large a.
inline double log_two_sinh(double a) {
  return a + std::log1p(-std::exp(-2.0 * a));
}

inline double coth(double a) { return 1.0 / std::tanh(a); }

inline double log_vmf_normaliser(double alpha) {
  return std::log(alpha) - std::log(2.0 * kPi) - log_two_sinh(alpha);
}

}  // namespace detail

struct EStepResult {
  CorrespondenceMatrix P;
  double nll = 0.0;
};

/// Posteriors and the negative log-likelihood at `params`.
inline EStepResult e_step_full(const OrientedSet& x, const OrientedSet& y,
                               const RegistrationParams& params,
                               bool use_normals = true) {
  const Eigen::Index n = x.size(), m = y.size();
  if (n == 0 || m == 0) throw InvalidArgument("e_step needs non-empty sets");
  const double sigma2 = params.sigma * params.sigma;
  const double alpha = use_normals ? params.alpha : 0.0;
  if (!std::isfinite(sigma2) || !(sigma2 > 0.0) || !std::isfinite(alpha) ||
      !params.rotation.allFinite() || !params.translation.allFinite() ||
      !std::isfinite(params.scale))
    throw NumericalError("e_step: non-finite parameters");

  const Mat3 sr = params.scale * params.rotation;
  const PointMatrix ty = (y.pos * sr.transpose()).rowwise() + params.translation.transpose();
  const PointMatrix ryn = y.nrm * params.rotation.transpose();

  EStepResult out;
  out.P.P.resize(m, n);
  double log_norm = -1.5 * std::log(2.0 * kPi * sigma2) - std::log(double(m));
  if (use_normals) log_norm += detail::log_vmf_normaliser(params.alpha);
  const double inv2s2 = 0.5 / sigma2;
  Eigen::VectorXd e(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVector3d xi = x.pos.row(i);
    e = -(ty.rowwise() - xi).rowwise().squaredNorm() * inv2s2;
    if (alpha != 0.0) e += alpha * (ryn * x.nrm.row(i).transpose());
    const double mx = e.maxCoeff();
    if (!std::isfinite(mx)) throw NumericalError("e_step: non-finite exponent");
    auto col = out.P.P.col(i);
    col = (e.array() - mx).exp().matrix();
    const double sum = col.sum();
    col /= sum;
    out.nll -= log_norm + mx + std::log(sum);
  }
  return out;
}

inline CorrespondenceMatrix e_step(const PointCloud& x, const PointCloud& y,
                                   const RegistrationParams& params,
                                   bool use_normals = true) {
  if (!x.has_normals() || !y.has_normals())
    throw InvalidArgument("registration needs normals on both sets");
  return e_step_full(OrientedSet(x), OrientedSet(y), params, use_normals).P;
}

/// Weighted statistics of a correspondence matrix that the M-step objective
/// depends on. mu_x, mu_y are the posterior-weighted means; A, B, K1, K2 use
/// the centred positions.
struct MStepStatistics {
  Mat3 A = Mat3::Zero();  // Xc^T P^T Yc
  Mat3 B = Mat3::Zero();  // Xn^T P^T Yn
  double K1 = 0.0;        // tr(Yc^T diag(P 1) Yc)
  double K2 = 0.0;        // tr(Xc^T diag(P^T 1) Xc)
  double n = 0.0;         // total posterior mass (= |X|)
  Vec3 mu_x = Vec3::Zero(), mu_y = Vec3::Zero();
};

inline MStepStatistics m_step_statistics(const OrientedSet& x,
                                         const OrientedSet& y,
                                         const Eigen::MatrixXd& P) {
  MStepStatistics st;
  const Eigen::VectorXd pt1 = P.colwise().sum().transpose();  // N
  const Eigen::VectorXd p1 = P.rowwise().sum();               // M
  st.n = pt1.sum();
  st.mu_x = x.pos.transpose() * pt1 / st.n;
  st.mu_y = y.pos.transpose() * p1 / st.n;
  const PointMatrix xc = x.pos.rowwise() - st.mu_x.transpose();
  const PointMatrix yc = y.pos.rowwise() - st.mu_y.transpose();
  st.A = (P * xc).transpose() * yc;
  st.B = (P * x.nrm).transpose() * y.nrm;
  st.K1 = (yc.rowwise().squaredNorm().transpose() * p1).value();
  st.K2 = (xc.rowwise().squaredNorm().transpose() * pt1).value();
  return st;
}

/// M-step objective with t eliminated:
///   (K2 - 2s tr(A^T R) + s^2 K1) / (2 sigma^2) - alpha tr(B^T R)
///   + 3n/2 log sigma^2 - n log alpha + n log(e^alpha - e^-alpha)
inline double q_objective(const MStepStatistics& st, const Mat3& r, double s,
                          double alpha, double sigma, bool use_normals = true) {
  const double s2 = sigma * sigma;
  double q = (st.K2 - 2.0 * s * (st.A.transpose() * r).trace() + s * s * st.K1) /
                 (2.0 * s2) +
             1.5 * st.n * std::log(s2);
  if (use_normals)
    q += -alpha * (st.B.transpose() * r).trace() - st.n * std::log(alpha) +
         st.n * detail::log_two_sinh(alpha);
  return q;
}

struct ObjectiveGradient {
  Vec3 psi = Vec3::Zero();
  double scale = 0.0, alpha = 0.0, sigma = 0.0;
};

/// Analytic partial derivatives of q_objective with R = R(psi) * base.
inline ObjectiveGradient q_gradient(const MStepStatistics& st, const Vec3& psi,
                                    double s, double alpha, double sigma,
                                    bool use_normals = true,
                                    const Mat3& base = Mat3::Identity()) {
  const Mat3 r = chart_to_rotation(psi) * base;
  const double s2 = sigma * sigma;
  const double tr_ar = (st.A.transpose() * r).trace();
  ObjectiveGradient g;
  g.sigma = -(st.K2 - 2.0 * s * tr_ar + s * s * st.K1) / (s2 * sigma) +
            3.0 * st.n / sigma;
  g.scale = -tr_ar / s2 + s * st.K1 / s2;
  if (use_normals)
    g.alpha = -(st.B.transpose() * r).trace() - st.n / alpha +
              st.n * detail::coth(alpha);
  // tr(A^T dR/dpsi_k base) = tr((A base^T)^T dR/dpsi_k)
  const Mat3 ab = st.A * base.transpose();
  const Mat3 bb = st.B * base.transpose();
  const auto dr = rotation_chart_jacobian(psi);
  for (int k = 0; k < 3; ++k) {
    g.psi(k) = -s / s2 * (ab.transpose() * dr[k]).trace();
    if (use_normals) g.psi(k) -= alpha * (bb.transpose() * dr[k]).trace();
  }
  return g;
}

/// Expected complete-data negative log-likelihood (dropping constants) at
/// arbitrary parameters, evaluated directly from the posteriors.
inline double q_full(const OrientedSet& x, const OrientedSet& y,
                     const Eigen::MatrixXd& P, const RegistrationParams& p,
                     bool use_normals = true) {
  const Mat3 sr = p.scale * p.rotation;
  const PointMatrix ty = (y.pos * sr.transpose()).rowwise() + p.translation.transpose();
  const PointMatrix ryn = y.nrm * p.rotation.transpose();
  const double s2 = p.sigma * p.sigma;
  double q = 0.0, mass = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Eigen::RowVector3d xi = x.pos.row(i);
    const Eigen::VectorXd d2 = (ty.rowwise() - xi).rowwise().squaredNorm();
    q += P.col(i).dot(d2) / (2.0 * s2);
    if (use_normals) q -= p.alpha * P.col(i).dot(ryn * x.nrm.row(i).transpose());
    mass += P.col(i).sum();
  }
  q += 1.5 * mass * std::log(s2);
  if (use_normals) q += -mass * std::log(p.alpha) + mass * detail::log_two_sinh(p.alpha);
  return q;
}

/// Closed-form translation for given rotation and scale.
inline Vec3 closed_form_translation(const MStepStatistics& st, const Mat3& r,
                                    double s) {
  return st.mu_x - s * r * st.mu_y;
}

struct MStepResult {
  RegistrationParams params;
  double q = 0.0;
};

namespace detail {

inline double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// Maps the unconstrained BFGS vector onto model parameters. The rotation is
// R(psi) * base, with psi started at the identity chart point (1, 0, 0).
struct MStepChart {
  Mat3 base;
  double alpha_max;
  double sigma_floor;

  Mat3 rotation(const Eigen::VectorXd& z) const {
    return chart_to_rotation(z.head<3>()) * base;
  }
  static double scale(const Eigen::VectorXd& z) { return std::exp(z(3)); }
  double alpha(const Eigen::VectorXd& z) const { return alpha_max * logistic(z(4)); }
  double sigma(const Eigen::VectorXd& z) const { return sigma_floor + std::exp(z(5)); }
};

}  // namespace detail

inline MStepResult m_step_stats(const MStepStatistics& st,
                                const RegistrationParams& warm,
                                const RegConfig& cfg, double sigma_floor) {
  const detail::MStepChart chart{warm.rotation, cfg.alpha_max, sigma_floor};
  Eigen::VectorXd z0(6);
  const double a0 = std::clamp(warm.alpha, 1e-9 * cfg.alpha_max,
                               (1.0 - 1e-9) * cfg.alpha_max);
  z0 << 1.0, 0.0, 0.0, std::log(warm.scale), std::log(a0 / (cfg.alpha_max - a0)),
      std::log(std::max(warm.sigma - sigma_floor, 1e-300));

  auto fn = [&](const Eigen::VectorXd& z, Eigen::VectorXd& grad) {
    const Mat3 r = chart.rotation(z);
    const double s = chart.scale(z), a = chart.alpha(z), sg = chart.sigma(z);
    const double val = q_objective(st, r, s, a, sg, cfg.use_normals);
    const auto g = q_gradient(st, z.head<3>(), s, a, sg, cfg.use_normals, chart.base);
    grad.resize(6);
    grad.head<3>() = g.psi;
    grad(3) = g.scale * s;
    const double lg = detail::logistic(z(4));
    grad(4) = g.alpha * cfg.alpha_max * lg * (1.0 - lg);
    grad(5) = g.sigma * (sg - sigma_floor);
    return val;
  };

  RegistrationParams start = warm;
  start.alpha = a0;
  const double q0 = q_objective(st, start.rotation, start.scale, start.alpha,
                                start.sigma, cfg.use_normals);
  if (!std::isfinite(q0)) {
    start.translation = closed_form_translation(st, start.rotation, start.scale);
    throw MStepError("M-step objective not finite at warm start", start);
  }
  BfgsResult res;
  try {
    res = bfgs_minimize(fn, z0, cfg.bfgs);
  } catch (const NumericalError& e) {
    start.translation = closed_form_translation(st, start.rotation, start.scale);
    throw MStepError(e.what(), start);
  }

  MStepResult out;
  if (!(res.value <= q0)) {  // keep the warm start when nothing improved
    out.params = start;
    out.q = q0;
  } else {
    out.params.rotation = chart.rotation(res.x);
    out.params.scale = chart.scale(res.x);
    out.params.alpha = chart.alpha(res.x);
    out.params.sigma = chart.sigma(res.x);
    out.q = res.value;
  }
  // Re-orthonormalise so round-off does not accumulate across warm starts.
  out.params.rotation = quaternion_to_rotation(rotation_to_quaternion(out.params.rotation));
  out.params.translation =
      closed_form_translation(st, out.params.rotation, out.params.scale);
  return out;
}

/// One M-step: BFGS over rotation chart, scale, alpha and sigma from the
/// warm start, then t in closed form.
inline RegistrationParams m_step(const PointCloud& x, const PointCloud& y,
                                 const CorrespondenceMatrix& P,
                                 const RegistrationParams& warm,
                                 const RegConfig& cfg = {}) {
  const OrientedSet xs(x), ys(y);
  const auto st = m_step_statistics(xs, ys, P.P);
  return m_step_stats(st, warm, cfg, cfg.sigma_floor_ratio * warm.sigma).params;
}

/// sigma0^2 = mean squared distance over all X-Y pairs / 3.
inline double initial_sigma(const OrientedSet& x, const OrientedSet& y) {
  const double n = double(x.size()), m = double(y.size());
  const Vec3 sx = x.pos.colwise().sum().transpose();
  const Vec3 sy = y.pos.colwise().sum().transpose();
  const double s2 = (m * x.pos.squaredNorm() + n * y.pos.squaredNorm() -
                     2.0 * sx.dot(sy)) /
                    (3.0 * n * m);
  return std::sqrt(std::max(s2, 1e-300));
}

/// Mean angle (degrees) between each x normal and the transformed normal of
/// its most probable correspondence.
inline double mean_best_match_angle(const OrientedSet& x, const OrientedSet& y,
                                    const Eigen::MatrixXd& P, const Mat3& r) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::Index j = 0;
    P.col(i).maxCoeff(&j);
    const Vec3 xn = x.nrm.row(i).transpose();
    const Vec3 yn = r * y.nrm.row(j).transpose();
    sum += angle_between(xn, yn);
  }
  return rad2deg(sum / double(x.size()));
}

inline RegistrationReport register_sets(const OrientedSet& x,
                                        const OrientedSet& y,
                                        const RegConfig& cfg = {}) {
  if (x.size() < 3) throw InvalidArgument("registration needs |X| >= 3");
  if (y.size() < 1) throw InvalidArgument("registration needs a non-empty Y");

  RegistrationParams theta;
  theta.alpha = std::min(cfg.alpha_init, cfg.alpha_max);
  theta.sigma = initial_sigma(x, y);
  const double sigma_floor = cfg.sigma_floor_ratio * theta.sigma;

  RegistrationReport rep;
  auto es = e_step_full(x, y, theta, cfg.use_normals);
  rep.initial_nll = es.nll;
  double nll = es.nll;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const auto st = m_step_statistics(x, y, es.P.P);
    const auto ms = m_step_stats(st, theta, cfg, sigma_floor);
    theta = ms.params;
    es = e_step_full(x, y, theta, cfg.use_normals);
    rep.trace.push_back({it, es.nll, ms.q, theta.sigma, theta.scale,
                         cfg.use_normals ? theta.alpha : 0.0});
    rep.iterations = it;
    const double change = std::abs(nll - es.nll);
    nll = es.nll;
    if (change <= cfg.tolerance * std::max(std::abs(nll), 1.0) ||
        theta.sigma <= 1.01 * sigma_floor) {
      rep.converged = true;
      break;
    }
  }
  rep.params = theta;
  if (!cfg.use_normals) rep.params.alpha = 0.0;
  rep.P = std::move(es.P);
  rep.mean_best_match_angle = mean_best_match_angle(x, y, rep.P.P, theta.rotation);
  return rep;
}

/// Registers Y onto X: finds (R, s, t) with x ~ s R y + t.
inline RegistrationReport register_clouds(const PointCloud& x,
                                          const PointCloud& y,
                                          const RegConfig& cfg = {}) {
  if (!x.has_normals() || !y.has_normals())
    throw InvalidArgument("registration needs normals on both sets");
  return register_sets(OrientedSet(x), OrientedSet(y), cfg);
}

struct MatchOptions {
  double distance_factor = 1.5;  // times sigma
  double max_angle_deg = 20.0;
};

/// Indices of Y with some X point within distance_factor * sigma of the
/// transformed y position and normal angle below max_angle_deg.
inline IndexSet select_matched_points(const OrientedSet& x, const OrientedSet& y,
                                      const RegistrationParams& p,
                                      const MatchOptions& opt = {}) {
  const double r2 = std::pow(opt.distance_factor * p.sigma, 2);
  const double cos_max = std::cos(deg2rad(opt.max_angle_deg));
  IndexSet out;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const Vec3 ty = p.apply(y.pos.row(j).transpose());
    const Vec3 tn = p.rotation * y.nrm.row(j).transpose();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if ((x.pos.row(i).transpose() - ty).squaredNorm() > r2) continue;
      const Vec3 xn = x.nrm.row(i).transpose();
      // angle < max  <=>  cos(angle) > cos(max), normals are unit length
      if (xn.dot(tn) > cos_max) {
        out.push_back(std::size_t(j));
        break;
      }
    }
  }
  return out;
}

inline IndexSet select_matched_points(const PointCloud& x, const PointCloud& y,
                                      const RegistrationReport& report,
                                      const MatchOptions& opt = {}) {
  return select_matched_points(OrientedSet(x), OrientedSet(y), report.params, opt);
}

}  // namespace gcskel
