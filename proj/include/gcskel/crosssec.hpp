#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Eigenvalues>

#include "gcskel/cloud.hpp"
#include "gcskel/graph.hpp"
#include "gcskel/types.hpp"

namespace gcskel {

struct PlaneHypothesis {
  double theta = 0.0;  // azimuth, radians
  double phi = 0.0;    // zenith, radians
  Vec3 normal = Vec3::UnitZ();
  Vec3 anchor = Vec3::Zero();

  static Vec3 direction(double theta, double phi) {
    return {std::cos(theta) * std::sin(phi), std::sin(theta) * std::sin(phi),
            std::cos(phi)};
  }
  static PlaneHypothesis from_angles(double theta, double phi,
                                     const Vec3& anchor = Vec3::Zero()) {
    return {theta, phi, direction(theta, phi), anchor};
  }
  /// Angles of an arbitrary unit vector (phi in [0, pi], theta in (-pi, pi]).
  static PlaneHypothesis from_normal(const Vec3& n,
                                     const Vec3& anchor = Vec3::Zero()) {
    const Vec3 u = n.normalized();
    const double phi = std::acos(std::clamp(u.z(), -1.0, 1.0));
    const double theta = std::atan2(u.y(), u.x());
    return {theta, phi, u, anchor};
  }
};

struct ScaleEigs {
  double e1 = 0.0, e2 = 0.0;  // e1 >= e2 >= 0
  double norm() const { return std::hypot(e1, e2); }
};

struct CrossSection {
  IndexSet members;
  PlaneHypothesis plane;
  Vec3 center = Vec3::Zero();
  ScaleEigs scale;
  std::size_t seed_index = 0;
  double fit_cost = 0.0;  // plane_cost of the members
};

/// Points within `delta_pd` of the plane through `point` with normal `n`.
inline std::vector<char> plane_band(const PointCloud& cloud, const Vec3& point,
                                    const Vec3& n, double delta_pd) {
  const double d = n.dot(point);
  std::vector<char> in(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    in[i] = std::abs(n.dot(cloud.position(i)) - d) <= delta_pd;
  return in;
}

/// Band of the plane through the seed, restricted to the seed's connected
/// component inside the band.
inline IndexSet get_inliers(const PointCloud& cloud,
                            const ConnectivityGraph& cnct, double delta_pd,
                            std::size_t seed, const Vec3& normal) {
  auto band = plane_band(cloud, cloud.position(seed), normal, delta_pd);
  band[seed] = 1;
  return connected_component(cnct, seed, band);
}

/// Mean |n . x_n| over the inliers; 0 when every point normal lies in the
/// plane.
inline double plane_cost(const PointCloud& cloud, const IndexSet& inliers,
                         const Vec3& normal) {
  if (inliers.empty()) throw InvalidArgument("plane_cost of an empty set");
  double sum = 0.0;
  for (std::size_t i : inliers) sum += std::abs(normal.dot(cloud.normal(i)));
  return sum / double(inliers.size());
}

/// Two largest eigenvalues of the member-position covariance.
inline ScaleEigs cluster_scale(const PointCloud& cloud, const IndexSet& members) {
  if (members.size() < 3)
    throw InvalidArgument("cluster_scale needs at least 3 members");
  const Vec3 mean = cloud.centroid(members);
  Mat3 cov = Mat3::Zero();
  for (std::size_t i : members) {
    const Vec3 d = cloud.position(i) - mean;
    cov += d * d.transpose();
  }
  cov /= double(members.size());
  const Eigen::SelfAdjointEigenSolver<Mat3> es(cov, Eigen::EigenvaluesOnly);
  const Vec3 ev = es.eigenvalues();
  return {std::max(ev(2), 0.0), std::max(ev(1), 0.0)};
}

/// Builds a CrossSection from its members and plane (center, scale, fit cost).
inline CrossSection make_section(const PointCloud& cloud, IndexSet members,
                                 const PlaneHypothesis& plane,
                                 std::size_t seed) {
  CrossSection cs;
  cs.members = std::move(members);
  cs.plane = plane;
  cs.center = cloud.centroid(cs.members);
  cs.seed_index = seed;
  if (cs.members.size() >= 3) cs.scale = cluster_scale(cloud, cs.members);
  cs.fit_cost = cs.members.empty() ? 0.0 : plane_cost(cloud, cs.members, plane.normal);
  return cs;
}

struct PlaneSearchOptions {
  double angular_step = kPi / 6.0;
  std::size_t min_inliers = 3;
};

/// Exhaustive search over theta in {0, pi/6, ..., 11pi/6} and
/// phi in {0, pi/6, pi/3, pi/2} for the plane through the seed whose inliers
/// have the smallest plane_cost. Ties go to the smaller (theta, phi).
/// Candidates with fewer than min_inliers members are used only when no
/// candidate reaches the floor.
inline CrossSection find_cross_section(const PointCloud& cloud,
                                       const ConnectivityGraph& cnct,
                                       double delta_pd, std::size_t seed,
                                       const PlaneSearchOptions& opt = {}) {
  if (!cloud.has_normals())
    throw InvalidArgument("find_cross_section needs normals");
  const int n_theta = int(std::lround(2.0 * kPi / opt.angular_step));
  const int n_phi = int(std::lround(0.5 * kPi / opt.angular_step)) + 1;

  struct Best {
    double cost = std::numeric_limits<double>::infinity();
    PlaneHypothesis plane;
    IndexSet inliers;
  };
  Best full, sparse;
  for (int it = 0; it < n_theta; ++it) {
    for (int ip = 0; ip < n_phi; ++ip) {
      const auto plane = PlaneHypothesis::from_angles(
          it * opt.angular_step, ip * opt.angular_step, cloud.position(seed));
      IndexSet inl = get_inliers(cloud, cnct, delta_pd, seed, plane.normal);
      if (inl.empty()) continue;
      const double c = plane_cost(cloud, inl, plane.normal);
      Best& slot = inl.size() >= opt.min_inliers ? full : sparse;
      if (c < slot.cost) slot = {c, plane, std::move(inl)};
    }
  }
  Best& best = std::isfinite(full.cost) ? full : sparse;
  if (!std::isfinite(best.cost))
    throw Error("no plane through seed " + std::to_string(seed) + " has inliers");
  return make_section(cloud, std::move(best.inliers), best.plane, seed);
}

/// k_step x k_step grid of orientations around (base_theta, base_phi).
/// Offsets are equally spaced over [-delta, +delta] (endpoints included);
/// k_step = 1 yields the base orientation only.
inline std::vector<PlaneHypothesis> local_plane_set(double base_theta,
                                                    double base_phi,
                                                    double delta_ang_deg,
                                                    std::size_t k_step) {
  if (k_step < 1) throw InvalidArgument("k_step must be >= 1");
  const double delta = deg2rad(delta_ang_deg);
  std::vector<double> offsets;
  if (k_step == 1) {
    offsets.push_back(0.0);
  } else {
    for (std::size_t i = 0; i < k_step; ++i)
      offsets.push_back(-delta + 2.0 * delta * double(i) / double(k_step - 1));
  }
  std::vector<PlaneHypothesis> out;
  out.reserve(k_step * k_step);
  for (double dt : offsets)
    for (double dp : offsets)
      out.push_back(PlaneHypothesis::from_angles(base_theta + dt, base_phi + dp));
  return out;
}

enum class ScaleJumpForm { verbatim, ratio };

/// Relative scale change between neighboring sections.
///   verbatim: |1 - d(prev, next) / |prev||
///   ratio:    d(prev, next) / |prev|
inline double scale_change(const ScaleEigs& prev, const ScaleEigs& next,
                           ScaleJumpForm form) {
  const double pn = prev.norm();
  if (!(pn > 0.0)) throw InvalidArgument("scale vector of previous section is zero");
  const double r = std::hypot(prev.e1 - next.e1, prev.e2 - next.e2) / pn;
  return form == ScaleJumpForm::verbatim ? std::abs(1.0 - r) : r;
}

/// True when the scale change exceeds delta_eg, i.e. growth should stop.
inline bool scale_jump(const ScaleEigs& prev, const ScaleEigs& next,
                       double delta_eg,
                       ScaleJumpForm form = ScaleJumpForm::verbatim) {
  return scale_change(prev, next, form) > delta_eg;
}

}  // namespace gcskel
