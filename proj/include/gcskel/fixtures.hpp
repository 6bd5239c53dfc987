#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gcskel/cloud.hpp"
#include "gcskel/types.hpp"

namespace gcskel {

/// Open circular tube around the segment a-b.
struct Tube {
  std::string name;
  Vec3 a = Vec3::Zero(), b = Vec3::UnitZ();
  double radius = 1.0;

  double length() const { return (b - a).norm(); }
  Vec3 axis() const { return (b - a).normalized(); }
  // distance from p to the (finite) axis segment
  double axis_distance(const Vec3& p) const {
    const Vec3 d = b - a;
    const double t = std::clamp((p - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
    return (p - (a + t * d)).norm();
  }
};

struct Fixture {
  std::string name;
  std::vector<Tube> tubes;
  PointCloud cloud;
  std::vector<std::size_t> owner;  // tube index per point
  std::size_t expected_leaves = 0;

  IndexSet points_of(std::size_t tube) const {
    IndexSet out;
    for (std::size_t i = 0; i < owner.size(); ++i)
      if (owner[i] == tube) out.push_back(i);
    return out;
  }
};

/// Samples the union of the tube surfaces with roughly `target_points` points,
/// one point per cell of a ring lattice, displaced uniformly within the central
/// `jitter` fraction of its cell along both lattice directions. Points inside
/// another tube are dropped.
inline Fixture sample_tubes(std::string name, std::vector<Tube> tubes,
                            std::size_t target_points, std::uint64_t seed = 1,
                            double jitter = 0.5) {
  if (!(jitter >= 0.0 && jitter <= 1.0)) throw InvalidArgument("jitter must lie in [0, 1]");
  if (tubes.empty()) throw InvalidArgument("fixture needs at least one tube");
  if (target_points < 10) throw InvalidArgument("fixture needs at least 10 points");
  double area = 0.0;
  for (const Tube& t : tubes) {
    if (!(t.radius > 0.0) || !(t.length() > 0.0)) throw InvalidArgument("degenerate tube");
    area += 2.0 * kPi * t.radius * t.length();
  }
  const double h = std::sqrt(area / double(target_points));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Fixture f;
  f.name = std::move(name);
  std::vector<OrientedPoint> pts;
  for (std::size_t ti = 0; ti < tubes.size(); ++ti) {
    const Tube& t = tubes[ti];
    const Vec3 w = t.axis();
    const Vec3 helper = std::abs(w.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 u = w.cross(helper).normalized(), v = w.cross(u);
    const auto rings = std::max<std::size_t>(1, std::size_t(std::lround(t.length() / h)));
    const auto per_ring = std::max<std::size_t>(6, std::size_t(std::lround(2.0 * kPi * t.radius / h)));
    for (std::size_t r = 0; r < rings; ++r) {
      for (std::size_t k = 0; k < per_ring; ++k) {
        const double z = t.length() * (double(r) + 0.5 + jitter * (unit(rng) - 0.5)) / double(rings);
        const double ang = 2.0 * kPi * (double(k) + 0.5 + jitter * (unit(rng) - 0.5)) / double(per_ring);
        const Vec3 n = std::cos(ang) * u + std::sin(ang) * v;
        const Vec3 p = t.a + z * w + t.radius * n;
        bool inside = false;
        for (std::size_t tj = 0; tj < tubes.size() && !inside; ++tj)
          if (tj != ti && tubes[tj].axis_distance(p) < tubes[tj].radius - 1e-9) inside = true;
        if (inside) continue;
        pts.push_back({p, n});
        f.owner.push_back(ti);
      }
    }
  }
  f.tubes = std::move(tubes);
  f.cloud = PointCloud(std::move(pts), true);
  return f;
}

inline Fixture straight_cylinder_fixture(std::size_t n = 5000, const Vec3& axis = Vec3::UnitZ(),
                                         std::uint64_t seed = 1) {
  const Vec3 d = axis.normalized();
  auto f = sample_tubes("cylinder", {{"body", -5.0 * d, 5.0 * d, 1.0}}, n, seed);
  f.expected_leaves = 2;
  return f;
}

inline Fixture t_junction_fixture(std::size_t n = 5000, std::uint64_t seed = 1) {
  auto f = sample_tubes("t-junction",
                        {{"bar", {-6, 0, 0}, {6, 0, 0}, 1.0},
                         {"stem", {0, 0, 0}, {0, 0, -8}, 1.0}},
                        n, seed);
  f.expected_leaves = 3;
  return f;
}

/// Torso with four legs, a neck and a tail.
inline Fixture quadruped_fixture(std::size_t n = 5000, std::uint64_t seed = 1) {
  auto f = sample_tubes("quadruped",
                        {{"torso", {-6, 0, 0}, {6, 0, 0}, 1.5},
                         {"leg_fl", {4.5, 0.8, 0}, {4.5, 0.8, -7}, 0.5},
                         {"leg_fr", {4.5, -0.8, 0}, {4.5, -0.8, -7}, 0.5},
                         {"leg_bl", {-4.5, 0.8, 0}, {-4.5, 0.8, -7}, 0.5},
                         {"leg_br", {-4.5, -0.8, 0}, {-4.5, -0.8, -7}, 0.5},
                         {"neck", {5.5, 0, 0.5}, {8.5, 0, 5}, 0.6},
                         {"tail", {-5.5, 0, 0.3}, {-10, 0, 2}, 0.35}},
                        n, seed);
  f.expected_leaves = 6;
  return f;
}

inline Fixture make_fixture(const std::string& name, std::size_t n = 5000,
                            std::uint64_t seed = 1) {
  if (name == "cylinder") return straight_cylinder_fixture(n, Vec3::UnitZ(), seed);
  if (name == "t-junction") return t_junction_fixture(n, seed);
  if (name == "quadruped") return quadruped_fixture(n, seed);
  throw InvalidArgument("unknown fixture '" + name + "'");
}

}  // namespace gcskel
