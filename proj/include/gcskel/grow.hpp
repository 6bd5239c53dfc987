#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gcskel/cloud.hpp"
#include "gcskel/crosssec.hpp"
#include "gcskel/graph.hpp"
#include "gcskel/register.hpp"
#include "gcskel/types.hpp"

namespace gcskel {

enum class GrowMethod { initial, continuation, registration };
enum class StopReason {
  none,
  scale_jump,
  no_points,
  registration_mismatch,
  registration_failure,
  section_limit
};

inline const char* to_string(GrowMethod m) {
  switch (m) {
    case GrowMethod::initial: return "initial";
    case GrowMethod::continuation: return "continuation";
    case GrowMethod::registration: return "registration";
  }
  return "?";
}

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::none: return "none";
    case StopReason::scale_jump: return "scale-jump";
    case StopReason::no_points: return "no-points";
    case StopReason::registration_mismatch: return "registration-mismatch";
    case StopReason::registration_failure: return "registration-failure";
    case StopReason::section_limit: return "section-limit";
  }
  return "?";
}

struct GrowConfig {
  double delta_ang_deg = 12.5;
  std::size_t k_step = 3;
  double step_factor = 2.0;       // step length = step_factor * delta_pd
  double delta_eg = 1.5;
  ScaleJumpForm jump_form = ScaleJumpForm::verbatim;
  std::size_t registration_min_points = 100;
  double mismatch_deg = 15.0;
  double visited_stop_fraction = 0.9;
  // a candidate adding fewer new points than this fraction of the current
  // section is a remnant: growth stops with no-points
  double min_relative_size = 0.2;
  std::size_t min_inliers = 3;
  // seed of a continuation plane must lie within this many section radii
  // (plus one step) of the predicted center
  double seed_reach = 1.5;
  std::size_t max_sections_per_direction = 1000;
  bool score_continuation_pairs = true;
  bool fill_gaps = true;
  // re-fit each registered section normal to its member normals, keeping it
  // when within delta_ang_deg of the registered estimate
  bool refine_normal = true;
  RegConfig reg;
  MatchOptions match;
  PlaneSearchOptions initial_search;
};

/// Read-only inputs shared by every part.
struct GrowContext {
  const PointCloud& cloud;
  const ConnectivityGraph& cnct;
};

/// Sections ordered along the axis (negative end first). pair_costs[k] is the
/// registration cost between sections k and k+1 (NaN when not computed).
struct Part {
  std::size_t seed_cluster = 0;
  std::size_t seed_point = 0;
  std::size_t seed_section = 0;  // index of the initial section
  double delta_pd = 0.0;
  std::vector<CrossSection> sections;
  std::vector<GrowMethod> methods;
  std::vector<double> pair_costs;
  StopReason stop_negative = StopReason::none;
  StopReason stop_positive = StopReason::none;

  std::vector<Vec3> axis() const {
    std::vector<Vec3> out;
    out.reserve(sections.size());
    for (const auto& s : sections) out.push_back(s.center);
    return out;
  }
  IndexSet members() const {
    IndexSet out;
    for (const auto& s : sections) out.insert(out.end(), s.members.begin(), s.members.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
  double length() const {
    double l = 0.0;
    for (std::size_t k = 1; k < sections.size(); ++k)
      l += (sections[k].center - sections[k - 1].center).norm();
    return l;
  }
};

namespace detail {

// Unit vectors spanning the plane orthogonal to n.
inline std::pair<Vec3, Vec3> orthonormal_complement(const Vec3& n) {
  const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 u = n.cross(helper).normalized();
  return {u, n.cross(u)};
}

// k x k grid of directions around n, offsets in [-delta, delta] along two
// orthogonal great circles. Equivalent to local_plane_set evaluated in a frame
// whose equator passes through n, which keeps the grid isotropic for any n.
inline std::vector<Vec3> local_directions(const Vec3& n, double delta_deg,
                                          std::size_t k_step) {
  const auto [u, v] = orthonormal_complement(n);
  std::vector<Vec3> out;
  for (const auto& h : local_plane_set(0.0, kPi / 2.0, delta_deg, k_step)) {
    const Vec3 d = h.normal;  // (cos t sin p, sin t sin p, cos p)
    out.push_back((d.x() * n + d.y() * u + d.z() * v).normalized());
  }
  return out;
}

inline double section_radius(const PointCloud& cloud, const CrossSection& cs) {
  double r = 0.0;
  for (std::size_t i : cs.members) r = std::max(r, (cloud.position(i) - cs.center).norm());
  return r;
}

// Component of the band through `anchor` that contains the band point
// nearest to the anchor. Empty when that point is farther than `reach`.
inline IndexSet band_component(const GrowContext& ctx, const Vec3& anchor,
                               const Vec3& normal, double delta_pd,
                               double reach, std::size_t* seed_out) {
  auto band = plane_band(ctx.cloud, anchor, normal, delta_pd);
  std::size_t seed = ctx.cloud.size();
  double best = reach * reach;
  for (std::size_t i = 0; i < band.size(); ++i) {
    if (!band[i]) continue;
    const double d2 = (ctx.cloud.position(i) - anchor).squaredNorm();
    if (d2 <= best) {
      if (d2 < best || seed == ctx.cloud.size()) seed = i;
      best = d2;
    }
  }
  if (seed == ctx.cloud.size()) return {};
  if (seed_out) *seed_out = seed;
  return connected_component(ctx.cnct, seed, band);
}

inline OrientedSet oriented_subset(const PointCloud& cloud, const IndexSet& idx) {
  OrientedSet s;
  s.pos.resize(Eigen::Index(idx.size()), 3);
  s.nrm.resize(Eigen::Index(idx.size()), 3);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    s.pos.row(Eigen::Index(k)) = cloud.position(idx[k]).transpose();
    s.nrm.row(Eigen::Index(k)) = cloud.normal(idx[k]).transpose();
  }
  return s;
}

inline std::size_t count_visited(const IndexSet& idx, const std::vector<char>& visited) {
  std::size_t c = 0;
  for (std::size_t i : idx) c += visited[i] != 0;
  return c;
}

inline IndexSet drop_visited(const IndexSet& idx, const std::vector<char>& visited) {
  IndexSet out;
  for (std::size_t i : idx)
    if (!visited[i]) out.push_back(i);
  return out;
}

inline std::size_t nearest_member(const PointCloud& cloud, const IndexSet& idx,
                                  const Vec3& p) {
  std::size_t best = idx.front();
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t i : idx) {
    const double d = (cloud.position(i) - p).squaredNorm();
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

struct StepOutcome {
  StopReason stop = StopReason::none;
  CrossSection next;
  GrowMethod method = GrowMethod::continuation;
  double pair_cost = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {
// Direction most perpendicular to the member normals (least eigenvector of
// their scatter), signed like `prior`; `prior` is kept if they differ by more
// than max_angle.
inline Vec3 refine_normal(const PointCloud& cloud, const IndexSet& members, const Vec3& prior,
                          double max_angle) {
  Mat3 scatter = Mat3::Zero();
  for (std::size_t i : members) {
    const Vec3 nm = cloud.normal(i);
    scatter += nm * nm.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  if (es.info() != Eigen::Success) return prior;
  Vec3 d = es.eigenvectors().col(0);
  if (d.dot(prior) < 0.0) d = -d;
  const double ang = std::acos(std::clamp(d.dot(prior), -1.0, 1.0));
  return ang <= max_angle ? Vec3(d.normalized()) : prior;
}
}  // namespace detail

/// Registration cost between two sections (mean best-match normal angle in
/// degrees); NaN when either section is too small or EM fails numerically.
inline double section_pair_cost(const GrowContext& ctx, const CrossSection& a,
                                const CrossSection& b, const RegConfig& cfg) {
  if (a.members.size() < 3 || b.members.empty())
    return std::numeric_limits<double>::quiet_NaN();
  try {
    return register_sets(detail::oriented_subset(ctx.cloud, a.members),
                         detail::oriented_subset(ctx.cloud, b.members), cfg)
        .mean_best_match_angle;
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

/// Steps to the next plane by evaluating the local plane grid at the predicted
/// center and keeping the lowest-cost inlier set. `dir` is the signed growth
/// direction (unit).
inline StepOutcome continuation_step(const GrowContext& ctx, const CrossSection& cur,
                                     const Vec3& dir, double delta_pd,
                                     const std::vector<char>& visited,
                                     const GrowConfig& cfg) {
  StepOutcome out;
  out.method = GrowMethod::continuation;
  const double step = cfg.step_factor * delta_pd;
  const Vec3 predicted = cur.center + step * dir;
  const double reach = cfg.seed_reach * detail::section_radius(ctx.cloud, cur) + step;

  double best_cost = std::numeric_limits<double>::infinity();
  IndexSet best;
  Vec3 best_n = dir;
  std::size_t best_seed = 0;
  for (const Vec3& n : detail::local_directions(dir, cfg.delta_ang_deg, cfg.k_step)) {
    std::size_t seed = 0;
    IndexSet inl = detail::band_component(ctx, predicted, n, delta_pd, reach, &seed);
    if (inl.size() < cfg.min_inliers) continue;
    const double c = plane_cost(ctx.cloud, inl, n);
    if (c < best_cost) {
      best_cost = c;
      best = std::move(inl);
      best_n = n;
      best_seed = seed;
    }
  }
  if (best.empty()) {
    out.stop = StopReason::no_points;
    return out;
  }
  const std::size_t seen = detail::count_visited(best, visited);
  IndexSet fresh = detail::drop_visited(best, visited);
  if (double(seen) >= cfg.visited_stop_fraction * double(best.size()) ||
      fresh.size() < cfg.min_inliers ||
      double(fresh.size()) < cfg.min_relative_size * double(cur.members.size())) {
    out.stop = StopReason::no_points;
    return out;
  }
  if (visited[best_seed]) best_seed = detail::nearest_member(ctx.cloud, fresh, predicted);
  out.next = make_section(ctx.cloud, std::move(fresh),
                          PlaneHypothesis::from_normal(best_n, predicted), best_seed);
  if (cur.members.size() >= 3 && cur.scale.norm() > 0.0 &&
      scale_jump(cur.scale, out.next.scale, cfg.delta_eg, cfg.jump_form)) {
    out.stop = StopReason::scale_jump;
    return out;
  }
  if (cfg.score_continuation_pairs)
    out.pair_cost = section_pair_cost(ctx, cur, out.next, cfg.reg);
  return out;
}

/// Registers the current section onto the union of the local planes' inlier
/// sets and keeps the matched points as the next section.
inline StepOutcome registration_step(const GrowContext& ctx, const CrossSection& cur,
                                     const Vec3& dir, double delta_pd,
                                     const std::vector<char>& visited,
                                     const GrowConfig& cfg) {
  StepOutcome out;
  out.method = GrowMethod::registration;
  const double step = cfg.step_factor * delta_pd;
  const Vec3 predicted = cur.center + step * dir;
  const double reach = cfg.seed_reach * detail::section_radius(ctx.cloud, cur) + step;

  std::vector<char> in_y(ctx.cloud.size(), 0);
  for (const Vec3& n : detail::local_directions(dir, cfg.delta_ang_deg, cfg.k_step))
    for (std::size_t i : detail::band_component(ctx, predicted, n, delta_pd, reach, nullptr))
      in_y[i] = 1;
  for (std::size_t i : cur.members) in_y[i] = 0;
  IndexSet y_idx;
  for (std::size_t i = 0; i < in_y.size(); ++i)
    if (in_y[i]) y_idx.push_back(i);
  if (y_idx.size() < cfg.min_inliers) {
    out.stop = StopReason::no_points;
    return out;
  }

  const OrientedSet xs = detail::oriented_subset(ctx.cloud, cur.members);
  const OrientedSet ys = detail::oriented_subset(ctx.cloud, y_idx);
  RegistrationReport rep;
  try {
    rep = register_sets(xs, ys, cfg.reg);
  } catch (const NumericalError&) {
    out.stop = StopReason::registration_failure;
    return out;
  }
  out.pair_cost = rep.mean_best_match_angle;
  if (!(rep.mean_best_match_angle <= cfg.mismatch_deg)) {
    out.stop = StopReason::registration_mismatch;
    return out;
  }
  std::vector<char> hit(y_idx.size(), 0);
  for (std::size_t j : select_matched_points(xs, ys, rep.params, cfg.match)) hit[j] = 1;
  if (cfg.fill_gaps) {
    // Y points between the current and the matched section that match X up
    // to a shift along the section normal
    double reach_ahead = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < y_idx.size(); ++j)
      if (hit[j]) reach_ahead = std::max(reach_ahead, (ctx.cloud.position(y_idx[j]) - cur.center).dot(dir));
    const Vec3 n = cur.plane.normal.normalized();
    const double r2 = std::pow(cfg.match.distance_factor * rep.params.sigma, 2);
    const double cos_max = std::cos(deg2rad(cfg.match.max_angle_deg));
    for (std::size_t j = 0; j < y_idx.size(); ++j) {
      if (hit[j] || (ctx.cloud.position(y_idx[j]) - cur.center).dot(dir) > reach_ahead) continue;
      const Vec3 ty = rep.params.apply(ys.pos.row(Eigen::Index(j)).transpose());
      const Vec3 tn = rep.params.rotation * ys.nrm.row(Eigen::Index(j)).transpose();
      for (Eigen::Index i = 0; i < xs.size(); ++i) {
        Vec3 d = ty - xs.pos.row(i).transpose();
        d -= d.dot(n) * n;
        if (d.squaredNorm() <= r2 && xs.nrm.row(i).dot(tn) > cos_max) {
          hit[j] = 2;
          break;
        }
      }
    }
  }
  IndexSet matched;
  for (std::size_t j = 0; j < y_idx.size(); ++j)
    if (hit[j]) matched.push_back(y_idx[j]);
  const std::size_t seen = detail::count_visited(matched, visited);
  IndexSet fresh = detail::drop_visited(matched, visited);
  if (fresh.size() < cfg.min_inliers ||
      double(seen) >= cfg.visited_stop_fraction * double(matched.size()) ||
      double(fresh.size()) < cfg.min_relative_size * double(cur.members.size())) {
    out.stop = StopReason::no_points;
    return out;
  }
  Vec3 n = (rep.params.rotation.transpose() * cur.plane.normal).normalized();
  if (cfg.refine_normal)
    n = detail::refine_normal(ctx.cloud, fresh, n, cfg.delta_ang_deg * kPi / 180.0);
  const Vec3 center = ctx.cloud.centroid(fresh);
  const std::size_t seed = detail::nearest_member(ctx.cloud, fresh, center);
  out.next = make_section(ctx.cloud, std::move(fresh),
                          PlaneHypothesis::from_normal(n.normalized(), center), seed);
  return out;
}

inline GrowMethod choose_method(const CrossSection& cur, const GrowConfig& cfg) {
  return cur.members.size() < cfg.registration_min_points ? GrowMethod::continuation
                                                          : GrowMethod::registration;
}

/// Grows one part from the initial section at `seed_point`. The visited mask is
/// shared by both directions so sections stay pairwise disjoint.
inline Part grow_part(const GrowContext& ctx, std::size_t seed_point, double delta_pd,
                      std::size_t seed_cluster = 0, const GrowConfig& cfg = {}) {
  if (!ctx.cloud.has_normals()) throw InvalidArgument("growth needs normals");
  if (seed_point >= ctx.cloud.size()) throw InvalidArgument("seed point out of range");
  if (!(delta_pd > 0.0)) throw InvalidArgument("delta_pd must be positive");

  const CrossSection init =
      find_cross_section(ctx.cloud, ctx.cnct, delta_pd, seed_point, cfg.initial_search);
  std::vector<char> visited(ctx.cloud.size(), 0);
  for (std::size_t i : init.members) visited[i] = 1;

  struct Run {
    std::vector<CrossSection> sections;
    std::vector<GrowMethod> methods;
    std::vector<double> costs;
    StopReason stop = StopReason::none;
  };
  auto run = [&](double sign) {
    Run r;
    CrossSection cur = init;
    Vec3 dir = sign * init.plane.normal;
    while (true) {
      if (r.sections.size() >= cfg.max_sections_per_direction) {
        r.stop = StopReason::section_limit;
        break;
      }
      if (cur.members.size() < cfg.min_inliers) {
        r.stop = StopReason::no_points;
        break;
      }
      const StepOutcome s = choose_method(cur, cfg) == GrowMethod::continuation
                                ? continuation_step(ctx, cur, dir, delta_pd, visited, cfg)
                                : registration_step(ctx, cur, dir, delta_pd, visited, cfg);
      if (s.stop != StopReason::none) {
        r.stop = s.stop;
        break;
      }
      const Vec3 disp = s.next.center - cur.center;
      if (disp.dot(dir) <= 0.0) {
        r.stop = StopReason::no_points;
        break;
      }
      Vec3 n = s.next.plane.normal;
      if (n.dot(disp) < 0.0) n = -n;
      for (std::size_t i : s.next.members) visited[i] = 1;
      r.sections.push_back(s.next);
      r.methods.push_back(s.method);
      r.costs.push_back(s.pair_cost);
      cur = s.next;
      dir = n;
    }
    return r;
  };
  const Run neg = run(-1.0);
  const Run pos = run(1.0);

  Part p;
  p.seed_cluster = seed_cluster;
  p.seed_point = seed_point;
  p.delta_pd = delta_pd;
  p.stop_negative = neg.stop;
  p.stop_positive = pos.stop;
  for (std::size_t k = neg.sections.size(); k-- > 0;) {
    p.sections.push_back(neg.sections[k]);
    p.methods.push_back(neg.methods[k]);
  }
  // neg.costs[k] links neg section k to its predecessor (k-1, or the seed)
  for (std::size_t k = neg.costs.size(); k-- > 0;) p.pair_costs.push_back(neg.costs[k]);
  p.seed_section = p.sections.size();
  p.sections.push_back(init);
  p.methods.push_back(GrowMethod::initial);
  for (std::size_t k = 0; k < pos.sections.size(); ++k) {
    p.sections.push_back(pos.sections[k]);
    p.methods.push_back(pos.methods[k]);
    p.pair_costs.push_back(pos.costs[k]);
  }
  return p;
}

struct GrowFailure {
  std::size_t seed_cluster = 0;
  std::string reason;
};

struct GrowResult {
  std::vector<Part> parts;
  std::vector<GrowFailure> failures;
};

/// Grows one part per cluster seed. Parts are independent and grown on a pool
/// of `threads` workers (0 = hardware concurrency); output order follows the
/// cluster index regardless of scheduling.
inline GrowResult grow_all(const GrowContext& ctx, const Clustering& clustering,
                           const AdaptiveThresholds& thr, const GrowConfig& cfg = {},
                           unsigned threads = 0) {
  const std::size_t m = clustering.size();
  std::vector<std::optional<Part>> slots(m);
  std::vector<std::string> errors(m);
  auto work = [&](std::size_t c) {
    try {
      const double dpd = cluster_plane_threshold(clustering, thr, c);
      slots[c] = grow_part(ctx, clustering.seeds[c], dpd, c, cfg);
    } catch (const Error& e) {
      errors[c] = e.what();
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = unsigned(std::min<std::size_t>(threads, std::max<std::size_t>(m, 1)));
  if (threads <= 1) {
    for (std::size_t c = 0; c < m; ++c) work(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t c; (c = next.fetch_add(1)) < m;) work(c);
      });
    for (auto& th : pool) th.join();
  }
  GrowResult out;
  for (std::size_t c = 0; c < m; ++c) {
    if (slots[c])
      out.parts.push_back(std::move(*slots[c]));
    else
      out.failures.push_back({c, errors[c]});
  }
  return out;
}

}  // namespace gcskel
