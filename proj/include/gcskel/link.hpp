#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "gcskel/grow.hpp"
#include "gcskel/types.hpp"

namespace gcskel {

enum class PartEnd { front = 0, back = 1 };

inline const char* to_string(PartEnd e) { return e == PartEnd::front ? "front" : "back"; }

struct LinkConfig {
  double merge_max_deg = 35.0;
  double merge_max_scale_diff = 0.5;
  RegConfig reg;
  double junction_tolerance = 1e-9;
  double junction_range_factor = 3.0;  // search t in [0, factor * diameter]
};

/// Members of the terminal section at `end`.
inline const CrossSection& end_section(const Part& p, PartEnd e) {
  if (p.sections.empty()) throw InvalidArgument("part has no sections");
  return e == PartEnd::front ? p.sections.front() : p.sections.back();
}

inline Vec3 end_point(const Part& p, PartEnd e) { return end_section(p, e).center; }

struct AdjacencyEdge {
  std::size_t a = 0, b = 0;  // a < b, indices into the part list
  std::array<bool, 2> ends_a{false, false};  // which ends of a touch b
  std::array<bool, 2> ends_b{false, false};
  Vec3 near_a = Vec3::Zero(), near_b = Vec3::Zero();  // nearest involved anchors
};

struct PartAdjacency {
  std::size_t n_parts = 0;
  std::vector<AdjacencyEdge> edges;

  const AdjacencyEdge* find(std::size_t a, std::size_t b) const {
    if (a > b) std::swap(a, b);
    for (const auto& e : edges)
      if (e.a == a && e.b == b) return &e;
    return nullptr;
  }
  std::vector<std::size_t> neighbors(std::size_t i) const {
    std::vector<std::size_t> out;
    for (const auto& e : edges) {
      if (e.a == i) out.push_back(e.b);
      if (e.b == i) out.push_back(e.a);
    }
    return out;
  }
};

namespace detail {

// owner lists per point
inline std::vector<std::vector<std::size_t>> point_owners(const std::vector<IndexSet>& members,
                                                          std::size_t n_points) {
  std::vector<std::vector<std::size_t>> own(n_points);
  for (std::size_t p = 0; p < members.size(); ++p)
    for (std::size_t i : members[p]) {
      if (i >= n_points) throw InvalidArgument("member index out of range");
      own[i].push_back(p);
    }
  return own;
}

// Does any point of `pts` lie in part `other` or touch it through `cnct`?
inline bool touches(const IndexSet& pts, std::size_t other,
                    const std::vector<std::vector<std::size_t>>& own,
                    const ConnectivityGraph& cnct) {
  auto owned = [&](std::size_t i) {
    return std::find(own[i].begin(), own[i].end(), other) != own[i].end();
  };
  for (std::size_t i : pts) {
    if (owned(i)) return true;
    for (std::size_t j : cnct.neighbors(i))
      if (owned(j)) return true;
  }
  return false;
}

// Anchor candidates of a part toward a neighbor: involved ends, or every axis
// vertex when the neighbor touches the part away from its ends.
inline std::vector<Vec3> anchors(const Part& p, const std::array<bool, 2>& ends) {
  std::vector<Vec3> out;
  if (ends[0]) out.push_back(end_point(p, PartEnd::front));
  if (ends[1]) out.push_back(end_point(p, PartEnd::back));
  if (out.empty()) out = p.axis();
  return out;
}

}  // namespace detail

/// Parts A and B are adjacent iff some point of A is a point of B or a
/// connectivity neighbor of one.
inline PartAdjacency potential_links(const std::vector<Part>& parts,
                                     const ConnectivityGraph& cnct) {
  std::vector<IndexSet> members;
  members.reserve(parts.size());
  for (const auto& p : parts) members.push_back(p.members());
  const auto own = detail::point_owners(members, cnct.size());

  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < parts.size(); ++a)
    for (std::size_t i : members[a]) {
      for (std::size_t b : own[i])
        if (b != a) pairs.insert({std::min(a, b), std::max(a, b)});
      for (std::size_t j : cnct.neighbors(i))
        for (std::size_t b : own[j])
          if (b != a) pairs.insert({std::min(a, b), std::max(a, b)});
    }

  PartAdjacency adj;
  adj.n_parts = parts.size();
  for (auto [a, b] : pairs) {
    AdjacencyEdge e;
    e.a = a;
    e.b = b;
    for (int k = 0; k < 2; ++k) {
      e.ends_a[k] = detail::touches(end_section(parts[a], PartEnd(k)).members, b, own, cnct);
      e.ends_b[k] = detail::touches(end_section(parts[b], PartEnd(k)).members, a, own, cnct);
    }
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& pa : detail::anchors(parts[a], e.ends_a))
      for (const Vec3& pb : detail::anchors(parts[b], e.ends_b)) {
        const double d = (pa - pb).squaredNorm();
        if (d < best) {
          best = d;
          e.near_a = pa;
          e.near_b = pb;
        }
      }
    adj.edges.push_back(e);
  }
  return adj;
}

enum class MergeVerdict { accepted, angle, scale, registration_failure };

inline const char* to_string(MergeVerdict v) {
  switch (v) {
    case MergeVerdict::accepted: return "accepted";
    case MergeVerdict::angle: return "angle";
    case MergeVerdict::scale: return "scale";
    case MergeVerdict::registration_failure: return "registration-failure";
  }
  return "?";
}

struct MergeTest {
  MergeVerdict verdict = MergeVerdict::registration_failure;
  double cost_deg = std::numeric_limits<double>::quiet_NaN();
  double scale = std::numeric_limits<double>::quiet_NaN();
};

/// Registers the end section of the lower-id part (X) against the other end
/// section (Y); accepted when the registration cost and |1 - s| are below the
/// thresholds.
inline MergeTest test_merge(const PointCloud& cloud, const Part& a, PartEnd ea, std::size_t id_a,
                            const Part& b, PartEnd eb, std::size_t id_b,
                            const LinkConfig& cfg = {}) {
  const bool a_first = id_a <= id_b;
  const CrossSection& x = a_first ? end_section(a, ea) : end_section(b, eb);
  const CrossSection& y = a_first ? end_section(b, eb) : end_section(a, ea);
  MergeTest t;
  if (x.members.size() < 3 || y.members.size() < 3) return t;
  try {
    const auto rep = register_sets(detail::oriented_subset(cloud, x.members),
                                   detail::oriented_subset(cloud, y.members), cfg.reg);
    t.cost_deg = rep.mean_best_match_angle;
    t.scale = rep.params.scale;
  } catch (const NumericalError&) {
    return t;
  }
  if (!(t.cost_deg < cfg.merge_max_deg)) t.verdict = MergeVerdict::angle;
  else if (!(std::abs(1.0 - t.scale) < cfg.merge_max_scale_diff)) t.verdict = MergeVerdict::scale;
  else t.verdict = MergeVerdict::accepted;
  return t;
}

/// Part reversed end to end.
inline Part reversed(Part p) {
  std::reverse(p.sections.begin(), p.sections.end());
  std::reverse(p.methods.begin(), p.methods.end());
  std::reverse(p.pair_costs.begin(), p.pair_costs.end());
  std::swap(p.stop_negative, p.stop_positive);
  if (!p.sections.empty()) p.seed_section = p.sections.size() - 1 - p.seed_section;
  return p;
}

/// Concatenation with end `ea` of a joined to end `eb` of b; `joint_cost` is
/// recorded as the pair cost across the joint.
inline Part merge_parts(const Part& a, PartEnd ea, const Part& b, PartEnd eb,
                        double joint_cost = std::numeric_limits<double>::quiet_NaN()) {
  Part out = ea == PartEnd::back ? a : reversed(a);
  const Part tail = eb == PartEnd::front ? b : reversed(b);
  out.sections.insert(out.sections.end(), tail.sections.begin(), tail.sections.end());
  out.methods.insert(out.methods.end(), tail.methods.begin(), tail.methods.end());
  out.pair_costs.push_back(joint_cost);
  out.pair_costs.insert(out.pair_costs.end(), tail.pair_costs.begin(), tail.pair_costs.end());
  out.stop_positive = tail.stop_positive;
  return out;
}

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();  // unit
};

inline double point_ray_distance(const Vec3& p, const Ray& r) {
  const double t = std::max(0.0, (p - r.origin).dot(r.direction));
  return (p - (r.origin + t * r.direction)).norm();
}

/// Golden-section minimizer of a unimodal function on [lo, hi].
template <class F>
double golden_section_min(F&& f, double lo, double hi, double tol) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
  double fc = f(c), fd = f(d);
  while (hi - lo > tol) {
    if (fc <= fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - g * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + g * (hi - lo);
      fd = f(d);
    }
  }
  const double mid = 0.5 * (lo + hi);
  return f(mid) <= std::min(fc, fd) ? mid : (fc <= fd ? c : d);
}

/// For each ray, the point on it minimizing the summed distance to the other
/// rays; the candidate with the smallest sum wins (earliest ray on ties).
inline Vec3 junction_point(const std::vector<Ray>& rays, double range_factor = 3.0,
                           double tol = 1e-9) {
  if (rays.size() < 2) throw InvalidArgument("junction needs at least two rays");
  double diameter = 0.0;
  for (const auto& a : rays)
    for (const auto& b : rays) diameter = std::max(diameter, (a.origin - b.origin).norm());
  const double t_max = range_factor * std::max(diameter, 1e-12);
  auto sum_to_others = [&](const Vec3& p, std::size_t skip) {
    double s = 0.0;
    for (std::size_t j = 0; j < rays.size(); ++j)
      if (j != skip) s += point_ray_distance(p, rays[j]);
    return s;
  };
  Vec3 best = rays.front().origin;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const Ray& r = rays[i];
    const double t = golden_section_min(
        [&](double s) { return sum_to_others(r.origin + s * r.direction, i); }, 0.0, t_max, tol);
    const Vec3 p = r.origin + t * r.direction;
    const double s = sum_to_others(p, i);
    if (s < best_sum) {
      best_sum = s;
      best = p;
    }
  }
  return best;
}

enum class EdgeKind { axis, merge, link };

inline const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::axis: return "axis";
    case EdgeKind::merge: return "merge";
    case EdgeKind::link: return "link";
  }
  return "?";
}

struct SkeletonEdge {
  std::size_t a = 0, b = 0;
  EdgeKind kind = EdgeKind::axis;
  long part = -1;  // candidate id for axis edges, -1 otherwise
};

struct SkeletonGraph {
  std::vector<Vec3> vertices;
  std::vector<char> is_junction;
  std::vector<SkeletonEdge> edges;

  std::vector<std::size_t> degrees() const {
    std::vector<std::size_t> d(vertices.size(), 0);
    for (const auto& e : edges) {
      ++d[e.a];
      ++d[e.b];
    }
    return d;
  }
  std::size_t leaf_count() const {
    std::size_t c = 0;
    for (auto d : degrees()) c += d == 1;
    return c;
  }
  std::size_t component_count() const {
    UnionFind uf(vertices.size());
    std::size_t comps = vertices.size();
    for (const auto& e : edges)
      if (uf.unite(e.a, e.b)) --comps;
    return comps;
  }
  bool connected() const { return vertices.empty() || component_count() == 1; }
};

/// A selected part, or several merged end to end.
struct Chain {
  std::vector<std::size_t> sources;  // candidate ids in chain order
  Part part;                         // concatenated sections
  std::vector<std::size_t> section_source;
};

struct MergeRecord {
  std::size_t a = 0, b = 0;  // candidate ids
  PartEnd end_a = PartEnd::front, end_b = PartEnd::front;
  MergeTest test;
};

struct JunctionRecord {
  std::vector<std::size_t> chains;
  Vec3 point = Vec3::Zero();
};

struct LinkRecord {
  std::size_t chain_a = 0, chain_b = 0;
  Vec3 from = Vec3::Zero(), to = Vec3::Zero();
};

struct LinkResult {
  std::vector<Chain> chains;
  std::vector<MergeRecord> merges;  // accepted merges only
  PartAdjacency adjacency;          // over chains
  std::vector<JunctionRecord> junctions;
  std::vector<LinkRecord> links;
  SkeletonGraph skeleton;
};

/// Greedy end-to-end merging in ascending registration cost; each end merges
/// at most once and chains never close into loops.
inline std::vector<Chain> merge_chains(const PointCloud& cloud, const ConnectivityGraph& cnct,
                                       const std::vector<Part>& parts,
                                       const std::vector<std::size_t>& ids,
                                       const LinkConfig& cfg,
                                       std::vector<MergeRecord>* accepted_out = nullptr) {
  const std::size_t n = parts.size();
  const PartAdjacency adj = potential_links(parts, cnct);
  std::vector<MergeRecord> cand;
  for (const auto& e : adj.edges)
    for (int ka = 0; ka < 2; ++ka)
      for (int kb = 0; kb < 2; ++kb) {
        if (!e.ends_a[ka] || !e.ends_b[kb]) continue;
        MergeRecord r{ids[e.a], ids[e.b], PartEnd(ka), PartEnd(kb),
                      test_merge(cloud, parts[e.a], PartEnd(ka), ids[e.a], parts[e.b],
                                 PartEnd(kb), ids[e.b], cfg)};
        if (r.test.verdict == MergeVerdict::accepted) cand.push_back(r);
      }
  std::stable_sort(cand.begin(), cand.end(), [](const MergeRecord& x, const MergeRecord& y) {
    if (x.test.cost_deg != y.test.cost_deg) return x.test.cost_deg < y.test.cost_deg;
    return std::tie(x.a, x.b, x.end_a, x.end_b) < std::tie(y.a, y.b, y.end_a, y.end_b);
  });

  std::map<std::size_t, std::size_t> index_of;
  for (std::size_t i = 0; i < n; ++i) index_of[ids[i]] = i;
  // partner[i][end] = (j, end_j) joined at that end
  std::vector<std::array<std::optional<std::pair<std::size_t, PartEnd>>, 2>> partner(n);
  UnionFind uf(n);
  std::vector<MergeRecord> accepted;
  for (const auto& r : cand) {
    const std::size_t i = index_of[r.a], j = index_of[r.b];
    if (partner[i][int(r.end_a)] || partner[j][int(r.end_b)]) continue;
    if (!uf.unite(i, j)) continue;
    partner[i][int(r.end_a)] = {j, r.end_b};
    partner[j][int(r.end_b)] = {i, r.end_a};
    accepted.push_back(r);
  }
  if (accepted_out) *accepted_out = accepted;
  auto joint_cost = [&](std::size_t i, std::size_t j) {
    for (const auto& r : accepted)
      if ((index_of[r.a] == i && index_of[r.b] == j) || (index_of[r.a] == j && index_of[r.b] == i))
        return r.test.cost_deg;
    return std::numeric_limits<double>::quiet_NaN();
  };

  std::vector<char> used(n, 0);
  std::vector<Chain> chains;
  for (std::size_t start = 0; start < n; ++start) {
    if (used[start]) continue;
    // walk out through the front to one free end of the chain
    std::size_t head = start;
    PartEnd head_free = PartEnd::front;
    {
      std::size_t cur = start;
      PartEnd from = PartEnd::back;  // leave through the front
      std::size_t steps = 0;
      while (partner[cur][int(PartEnd(1 - int(from)))] && steps++ < n) {
        const auto nxt = *partner[cur][int(PartEnd(1 - int(from)))];
        cur = nxt.first;
        from = nxt.second;
      }
      head = cur;
      head_free = PartEnd(1 - int(from));
    }
    // (part, entry end) from that free end; the lower-id end part goes first
    std::vector<std::pair<std::size_t, PartEnd>> seq;
    {
      std::size_t cur = head;
      PartEnd entry = head_free;
      while (true) {
        seq.push_back({cur, entry});
        const PartEnd exit = PartEnd(1 - int(entry));
        if (!partner[cur][int(exit)]) break;
        const auto nxt = *partner[cur][int(exit)];
        cur = nxt.first;
        entry = nxt.second;
      }
    }
    if (ids[seq.back().first] < ids[seq.front().first]) {
      // walking backwards, each part is entered through its former exit
      std::reverse(seq.begin(), seq.end());
      for (auto& s : seq) s.second = PartEnd(1 - int(s.second));
    }
    Chain c;
    for (std::size_t k = 0; k < seq.size(); ++k) {
      const auto [pi, entry] = seq[k];
      used[pi] = 1;
      const Part oriented = entry == PartEnd::front ? parts[pi] : reversed(parts[pi]);
      if (k == 0) {
        c.part = oriented;
      } else {
        c.part = merge_parts(c.part, PartEnd::back, oriented, PartEnd::front,
                             joint_cost(seq[k - 1].first, pi));
      }
      c.sources.push_back(ids[pi]);
      c.section_source.insert(c.section_source.end(), oriented.sections.size(), ids[pi]);
    }
    chains.push_back(std::move(c));
  }
  return chains;
}

/// Merges, adjacency, junctions / links and the final skeleton for the
/// selected parts (`ids` are their candidate ids, same order as `parts`).
inline LinkResult link_parts(const PointCloud& cloud, const ConnectivityGraph& cnct,
                             const std::vector<Part>& parts,
                             const std::vector<std::size_t>& ids, const LinkConfig& cfg = {}) {
  if (parts.size() != ids.size()) throw InvalidArgument("one id per part");
  LinkResult res;
  res.chains = merge_chains(cloud, cnct, parts, ids, cfg, &res.merges);
  std::vector<Part> chain_parts;
  for (const auto& c : res.chains) chain_parts.push_back(c.part);
  res.adjacency = potential_links(chain_parts, cnct);
  const std::size_t n = res.chains.size();

  // vertices: every chain axis, in chain order
  SkeletonGraph& g = res.skeleton;
  std::vector<std::size_t> first_vertex(n);
  for (std::size_t c = 0; c < n; ++c) {
    const auto& ch = res.chains[c];
    first_vertex[c] = g.vertices.size();
    const auto axis = ch.part.axis();
    for (std::size_t k = 0; k < axis.size(); ++k) {
      g.vertices.push_back(axis[k]);
      g.is_junction.push_back(0);
      if (k == 0) continue;
      const std::size_t sa = ch.section_source[k - 1], sb = ch.section_source[k];
      g.edges.push_back({g.vertices.size() - 2, g.vertices.size() - 1,
                         sa == sb ? EdgeKind::axis : EdgeKind::merge,
                         sa == sb ? long(sa) : -1});
    }
  }
  auto vertex_of = [&](std::size_t c, const Vec3& p) {
    const std::size_t m = res.chains[c].part.sections.size();
    std::size_t best = first_vertex[c];
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) {
      const double d = (g.vertices[first_vertex[c] + k] - p).squaredNorm();
      if (d < bd) {
        bd = d;
        best = first_vertex[c] + k;
      }
    }
    return best;
  };
  auto end_vertex = [&](std::size_t c, PartEnd e) {
    return e == PartEnd::front ? first_vertex[c]
                               : first_vertex[c] + res.chains[c].part.sections.size() - 1;
  };

  // connected components of the chain adjacency
  UnionFind uf(n);
  for (const auto& e : res.adjacency.edges) uf.unite(e.a, e.b);
  std::map<std::size_t, std::vector<std::size_t>> comps;
  for (std::size_t c = 0; c < n; ++c) comps[uf.find(c)].push_back(c);

  for (const auto& [root, members] : comps) {
    if (members.size() < 2) continue;
    std::vector<const AdjacencyEdge*> edges;
    for (const auto& e : res.adjacency.edges)
      if (uf.find(e.a) == root) edges.push_back(&e);
    // same-end condition: each chain touches the rest through exactly one end
    bool junction = members.size() >= 3;
    std::map<std::size_t, PartEnd> used_end;
    for (std::size_t c : members) {
      std::array<bool, 2> ends{false, false};
      for (const auto* e : edges) {
        if (e->a == c) { ends[0] |= e->ends_a[0]; ends[1] |= e->ends_a[1]; }
        if (e->b == c) { ends[0] |= e->ends_b[0]; ends[1] |= e->ends_b[1]; }
      }
      // a chain whose neighbors only touch its interior has no end to offer
      const bool single_vertex = res.chains[c].part.sections.size() == 1;
      if (single_vertex && (ends[0] || ends[1])) ends = {true, false};
      if (ends[0] == ends[1]) {
        junction = false;
        break;
      }
      used_end[c] = ends[0] ? PartEnd::front : PartEnd::back;
    }
    if (junction) {
      std::vector<Ray> rays;
      Vec3 centroid = Vec3::Zero();
      for (std::size_t c : members) centroid += end_point(res.chains[c].part, used_end[c]);
      centroid /= double(members.size());
      for (std::size_t c : members) {
        const Part& p = res.chains[c].part;
        const PartEnd e = used_end[c];
        const Vec3 o = end_point(p, e);
        Vec3 d = Vec3::Zero();
        if (p.sections.size() >= 2) {
          const Vec3 prev = e == PartEnd::front ? p.sections[1].center
                                                : p.sections[p.sections.size() - 2].center;
          d = o - prev;
        }
        if (d.norm() < 1e-12) d = centroid - o;
        if (d.norm() < 1e-12) d = Vec3::UnitX();
        rays.push_back({o, d.normalized()});
      }
      JunctionRecord j{members, junction_point(rays, cfg.junction_range_factor, cfg.junction_tolerance)};
      const std::size_t jv = g.vertices.size();
      g.vertices.push_back(j.point);
      g.is_junction.push_back(1);
      for (std::size_t c : members) {
        g.edges.push_back({end_vertex(c, used_end[c]), jv, EdgeKind::link, -1});
      }
      res.junctions.push_back(std::move(j));
    } else {
      for (const auto* e : edges) {
        res.links.push_back({e->a, e->b, e->near_a, e->near_b});
        g.edges.push_back({vertex_of(e->a, e->near_a), vertex_of(e->b, e->near_b),
                           EdgeKind::link, -1});
      }
    }
  }
  return res;
}

}  // namespace gcskel
