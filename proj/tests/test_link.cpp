#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "gcskel/fixtures.hpp"
#include "gcskel/link.hpp"
#include "test_support.hpp"

using namespace gcskel;

namespace {

// Sections of `count` equal slabs along the tube axis, restricted to
// owner-tube points whose axial coordinate lies in [from, to) (fractions).
Part slab_part(const Fixture& f, std::size_t tube, std::size_t count, double from = 0.0,
               double to = 1.0) {
  const Tube& t = f.tubes[tube];
  const Vec3 w = t.axis();
  std::vector<IndexSet> bins(count);
  for (std::size_t i : f.points_of(tube)) {
    const double s = (f.cloud.position(i) - t.a).dot(w) / t.length();
    if (s < from || s >= to) continue;
    const auto k = std::min(count - 1, std::size_t((s - from) / (to - from) * double(count)));
    bins[k].push_back(i);
  }
  Part p;
  for (auto& b : bins) {
    if (b.empty()) continue;
    CrossSection c;
    c.members = b;
    c.center = f.cloud.centroid(b);
    c.plane.normal = w;
    p.sections.push_back(c);
  }
  p.methods.assign(p.sections.size(), GrowMethod::continuation);
  p.pair_costs.assign(p.sections.size() - 1, 1.0);
  return p;
}

// One single-point section per vertex of `axis`, its points appended to `pts`.
Part point_part(const std::vector<Vec3>& axis, std::vector<OrientedPoint>& pts) {
  Part p;
  for (const Vec3& v : axis) {
    CrossSection c;
    c.members = {pts.size()};
    c.center = v;
    pts.push_back({v, Vec3::UnitZ()});
    p.sections.push_back(c);
  }
  p.methods.assign(axis.size(), GrowMethod::continuation);
  p.pair_costs.assign(axis.size() - 1, 1.0);
  return p;
}

ConnectivityGraph graph_from_edges(std::size_t n,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& e) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (auto [a, b] : e) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& v : adj) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return ConnectivityGraph(std::move(adj));
}

bool brute_touch(const IndexSet& a, const IndexSet& b, const ConnectivityGraph& g) {
  for (std::size_t i : a)
    for (std::size_t j : b)
      if (i == j || g.connected(i, j)) return true;
  return false;
}

double sum_to_rays(const Vec3& p, const std::vector<Ray>& rays) {
  double s = 0.0;
  for (const auto& r : rays) s += point_ray_distance(p, r);
  return s;
}

std::vector<Vec3> ring(double radius, double z, std::size_t n) {
  std::vector<Vec3> out;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = 2.0 * kPi * double(k) / double(n);
    out.emplace_back(radius * std::cos(a), radius * std::sin(a), z);
  }
  return out;
}

}  // namespace

TEST(PotentialLinks, MatchesBruteForceOnFivePartFixture) {
  const auto f = t_junction_fixture(2500, 2);
  const auto nb = test::neighborhood(f.cloud);
  const std::vector<Part> parts = {slab_part(f, 0, 4, 0.0, 0.33), slab_part(f, 0, 4, 0.33, 0.66),
                                   slab_part(f, 0, 4, 0.66, 1.0), slab_part(f, 1, 4, 0.0, 0.5),
                                   slab_part(f, 1, 4, 0.5, 1.0)};
  const auto adj = potential_links(parts, nb.cnct);
  EXPECT_EQ(adj.n_parts, 5u);
  std::size_t want_edges = 0;
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) {
      const bool want = brute_touch(parts[a].members(), parts[b].members(), nb.cnct);
      want_edges += want;
      const auto* e = adj.find(a, b);
      ASSERT_EQ(e != nullptr, want) << a << "-" << b;
      if (!e) continue;
      for (int k = 0; k < 2; ++k) {
        EXPECT_EQ(e->ends_a[k],
                  brute_touch(end_section(parts[a], PartEnd(k)).members, parts[b].members(), nb.cnct));
        EXPECT_EQ(e->ends_b[k],
                  brute_touch(end_section(parts[b], PartEnd(k)).members, parts[a].members(), nb.cnct));
      }
    }
  EXPECT_EQ(adj.edges.size(), want_edges);
  // bar pieces chain, the stem top touches the middle bar piece
  EXPECT_TRUE(adj.find(0, 1));
  EXPECT_TRUE(adj.find(1, 2));
  EXPECT_TRUE(adj.find(1, 3));
  EXPECT_TRUE(adj.find(3, 4));
  EXPECT_FALSE(adj.find(0, 4));
}

TEST(PotentialLinks, DistantPartsAreNotAdjacent) {
  std::vector<OrientedPoint> pts;
  const Part a = point_part({{0, 0, 0}, {1, 0, 0}}, pts);
  const Part b = point_part({{10, 0, 0}, {11, 0, 0}}, pts);
  EXPECT_TRUE(potential_links({a, b}, graph_from_edges(4, {{0, 1}, {2, 3}})).edges.empty());
  const auto adj = potential_links({a, b}, graph_from_edges(4, {{0, 1}, {1, 2}, {2, 3}}));
  ASSERT_EQ(adj.edges.size(), 1u);
  EXPECT_EQ(adj.edges[0].ends_a, (std::array<bool, 2>{false, true}));
  EXPECT_EQ(adj.edges[0].ends_b, (std::array<bool, 2>{true, false}));
  EXPECT_EQ(adj.edges[0].near_a, Vec3(1, 0, 0));
  EXPECT_EQ(adj.edges[0].near_b, Vec3(10, 0, 0));
}

TEST(TestMerge, SplitCylinderMerges) {
  const auto f = straight_cylinder_fixture(3000, Vec3::UnitZ(), 4);
  const auto nb = test::neighborhood(f.cloud);
  const Part lo = slab_part(f, 0, 5, 0.0, 0.5), hi = slab_part(f, 0, 5, 0.5, 1.0);
  const auto t = test_merge(f.cloud, lo, PartEnd::back, 0, hi, PartEnd::front, 1);
  EXPECT_EQ(t.verdict, MergeVerdict::accepted) << t.cost_deg << " " << t.scale;
  EXPECT_LT(t.cost_deg, 35.0);
  EXPECT_LT(std::abs(1.0 - t.scale), 0.5);

  std::vector<MergeRecord> merges;
  const auto chains = merge_chains(f.cloud, nb.cnct, {hi, lo}, {1, 0}, {}, &merges);
  ASSERT_EQ(chains.size(), 1u);
  ASSERT_EQ(merges.size(), 1u);
  EXPECT_EQ(chains[0].sources, (std::vector<std::size_t>{0, 1}));
  const auto axis = chains[0].part.axis();
  ASSERT_EQ(axis.size(), 10u);
  const Vec3 first = axis[4] - axis[0], second = axis[9] - axis[5], joint = axis[5] - axis[4];
  EXPECT_LT(rad2deg(angle_between(first, second)), 5.0);
  EXPECT_LT(rad2deg(angle_between(first, joint)), 5.0);
  EXPECT_EQ(chains[0].part.pair_costs.size(), 9u);
  EXPECT_EQ(chains[0].part.pair_costs[4], merges[0].test.cost_deg);
}

TEST(TestMerge, SymmetricInArgumentOrder) {
  const auto f = straight_cylinder_fixture(3000, Vec3(1, 1, 0), 5);
  const Part a = slab_part(f, 0, 4, 0.0, 0.5), b = slab_part(f, 0, 4, 0.5, 1.0);
  for (int ea = 0; ea < 2; ++ea)
    for (int eb = 0; eb < 2; ++eb) {
      const auto x = test_merge(f.cloud, a, PartEnd(ea), 3, b, PartEnd(eb), 7);
      const auto y = test_merge(f.cloud, b, PartEnd(eb), 7, a, PartEnd(ea), 3);
      EXPECT_EQ(x.verdict, y.verdict);
      EXPECT_EQ(x.cost_deg, y.cost_deg);
      EXPECT_EQ(x.scale, y.scale);
    }
}

TEST(TestMerge, ScaleMismatchIsRejected) {
  std::vector<OrientedPoint> pts;
  auto add_band = [&](double r, double z0, double dz) {
    CrossSection c;
    for (int row = 0; row < 3; ++row)
      for (const Vec3& p : ring(r, z0 + row * dz, 24)) {
        c.members.push_back(pts.size());
        pts.push_back({p, Vec3(p.x(), p.y(), 0.0).normalized()});
      }
    Part part;
    part.sections = {c};
    return part;
  };
  const Part small = add_band(1.0, 0.0, 0.1), large = add_band(2.5, 5.0, 0.25);
  PointCloud cloud(std::move(pts), true);
  // x ~ s R y: the lower id is X
  const auto t = test_merge(cloud, small, PartEnd::back, 1, large, PartEnd::front, 0);
  EXPECT_EQ(t.verdict, MergeVerdict::scale) << t.cost_deg << " " << t.scale;
  EXPECT_NEAR(t.scale, 2.5, 0.05);
  const auto u = test_merge(cloud, small, PartEnd::back, 0, large, PartEnd::front, 1);
  EXPECT_EQ(u.verdict, MergeVerdict::scale);
  EXPECT_NEAR(u.scale, 0.4, 0.01);
}

TEST(TestMerge, MismatchedShapesAreRejectedOnAngle) {
  std::vector<OrientedPoint> pts;
  CrossSection band, patch;
  for (int row = 0; row < 3; ++row)
    for (const Vec3& p : ring(1.0, 0.1 * row, 24)) {
      band.members.push_back(pts.size());
      pts.push_back({p, Vec3(p.x(), p.y(), 0.0).normalized()});
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      patch.members.push_back(pts.size());
      pts.push_back({Vec3(0.25 * i, 0.25 * j, 4.0), Vec3::UnitZ()});
    }
  PointCloud cloud(std::move(pts), true);
  Part a, b;
  a.sections = {band};
  b.sections = {patch};
  EXPECT_EQ(test_merge(cloud, a, PartEnd::back, 0, b, PartEnd::front, 1).verdict,
            MergeVerdict::angle);
}

TEST(TestMerge, TinySectionsFailRegistration) {
  std::vector<OrientedPoint> pts;
  const Part a = point_part({{0, 0, 0}, {1, 0, 0}}, pts);
  const Part b = point_part({{2, 0, 0}, {3, 0, 0}}, pts);
  PointCloud cloud(std::move(pts), true);
  EXPECT_EQ(test_merge(cloud, a, PartEnd::back, 0, b, PartEnd::front, 1).verdict,
            MergeVerdict::registration_failure);
}

TEST(MergeChains, OutcomeIndependentOfOrder) {
  const auto f = straight_cylinder_fixture(3000, Vec3::UnitX(), 6);
  const auto nb = test::neighborhood(f.cloud);
  std::vector<Part> parts = {slab_part(f, 0, 3, 0.0, 0.33), slab_part(f, 0, 3, 0.33, 0.66),
                             slab_part(f, 0, 3, 0.66, 1.0)};
  const auto base = merge_chains(f.cloud, nb.cnct, parts, {0, 1, 2}, {});
  ASSERT_EQ(base.size(), 1u);
  const auto want = base[0].part.members();
  std::vector<std::size_t> perm = {0, 1, 2};
  do {
    std::vector<Part> p;
    std::vector<std::size_t> ids;
    for (std::size_t i : perm) {
      p.push_back(parts[i]);
      ids.push_back(i);
    }
    const auto chains = merge_chains(f.cloud, nb.cnct, p, ids, {});
    ASSERT_EQ(chains.size(), 1u);
    EXPECT_EQ(chains[0].part.members(), want);
    EXPECT_EQ(chains[0].sources, base[0].sources);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST(Reversed, RoundTrip) {
  std::vector<OrientedPoint> pts;
  Part p = point_part({{0, 0, 0}, {1, 0, 0}, {3, 0, 0}}, pts);
  p.pair_costs = {1.0, 2.0};
  p.seed_section = 0;
  p.stop_negative = StopReason::no_points;
  const Part r = reversed(p);
  EXPECT_EQ(r.sections.front().center, Vec3(3, 0, 0));
  EXPECT_EQ(r.pair_costs, (std::vector<double>{2.0, 1.0}));
  EXPECT_EQ(r.seed_section, 2u);
  EXPECT_EQ(r.stop_positive, StopReason::no_points);
  EXPECT_EQ(reversed(r).axis(), p.axis());
}

TEST(JunctionPoint, ConcurrentRays) {
  const Vec3 c(0.3, -0.2, 1.0);
  std::vector<Ray> rays;
  for (int k = 0; k < 3; ++k) {
    const double a = 2.0 * kPi * k / 3.0;
    const Vec3 o = c + Vec3(2.0 * std::cos(a), 2.0 * std::sin(a), 0.0);
    rays.push_back({o, (c - o).normalized()});
  }
  EXPECT_LT((junction_point(rays) - c).norm(), 1e-6);
}

TEST(JunctionPoint, ParallelOffsetRays) {
  const std::vector<Ray> rays = {{Vec3(0, 0, 0), Vec3::UnitX()}, {Vec3(0, 1, 0), Vec3::UnitX()}};
  const Vec3 p = junction_point(rays);
  EXPECT_NEAR(sum_to_rays(p, rays), 1.0, 1e-9);
  EXPECT_NEAR(p.z(), 0.0, 1e-12);
  EXPECT_TRUE(std::abs(p.y()) < 1e-12 || std::abs(p.y() - 1.0) < 1e-12);
  EXPECT_GE(p.x(), 0.0);
}

TEST(JunctionPoint, NoWorseThanAnyOriginAndInsideHull) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 30; ++trial) {
    // four ends around a nose, pointing roughly inward
    std::vector<Ray> rays;
    for (int k = 0; k < 4; ++k) {
      const Vec3 o(3.0 * std::cos(k * kPi / 2) + 0.3 * g(rng), 3.0 * std::sin(k * kPi / 2) + 0.3 * g(rng),
                   0.5 * g(rng));
      const Vec3 d = (-o + 0.4 * Vec3(g(rng), g(rng), g(rng))).normalized();
      rays.push_back({o, d});
    }
    const Vec3 j = junction_point(rays);
    // inside the hull of the origins seen from above (they are in angular order)
    for (int k = 0; k < 4; ++k) {
      const Vec3 a = rays[k].origin, b = rays[(k + 1) % 4].origin;
      EXPECT_GE((b - a).x() * (j - a).y() - (b - a).y() * (j - a).x(), 0.0) << trial;
    }
    // the winner minimizes over its own ray, so it beats every ray origin
    for (std::size_t i = 0; i < rays.size(); ++i) {
      double s_origin = 0.0;
      for (std::size_t k = 0; k < rays.size(); ++k)
        if (k != i) s_origin += point_ray_distance(rays[i].origin, rays[k]);
      double s_j = 0.0, best = 1e300;
      for (std::size_t r = 0; r < rays.size(); ++r) {
        s_j = 0.0;
        for (std::size_t k = 0; k < rays.size(); ++k)
          if (k != r) s_j += point_ray_distance(j, rays[k]);
        best = std::min(best, s_j);
      }
      EXPECT_LE(best, s_origin + 1e-9);
    }
  }
  EXPECT_THROW(junction_point({{Vec3::Zero(), Vec3::UnitX()}}), InvalidArgument);
}

TEST(GoldenSection, Parabola) {
  EXPECT_NEAR(golden_section_min([](double t) { return (t - 1.7) * (t - 1.7); }, 0.0, 5.0, 1e-10),
              1.7, 1e-8);
  EXPECT_NEAR(golden_section_min([](double t) { return t; }, 0.0, 5.0, 1e-10), 0.0, 1e-8);
}

TEST(LinkParts, SinglePartIsItsAxis) {
  std::vector<OrientedPoint> pts;
  const Part a = point_part({{0, 0, 0}, {1, 0, 0}, {2, 1, 0}}, pts);
  PointCloud cloud(std::move(pts), true);
  const auto r = link_parts(cloud, graph_from_edges(3, {{0, 1}, {1, 2}}), {a}, {4});
  EXPECT_EQ(r.skeleton.vertices, a.axis());
  ASSERT_EQ(r.skeleton.edges.size(), 2u);
  for (const auto& e : r.skeleton.edges) {
    EXPECT_EQ(e.kind, EdgeKind::axis);
    EXPECT_EQ(e.part, 4);
  }
  EXPECT_TRUE(r.skeleton.connected());
  EXPECT_EQ(r.skeleton.leaf_count(), 2u);
}

TEST(LinkParts, TwoPartsGetOneStraightLink) {
  std::vector<OrientedPoint> pts;
  const Part a = point_part({{0, 0, 0}, {1, 0, 0}}, pts);
  const Part b = point_part({{1.5, 0.5, 0}, {1.5, 2, 0}}, pts);
  PointCloud cloud(std::move(pts), true);
  const auto r = link_parts(cloud, graph_from_edges(4, {{0, 1}, {2, 3}, {1, 2}}), {a, b}, {0, 1});
  EXPECT_TRUE(r.junctions.empty());
  ASSERT_EQ(r.links.size(), 1u);
  EXPECT_EQ(r.links[0].from, Vec3(1, 0, 0));
  EXPECT_EQ(r.links[0].to, Vec3(1.5, 0.5, 0));
  EXPECT_TRUE(r.skeleton.connected());
  EXPECT_EQ(r.skeleton.leaf_count(), 2u);
}

TEST(LinkParts, FourEndsMeetAtOneJunction) {
  std::vector<OrientedPoint> pts;
  std::vector<Part> parts;
  const std::vector<Vec3> dirs = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY()};
  for (const Vec3& d : dirs) parts.push_back(point_part({1.0 * d, 2.0 * d, 3.0 * d}, pts));
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t p = 0; p < 4; ++p) {
    e.push_back({3 * p, 3 * p + 1});
    e.push_back({3 * p + 1, 3 * p + 2});
    for (std::size_t q = p + 1; q < 4; ++q) e.push_back({3 * p, 3 * q});
  }
  PointCloud cloud(std::move(pts), true);
  const auto r = link_parts(cloud, graph_from_edges(12, e), parts, {0, 1, 2, 3});
  ASSERT_EQ(r.junctions.size(), 1u);
  EXPECT_TRUE(r.links.empty());
  EXPECT_LT(r.junctions[0].point.norm(), 1e-6);
  const auto& g = r.skeleton;
  ASSERT_EQ(g.vertices.size(), 13u);
  std::size_t link_edges = 0;
  for (const auto& x : g.edges) link_edges += x.kind == EdgeKind::link;
  EXPECT_EQ(link_edges, 4u);
  const auto deg = g.degrees();
  for (std::size_t v = 0; v < g.vertices.size(); ++v)
    if (g.is_junction[v]) {
      EXPECT_GE(deg[v], 3u);
    }
  EXPECT_EQ(deg[12], 4u);
  EXPECT_TRUE(g.connected());
  EXPECT_EQ(g.leaf_count(), 4u);
}

TEST(LinkParts, TriangleRingGetsPairwiseLinks) {
  std::vector<OrientedPoint> pts;
  const Vec3 a(0, 0, 0), b(4, 0, 0), c(2, 3.4, 0);
  std::vector<Part> parts = {point_part({a + 0.25 * (b - a), a + 0.75 * (b - a)}, pts),
                             point_part({b + 0.25 * (c - b), b + 0.75 * (c - b)}, pts),
                             point_part({c + 0.25 * (a - c), c + 0.75 * (a - c)}, pts)};
  PointCloud cloud(std::move(pts), true);
  const auto g = graph_from_edges(6, {{0, 1}, {2, 3}, {4, 5}, {1, 2}, {3, 4}, {5, 0}});
  const auto r = link_parts(cloud, g, parts, {0, 1, 2});
  EXPECT_TRUE(r.junctions.empty());
  EXPECT_EQ(r.links.size(), 3u);
  EXPECT_TRUE(r.skeleton.connected());
  EXPECT_EQ(r.skeleton.leaf_count(), 0u);
}

TEST(LinkParts, GroundTruthFixturesGiveExpectedTopology) {
  for (const std::string name : {"t-junction", "quadruped"}) {
    const auto f = make_fixture(name, 4000, 3);
    const auto nb = test::neighborhood(f.cloud);
    std::vector<Part> parts;
    std::vector<std::size_t> ids;
    for (std::size_t t = 0; t < f.tubes.size(); ++t) {
      const auto count = std::max<std::size_t>(3, std::size_t(f.tubes[t].length() / 0.5));
      parts.push_back(slab_part(f, t, count));
      ids.push_back(t);
    }
    const auto r = link_parts(f.cloud, nb.cnct, parts, ids);
    const auto& g = r.skeleton;
    EXPECT_TRUE(g.connected()) << name;
    EXPECT_EQ(g.leaf_count(), f.expected_leaves) << name;

    // every axis vertex appears exactly once
    std::size_t axis_vertices = 0;
    for (const auto& ch : r.chains) {
      axis_vertices += ch.part.sections.size();
      for (const Vec3& v : ch.part.axis())
        EXPECT_EQ(std::count(g.vertices.begin(), g.vertices.end(), v), 1);
    }
    std::size_t junctions = std::count(g.is_junction.begin(), g.is_junction.end(), 1);
    EXPECT_EQ(g.vertices.size(), axis_vertices + junctions);
    std::map<long, std::size_t> axis_edges;
    for (const auto& e : g.edges)
      if (e.kind == EdgeKind::axis) ++axis_edges[e.part];
    for (std::size_t t = 0; t < parts.size(); ++t)
      EXPECT_EQ(axis_edges[long(t)], parts[t].sections.size() - 1) << name << " " << t;
  }
}
