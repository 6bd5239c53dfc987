#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "gcskel/graph.hpp"

using namespace gcskel;

namespace {

PointCloud from_positions(const std::vector<Vec3>& ps) {
  std::vector<OrientedPoint> pts;
  for (const Vec3& p : ps) pts.push_back({p, Vec3::UnitZ()});
  return PointCloud(std::move(pts), true);
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> ps;
  for (std::size_t i = 0; i < n; ++i) ps.emplace_back(u(rng), u(rng), u(rng));
  return from_positions(ps);
}

PointCloud two_blobs(std::size_t per_blob, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<Vec3> ps;
  for (std::size_t i = 0; i < per_blob; ++i) ps.emplace_back(g(rng), g(rng), g(rng));
  for (std::size_t i = 0; i < per_blob; ++i) ps.emplace_back(50 + g(rng), g(rng), g(rng));
  return from_positions(ps);
}

// Prim over the complete graph.
double brute_mst_weight(const PointCloud& c) {
  const std::size_t n = c.size();
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<char> in(n, 0);
  best[0] = 0.0;
  double total = 0.0;
  for (std::size_t it = 0; it < n; ++it) {
    std::size_t u = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!in[i] && (u == n || best[i] < best[u])) u = i;
    in[u] = 1;
    total += best[u];
    for (std::size_t i = 0; i < n; ++i)
      if (!in[i]) best[i] = std::min(best[i], (c.position(i) - c.position(u)).norm());
  }
  return total;
}

double weight(const EdgeList& e) {
  double w = 0.0;
  for (const Edge& x : e.edges) w += x.length;
  return w;
}

AdaptiveThresholds uniform_thresholds(std::vector<double> dmax, double mult = 1.5) {
  AdaptiveThresholds t;
  t.d_max = dmax;
  for (double d : dmax) t.delta_cnct.push_back(mult * d);
  return t;
}

}  // namespace

TEST(BuildMst, LineChain) {
  const auto c = from_positions({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
  const auto mst = build_mst(c);
  ASSERT_EQ(mst.edges.size(), 3u);
  EXPECT_EQ(mst.components, 1u);
  std::set<std::pair<std::size_t, std::size_t>> got;
  for (const Edge& e : mst.edges) got.insert({e.a, e.b});
  EXPECT_EQ(got, (std::set<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 2}, {2, 3}}));
  EXPECT_DOUBLE_EQ(weight(mst), 3.0);
}

TEST(BuildMst, MatchesCompleteGraphOracle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto c = random_cloud(50, seed);
    const auto mst = build_mst(c, 49);
    EXPECT_EQ(mst.edges.size(), 49u);
    EXPECT_NEAR(weight(mst), brute_mst_weight(c), 1e-12);
    for (const Edge& e : mst.edges) {
      EXPECT_LT(e.a, e.b);
      EXPECT_DOUBLE_EQ(e.length, (c.position(e.a) - c.position(e.b)).norm());
    }
  }
}

TEST(BuildMst, DisconnectedKnnGraphGivesForest) {
  const auto c = two_blobs(20, 3);
  const auto mst = build_mst(c, 3);
  EXPECT_EQ(mst.components, 2u);
  EXPECT_EQ(mst.edges.size(), 38u);
}

TEST(BuildMst, RejectsSinglePoint) {
  EXPECT_THROW(build_mst(from_positions({{0, 0, 0}})), InvalidArgument);
}

TEST(Thresholds, ChainExamples) {
  EdgeList unit;
  unit.n_points = 3;
  unit.edges = {{0, 1, 1.0}, {1, 2, 1.0}};
  const auto t = compute_thresholds(unit, 3);
  EXPECT_EQ(t.d_max, (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(t.delta_cnct, (std::vector<double>{1.5, 1.5, 1.5}));

  EdgeList mixed = unit;
  mixed.edges[1].length = 3.0;
  EXPECT_EQ(compute_thresholds(mixed, 3).d_max, (std::vector<double>{1, 3, 3}));
}

TEST(Thresholds, RatioIsExactlyOnePointFive) {
  const auto c = random_cloud(100, 8);
  const auto t = compute_thresholds(build_mst(c), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(t.delta_cnct[i], 1.5 * t.d_max[i]);
}

TEST(Thresholds, IsolatedPointIsAnError) {
  EdgeList e;
  e.n_points = 3;
  e.edges = {{0, 1, 1.0}};
  EXPECT_THROW(compute_thresholds(e, 3), InvalidArgument);
}

TEST(Connectivity, MaxRule) {
  const auto c = from_positions({{0, 0, 0}, {1, 0, 0}});
  EXPECT_TRUE(build_connectivity(c, {{1, 1}, {1.5, 0.1}}).connected(0, 1));
  const auto far = from_positions({{0, 0, 0}, {2, 0, 0}});
  EXPECT_FALSE(build_connectivity(far, uniform_thresholds({1, 1})).connected(0, 1));
}

TEST(Connectivity, MatchesBruteForceAndContainsMst) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto c = random_cloud(seed == 1 ? 200 : 80, seed);
    const auto mst = build_mst(c);
    const auto thr = compute_thresholds(mst, c.size());
    const auto g = build_connectivity(c, thr);
    for (const Edge& e : mst.edges) EXPECT_TRUE(g.connected(e.a, e.b));
    if (seed != 1) continue;
    std::size_t edges = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = i + 1; j < c.size(); ++j) {
        const bool want = (c.position(i) - c.position(j)).norm() <=
                          std::max(thr.delta_cnct[i], thr.delta_cnct[j]);
        EXPECT_EQ(g.connected(i, j), want) << i << "," << j;
        EXPECT_EQ(g.connected(j, i), want);
        edges += want;
      }
    EXPECT_EQ(g.edge_count(), edges);
  }
}

TEST(ConnectedComponent, RestrictedToAllowedSet) {
  // path 0-1-2-3; blocking 2 cuts 3 off
  ConnectivityGraph g({{1}, {0, 2}, {1, 3}, {2}});
  EXPECT_EQ(connected_component(g, 0, {1, 1, 0, 1}), (IndexSet{0, 1}));
  EXPECT_EQ(connected_component(g, 3, {0, 0, 0, 0}), (IndexSet{3}));
  EXPECT_EQ(count_components(g), 1u);
}

TEST(ClusterCloud, SeparatedBlobs) {
  const auto c = two_blobs(30, 2);
  const auto cl = cluster_cloud(c, 2, 7);
  ASSERT_EQ(cl.size(), 2u);
  for (std::size_t i = 1; i < 30; ++i) EXPECT_EQ(cl.labels[i], cl.labels[0]);
  for (std::size_t i = 30; i < 60; ++i) EXPECT_NE(cl.labels[i], cl.labels[0]);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto mem = cl.members(k);
    std::size_t best = mem[0];
    for (std::size_t i : mem)
      if ((c.position(i) - cl.centers[k]).norm() < (c.position(best) - cl.centers[k]).norm()) best = i;
    EXPECT_EQ(cl.seeds[k], best);
    EXPECT_LT((cl.centers[k] - c.centroid(mem)).norm(), 1e-12);
  }
}

TEST(ClusterCloud, OneClusterPerPoint) {
  const auto c = random_cloud(25, 4);
  const auto cl = cluster_cloud(c, 25, 1);
  std::set<std::size_t> labels(cl.labels.begin(), cl.labels.end());
  EXPECT_EQ(labels.size(), 25u);
  for (std::size_t k = 0; k < 25; ++k) EXPECT_EQ(cl.labels[cl.seeds[k]], k);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(cl.seeds[cl.labels[i]], i);
}

TEST(ClusterCloud, AdjacencyFollowsConnectivity) {
  const auto c = random_cloud(300, 6);
  const auto thr = compute_thresholds(build_mst(c), c.size());
  const auto g = build_connectivity(c, thr);
  const auto two = cluster_cloud(c, 2, 3, &g);
  EXPECT_TRUE(two.cluster_adjacency[0].count(1));

  const auto cl = cluster_cloud(c, 12, 3, &g);
  for (std::size_t a = 0; a < 12; ++a)
    for (std::size_t b = 0; b < 12; ++b) {
      if (a == b) continue;
      bool want = false;
      for (std::size_t i = 0; i < c.size() && !want; ++i)
        if (cl.labels[i] == a)
          for (std::size_t j : g.neighbors(i)) want = want || cl.labels[j] == b;
      EXPECT_EQ(cl.cluster_adjacency[a].count(b) == 1, want);
    }
}

TEST(ClusterCloud, DeterministicAndPartitions) {
  const auto c = random_cloud(400, 12);
  const auto a = cluster_cloud(c, 15, 99), b = cluster_cloud(c, 15, 99);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.seeds, b.seeds);
  std::size_t total = 0;
  for (std::size_t k = 0; k < 15; ++k) total += a.members(k).size();
  EXPECT_EQ(total, c.size());
  for (std::size_t l : a.labels) EXPECT_LT(l, 15u);
  EXPECT_THROW(cluster_cloud(c, 0, 1), InvalidArgument);
  EXPECT_THROW(cluster_cloud(c, 401, 1), InvalidArgument);
}

TEST(ClusterPlaneThreshold, LowerMedian) {
  Clustering cl;
  cl.labels = {0, 0, 0, 1, 1, 1, 1, 2, 2};
  cl.centers.resize(3);
  const auto thr = uniform_thresholds({3, 1, 2, 4, 1, 3, 2, 0.7, 0.7});
  EXPECT_EQ(cluster_plane_threshold(cl, thr, 0), 2.0);
  EXPECT_EQ(cluster_plane_threshold(cl, thr, 1), 2.0);
  EXPECT_EQ(cluster_plane_threshold(cl, thr, 2), 0.7);
  EXPECT_THROW(cluster_plane_threshold(cl, thr, 5), InvalidArgument);
}
