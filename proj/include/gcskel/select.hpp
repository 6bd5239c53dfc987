#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "gcskel/grow.hpp"
#include "gcskel/types.hpp"

namespace gcskel {

struct PartCosts {
  double c_reg = 0.0;  // degrees
  double c_fit = 0.0;  // [0, 1]
  double c_len = 0.0;  // model units
  double c_ang = 0.0;  // degrees
  std::array<double, 4> z{0.0, 0.0, 0.0, 0.0};
  double c_ovr = 0.0;
  bool has_pairs = false;  // c_reg backed by at least one registration
};

/// Mean turning angle (degrees) over the interior vertices of a polyline.
inline double mean_turning_angle_deg(const std::vector<Vec3>& axis) {
  if (axis.size() < 3) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 1; k + 1 < axis.size(); ++k) {
    const Vec3 a = axis[k] - axis[k - 1], b = axis[k + 1] - axis[k];
    if (a.norm() == 0.0 || b.norm() == 0.0) continue;
    sum += rad2deg(angle_between(a, b));
  }
  return sum / double(axis.size() - 2);
}

inline double polyline_length(const std::vector<Vec3>& axis) {
  double l = 0.0;
  for (std::size_t k = 1; k < axis.size(); ++k) l += (axis[k] - axis[k - 1]).norm();
  return l;
}

/// Raw components. Parts without any scored pair get c_reg = NaN, filled in by
/// normalize_costs.
inline PartCosts part_costs(const Part& part) {
  if (part.sections.empty()) throw InvalidArgument("part has no sections");
  PartCosts c;
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : part.pair_costs)
    if (std::isfinite(v)) {
      sum += v;
      ++n;
    }
  c.has_pairs = n > 0;
  c.c_reg = n ? sum / double(n) : std::numeric_limits<double>::quiet_NaN();
  double fit = 0.0;
  for (const auto& s : part.sections) fit += s.fit_cost;
  c.c_fit = fit / double(part.sections.size());
  const auto axis = part.axis();
  c.c_len = polyline_length(axis);
  c.c_ang = mean_turning_angle_deg(axis);
  return c;
}

struct NormalizeOptions {
  // false: mean/std computed over parts with registration pairs only
  bool include_degenerate = true;
};

/// z-scores per component (population std, zero variance -> 0) and
/// c_ovr = z_reg + z_fit - z_len + z_ang. Missing c_reg takes the worst
/// observed value.
inline std::vector<PartCosts> normalize_costs(std::vector<PartCosts> all,
                                              const NormalizeOptions& opt = {}) {
  if (all.size() < 2) throw InvalidArgument("normalization needs at least 2 parts");
  double worst = 0.0;
  bool any = false;
  for (const auto& c : all)
    if (c.has_pairs && std::isfinite(c.c_reg)) {
      worst = any ? std::max(worst, c.c_reg) : c.c_reg;
      any = true;
    }
  for (auto& c : all)
    if (!c.has_pairs || !std::isfinite(c.c_reg)) c.c_reg = worst;

  auto value = [](const PartCosts& c, int k) {
    switch (k) {
      case 0: return c.c_reg;
      case 1: return c.c_fit;
      case 2: return c.c_len;
      default: return c.c_ang;
    }
  };
  for (int k = 0; k < 4; ++k) {
    double mean = 0.0, n = 0.0;
    for (const auto& c : all)
      if (opt.include_degenerate || c.has_pairs) {
        mean += value(c, k);
        n += 1.0;
      }
    if (n == 0.0) {
      for (auto& c : all) c.z[k] = 0.0;
      continue;
    }
    mean /= n;
    double var = 0.0;
    for (const auto& c : all)
      if (opt.include_degenerate || c.has_pairs) var += std::pow(value(c, k) - mean, 2);
    const double sd = std::sqrt(var / n);
    // relative guard so rounding noise on identical values reads as zero variance
    const bool flat = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
    for (auto& c : all) c.z[k] = flat ? 0.0 : (value(c, k) - mean) / sd;
  }
  for (auto& c : all) c.c_ovr = c.z[0] + c.z[1] - c.z[2] + c.z[3];
  return all;
}

struct SelectionProblem {
  std::vector<double> costs;
  std::vector<std::int64_t> coverage;
  // overlap[i][j] for i < j; entries with i >= j are ignored (treated as 0)
  std::vector<std::vector<std::int64_t>> overlap;
  std::int64_t n_points = 0;
  double k1 = 90.0, k2 = 5.0;

  std::size_t size() const { return costs.size(); }
  double coverage_need() const { return k1 / 100.0 * double(n_points); }
  double overlap_budget() const { return k2 / 100.0 * double(n_points); }
  std::int64_t q(std::size_t i, std::size_t j) const {
    if (i == j) return 0;
    if (i > j) std::swap(i, j);
    return overlap[i][j];
  }
  void validate() const {
    const std::size_t m = size();
    if (coverage.size() != m || overlap.size() != m)
      throw InvalidArgument("selection problem sizes disagree");
    for (const auto& row : overlap)
      if (row.size() != m) throw InvalidArgument("overlap matrix must be M x M");
    if (!(k1 >= 0.0 && k1 <= 100.0) || !(k2 >= 0.0 && k2 <= 100.0))
      throw InvalidArgument("k1 and k2 must be percentages in [0, 100]");
    for (auto a : coverage)
      if (a < 1) throw InvalidArgument("every candidate must cover at least one point");
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        if (overlap[i][j] != 0) throw InvalidArgument("overlap matrix must be strictly upper triangular");
  }
};

/// Builds the problem from member sets (each sorted ascending).
inline SelectionProblem make_selection_problem(const std::vector<IndexSet>& members,
                                               const std::vector<double>& costs,
                                               std::size_t n_points, double k1, double k2) {
  if (members.size() != costs.size()) throw InvalidArgument("one cost per candidate");
  SelectionProblem p;
  const std::size_t m = members.size();
  p.costs = costs;
  p.n_points = std::int64_t(n_points);
  p.k1 = k1;
  p.k2 = k2;
  p.coverage.resize(m);
  p.overlap.assign(m, std::vector<std::int64_t>(m, 0));
  for (std::size_t i = 0; i < m; ++i) {
    p.coverage[i] = std::int64_t(members[i].size());
    for (std::size_t j = i + 1; j < m; ++j) {
      std::int64_t c = 0;
      auto a = members[i].begin(), b = members[j].begin();
      while (a != members[i].end() && b != members[j].end()) {
        if (*a < *b) ++a;
        else if (*b < *a) ++b;
        else { ++c; ++a; ++b; }
      }
      p.overlap[i][j] = c;
    }
  }
  return p;
}

struct Selection {
  std::vector<char> chosen;
  double objective = 0.0;
  std::int64_t covered_points = 0;
  std::int64_t overlap_points = 0;
  bool feasible = false;
  bool proven_optimal = true;
  std::uint64_t nodes = 0;
};

/// Recomputes objective, x^T a and x^T Q x for a given choice.
inline Selection evaluate_selection(const SelectionProblem& p, std::vector<char> x) {
  Selection s;
  s.chosen = std::move(x);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!s.chosen[i]) continue;
    s.objective += p.costs[i];
    s.covered_points += p.coverage[i];
    for (std::size_t j = i + 1; j < p.size(); ++j)
      if (s.chosen[j]) s.overlap_points += p.overlap[i][j];
  }
  s.feasible = double(s.covered_points) >= p.coverage_need() - 1e-9 &&
               double(s.overlap_points) <= p.overlap_budget() + 1e-9;
  return s;
}

/// Gray-code enumeration of all 2^M subsets.
inline Selection solve_selection_exhaustive(const SelectionProblem& p) {
  p.validate();
  const std::size_t m = p.size();
  if (m > 30) throw InvalidArgument("exhaustive search limited to M <= 30");
  const double need = p.coverage_need() - 1e-9, budget = p.overlap_budget() + 1e-9;
  std::vector<char> x(m, 0);
  double cost = 0.0;
  std::int64_t cov = 0, ovl = 0;
  bool found = false;
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> best_x(m, 0);
  auto consider = [&] {
    if (double(cov) >= need && double(ovl) <= budget && cost < best - 1e-12) {
      best = cost;
      best_x = x;
      found = true;
    }
  };
  consider();
  const std::uint64_t total = std::uint64_t(1) << m;
  for (std::uint64_t g = 1; g < total; ++g) {
    const auto k = std::size_t(__builtin_ctzll(g));
    const bool add = !x[k];
    std::int64_t dq = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (x[j]) dq += p.q(k, j);
    x[k] = add;
    const double sign = add ? 1.0 : -1.0;
    cost += sign * p.costs[k];
    cov += add ? p.coverage[k] : -p.coverage[k];
    ovl += add ? dq : -dq;
    consider();
  }
  Selection s = evaluate_selection(p, found ? best_x : std::vector<char>(m, 0));
  s.feasible = found;
  s.nodes = total;
  return s;
}

struct SolverOptions {
  std::size_t exhaustive_max = 20;
  std::uint64_t node_limit = 200'000'000;
};

namespace detail {

// Depth-first branch-and-bound over candidates sorted by cost. Bounds: overlap
// only grows (prune once over budget); coverage reachable from the undecided
// tail; cost lower bound from the fractional covering relaxation of the tail.
class SelectionBnB {
 public:
  SelectionBnB(const SelectionProblem& p, std::uint64_t node_limit)
      : p_(p), m_(p.size()), limit_(node_limit) {
    order_.resize(m_);
    std::iota(order_.begin(), order_.end(), std::size_t(0));
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return p.costs[a] < p.costs[b]; });
    suffix_cov_.assign(m_ + 1, 0);
    suffix_neg_.assign(m_ + 1, 0.0);
    for (std::size_t d = m_; d-- > 0;) {
      suffix_cov_[d] = suffix_cov_[d + 1] + p.coverage[order_[d]];
      suffix_neg_[d] = suffix_neg_[d + 1] + std::min(0.0, p.costs[order_[d]]);
    }
    // positive-cost tail items sorted by cost per covered point, per depth
    ratio_order_.resize(m_ + 1);
    for (std::size_t d = 0; d <= m_; ++d) {
      auto& r = ratio_order_[d];
      for (std::size_t e = d; e < m_; ++e)
        if (p.costs[order_[e]] > 0.0) r.push_back(order_[e]);
      std::stable_sort(r.begin(), r.end(), [&](std::size_t a, std::size_t b) {
        return p.costs[a] * double(p.coverage[b]) < p.costs[b] * double(p.coverage[a]);
      });
    }
    need_ = p.coverage_need() - 1e-9;
    budget_ = p.overlap_budget() + 1e-9;
    x_.assign(m_, 0);
  }

  Selection run() {
    dfs(0, 0.0, 0, 0);
    Selection s = evaluate_selection(p_, found_ ? best_x_ : std::vector<char>(m_, 0));
    s.feasible = found_;
    s.nodes = nodes_;
    s.proven_optimal = nodes_ < limit_;
    return s;
  }

 private:
  double lower_bound(std::size_t d, double cost, std::int64_t cov) const {
    double lb = cost + suffix_neg_[d];
    double rem = need_ - double(cov);
    // negative-cost items are free coverage in the relaxation
    for (std::size_t e = d; e < m_ && rem > 0.0; ++e)
      if (p_.costs[order_[e]] <= 0.0) rem -= double(p_.coverage[order_[e]]);
    for (std::size_t i : ratio_order_[d]) {
      if (rem <= 0.0) break;
      const double a = double(p_.coverage[i]);
      const double take = std::min(1.0, rem / a);
      lb += take * p_.costs[i];
      rem -= take * a;
    }
    return lb;
  }

  void dfs(std::size_t d, double cost, std::int64_t cov, std::int64_t ovl) {
    if (++nodes_ >= limit_) return;
    if (double(cov) + double(suffix_cov_[d]) < need_) return;
    if (lower_bound(d, cost, cov) >= best_ - 1e-12) return;
    if (d == m_) {
      if (double(cov) >= need_) {
        best_ = cost;
        best_x_ = x_;
        found_ = true;
      }
      return;
    }
    const std::size_t i = order_[d];
    std::int64_t dq = 0;
    for (std::size_t j = 0; j < m_; ++j)
      if (x_[j]) dq += p_.q(i, j);
    if (double(ovl + dq) <= budget_) {
      x_[i] = 1;
      dfs(d + 1, cost + p_.costs[i], cov + p_.coverage[i], ovl + dq);
      x_[i] = 0;
    }
    dfs(d + 1, cost, cov, ovl);
  }

  const SelectionProblem& p_;
  std::size_t m_;
  std::uint64_t limit_;
  std::vector<std::size_t> order_;
  std::vector<std::int64_t> suffix_cov_;
  std::vector<double> suffix_neg_;
  std::vector<std::vector<std::size_t>> ratio_order_;
  double need_ = 0.0, budget_ = 0.0;
  std::vector<char> x_, best_x_;
  double best_ = std::numeric_limits<double>::infinity();
  bool found_ = false;
  std::uint64_t nodes_ = 0;
};

}  // namespace detail

/// Minimizes c^T x subject to x^T a >= k1 N / 100 and x^T Q x <= k2 N / 100.
inline Selection solve_selection(const SelectionProblem& p, const SolverOptions& opt = {}) {
  p.validate();
  if (p.size() <= opt.exhaustive_max) return solve_selection_exhaustive(p);
  return detail::SelectionBnB(p, opt.node_limit).run();
}

namespace detail {

// Is there any x with enough coverage inside the overlap budget?
inline bool selection_feasible(const SelectionProblem& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p.coverage[a] > p.coverage[b]; });
  std::vector<std::int64_t> suffix(m + 1, 0);
  for (std::size_t d = m; d-- > 0;) suffix[d] = suffix[d + 1] + p.coverage[order[d]];
  const double need = p.coverage_need() - 1e-9, budget = p.overlap_budget() + 1e-9;
  std::vector<char> x(m, 0);
  auto dfs = [&](auto&& self, std::size_t d, std::int64_t cov, std::int64_t ovl) -> bool {
    if (double(cov) >= need) return true;
    if (d == m || double(cov + suffix[d]) < need) return false;
    const std::size_t i = order[d];
    std::int64_t dq = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (x[j]) dq += p.q(i, j);
    if (double(ovl + dq) <= budget) {
      x[i] = 1;
      if (self(self, d + 1, cov + p.coverage[i], ovl + dq)) return true;
      x[i] = 0;
    }
    return self(self, d + 1, cov, ovl);
  };
  return dfs(dfs, 0, 0, 0);
}

}  // namespace detail

/// Largest integer k1 in [0, 100] with a feasible selection. The first probe is
/// `start`; the answer is then bracketed by bisection.
inline double max_feasible_k1(SelectionProblem p, double start = 90.0) {
  p.validate();
  auto feasible = [&](int k1) {
    p.k1 = double(k1);
    return detail::selection_feasible(p);
  };
  int lo = 0, hi = 100;  // lo feasible, answer in [lo, hi]
  if (!feasible(0)) throw Error("no selection is feasible even at k1 = 0");
  const int s = std::clamp(int(std::lround(start)), 0, 100);
  if (feasible(s)) lo = s;
  else hi = s - 1;
  while (lo < hi) {
    const int mid = lo + (hi - lo + 1) / 2;
    if (feasible(mid)) lo = mid;
    else hi = mid - 1;
  }
  return double(lo);
}

}  // namespace gcskel
