#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcskel/cloud.hpp"
#include "gcskel/graph.hpp"
#include "gcskel/grow.hpp"
#include "gcskel/link.hpp"
#include "gcskel/normals.hpp"
#include "gcskel/select.hpp"

namespace gcskel {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

struct PipelineConfig {
  std::string input;
  std::string format = "auto";  // auto | xyz | xyzn | ply
  std::size_t clusters = 50;
  std::optional<double> k1;     // empty: largest feasible value
  double k1_start = 90.0;
  double k2 = 5.0;
  std::size_t normal_k = 15;
  bool reestimate_normals = false;  // ignore normals carried by the input
  std::size_t mst_knn = 100;
  std::uint64_t seed = 1;
  GrowConfig grow;
  NormalizeOptions normalize;
  SolverOptions solver;
  LinkConfig link;
  unsigned threads = 0;  // execution only; not part of the run identity
};

/// A stage failed; `stage` names it.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------- json helpers

inline Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

// NaN is written as null
inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline double number_or_nan(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline GrowMethod grow_method_from_string(std::string_view s) {
  for (auto m : {GrowMethod::initial, GrowMethod::continuation, GrowMethod::registration})
    if (s == to_string(m)) return m;
  throw InvalidArgument("unknown growth method: " + std::string(s));
}

inline StopReason stop_reason_from_string(std::string_view s) {
  for (auto r : {StopReason::none, StopReason::scale_jump, StopReason::no_points,
                 StopReason::registration_mismatch, StopReason::registration_failure,
                 StopReason::section_limit})
    if (s == to_string(r)) return r;
  throw InvalidArgument("unknown stop reason: " + std::string(s));
}

// ---------------------------------------------------------------- config

inline Json reg_config_to_json(const RegConfig& r) {
  return {{"tolerance", r.tolerance},
          {"max_iterations", r.max_iterations},
          {"bfgs_max_iterations", r.bfgs.max_iterations},
          {"bfgs_gradient_tolerance", r.bfgs.gradient_tolerance},
          {"alpha_max", r.alpha_max},
          {"alpha_init", r.alpha_init},
          {"use_normals", r.use_normals},
          {"sigma_floor_ratio", r.sigma_floor_ratio}};
}

inline Json config_to_json(const PipelineConfig& c) {
  const GrowConfig& g = c.grow;
  Json j;
  j["input"] = c.input;
  j["format"] = c.format;
  j["seed"] = c.seed;
  j["normals"] = {{"k", c.normal_k}, {"reestimate", c.reestimate_normals}};
  j["graph"] = {{"mst_knn", c.mst_knn}};
  j["clusters"] = c.clusters;
  j["grow"] = {{"delta_ang_deg", g.delta_ang_deg},
               {"k_step", g.k_step},
               {"step_factor", g.step_factor},
               {"delta_eg", g.delta_eg},
               {"scale_jump_form", g.jump_form == ScaleJumpForm::verbatim ? "verbatim" : "ratio"},
               {"registration_min_points", g.registration_min_points},
               {"mismatch_deg", g.mismatch_deg},
               {"match_max_angle_deg", g.match.max_angle_deg},
               {"match_distance_factor", g.match.distance_factor},
               {"visited_stop_fraction", g.visited_stop_fraction},
               {"min_relative_size", g.min_relative_size},
               {"min_inliers", g.min_inliers},
               {"seed_reach", g.seed_reach},
               {"max_sections_per_direction", g.max_sections_per_direction},
               {"score_continuation_pairs", g.score_continuation_pairs},
               {"fill_gaps", g.fill_gaps},
               {"refine_normal", g.refine_normal},
               {"initial_angular_step", g.initial_search.angular_step},
               {"registration", reg_config_to_json(g.reg)}};
  j["select"] = {{"k1", c.k1 ? Json(*c.k1) : Json("auto")},
                 {"k1_start", c.k1_start},
                 {"k2", c.k2},
                 {"include_degenerate", c.normalize.include_degenerate},
                 {"exhaustive_max", c.solver.exhaustive_max},
                 {"node_limit", c.solver.node_limit}};
  j["link"] = {{"merge_max_deg", c.link.merge_max_deg},
               {"merge_max_scale_diff", c.link.merge_max_scale_diff},
               {"junction_tolerance", c.link.junction_tolerance},
               {"junction_range_factor", c.link.junction_range_factor},
               {"registration", reg_config_to_json(c.link.reg)}};
  return j;
}

namespace detail {

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.is_object() && j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

inline void reg_config_from_json(const Json& j, RegConfig& r) {
  read_opt(j, "tolerance", r.tolerance);
  read_opt(j, "max_iterations", r.max_iterations);
  read_opt(j, "bfgs_max_iterations", r.bfgs.max_iterations);
  read_opt(j, "bfgs_gradient_tolerance", r.bfgs.gradient_tolerance);
  read_opt(j, "alpha_max", r.alpha_max);
  read_opt(j, "alpha_init", r.alpha_init);
  read_opt(j, "use_normals", r.use_normals);
  read_opt(j, "sigma_floor_ratio", r.sigma_floor_ratio);
}

inline const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  return j.is_object() && j.contains(key) ? j.at(key) : empty;
}

}  // namespace detail

/// Missing keys keep their defaults.
inline PipelineConfig config_from_json(const Json& j) {
  using detail::read_opt;
  using detail::section;
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  PipelineConfig c;
  read_opt(j, "input", c.input);
  read_opt(j, "format", c.format);
  read_opt(j, "seed", c.seed);
  read_opt(j, "clusters", c.clusters);
  read_opt(section(j, "normals"), "k", c.normal_k);
  read_opt(section(j, "normals"), "reestimate", c.reestimate_normals);
  read_opt(section(j, "graph"), "mst_knn", c.mst_knn);

  const Json& g = section(j, "grow");
  GrowConfig& gc = c.grow;
  read_opt(g, "delta_ang_deg", gc.delta_ang_deg);
  read_opt(g, "k_step", gc.k_step);
  read_opt(g, "step_factor", gc.step_factor);
  read_opt(g, "delta_eg", gc.delta_eg);
  std::string form = gc.jump_form == ScaleJumpForm::verbatim ? "verbatim" : "ratio";
  read_opt(g, "scale_jump_form", form);
  if (form == "verbatim") gc.jump_form = ScaleJumpForm::verbatim;
  else if (form == "ratio") gc.jump_form = ScaleJumpForm::ratio;
  else throw InvalidArgument("scale_jump_form must be 'verbatim' or 'ratio'");
  read_opt(g, "registration_min_points", gc.registration_min_points);
  read_opt(g, "mismatch_deg", gc.mismatch_deg);
  read_opt(g, "match_max_angle_deg", gc.match.max_angle_deg);
  read_opt(g, "match_distance_factor", gc.match.distance_factor);
  read_opt(g, "visited_stop_fraction", gc.visited_stop_fraction);
  read_opt(g, "min_relative_size", gc.min_relative_size);
  read_opt(g, "min_inliers", gc.min_inliers);
  read_opt(g, "seed_reach", gc.seed_reach);
  read_opt(g, "max_sections_per_direction", gc.max_sections_per_direction);
  read_opt(g, "score_continuation_pairs", gc.score_continuation_pairs);
  read_opt(g, "fill_gaps", gc.fill_gaps);
  read_opt(g, "refine_normal", gc.refine_normal);
  read_opt(g, "initial_angular_step", gc.initial_search.angular_step);
  detail::reg_config_from_json(section(g, "registration"), gc.reg);

  const Json& s = section(j, "select");
  if (s.contains("k1")) {
    const Json& k = s.at("k1");
    if (k.is_string() && k.get<std::string>() == "auto") c.k1.reset();
    else if (k.is_number()) c.k1 = k.get<double>();
    else throw InvalidArgument("select.k1 must be a number or \"auto\"");
  }
  read_opt(s, "k1_start", c.k1_start);
  read_opt(s, "k2", c.k2);
  read_opt(s, "include_degenerate", c.normalize.include_degenerate);
  read_opt(s, "exhaustive_max", c.solver.exhaustive_max);
  read_opt(s, "node_limit", c.solver.node_limit);

  const Json& l = section(j, "link");
  read_opt(l, "merge_max_deg", c.link.merge_max_deg);
  read_opt(l, "merge_max_scale_diff", c.link.merge_max_scale_diff);
  read_opt(l, "junction_tolerance", c.link.junction_tolerance);
  read_opt(l, "junction_range_factor", c.link.junction_range_factor);
  detail::reg_config_from_json(section(l, "registration"), c.link.reg);
  return c;
}

inline std::string config_hash(const PipelineConfig& c) {
  return hex64(fnv1a64(config_to_json(c).dump()));
}

inline void validate_config(const PipelineConfig& c) {
  if (c.clusters == 0) throw InvalidArgument("clusters must be positive");
  if (c.k1 && !(*c.k1 >= 0.0 && *c.k1 <= 100.0)) throw InvalidArgument("k1 must lie in [0, 100]");
  if (!(c.k2 >= 0.0 && c.k2 <= 100.0)) throw InvalidArgument("k2 must lie in [0, 100]");
  if (!(c.k1_start >= 0.0 && c.k1_start <= 100.0))
    throw InvalidArgument("k1_start must lie in [0, 100]");
  if (c.normal_k < 3) throw InvalidArgument("normal k must be >= 3");
  if (c.mst_knn < 1) throw InvalidArgument("mst_knn must be positive");
}

// ---------------------------------------------------------------- artifacts

inline Json stamp(const std::string& stage, const std::string& hash) {
  return {{"schema_version", kSchemaVersion}, {"stage", stage}, {"config_hash", hash}};
}

inline Json costs_to_json(const PartCosts& c) {
  const auto n = number_or_null;
  return {{"c_reg", n(c.c_reg)}, {"c_fit", n(c.c_fit)}, {"c_len", n(c.c_len)}, {"c_ang", n(c.c_ang)},
          {"z", Json::array({n(c.z[0]), n(c.z[1]), n(c.z[2]), n(c.z[3])})}, {"c_ovr", n(c.c_ovr)},
          {"has_pairs", c.has_pairs}};
}

inline PartCosts costs_from_json(const Json& j) {
  PartCosts c;
  c.c_reg = number_or_nan(j.at("c_reg"));
  c.c_fit = number_or_nan(j.at("c_fit"));
  c.c_len = number_or_nan(j.at("c_len"));
  c.c_ang = number_or_nan(j.at("c_ang"));
  for (int k = 0; k < 4; ++k) c.z[k] = number_or_nan(j.at("z").at(k));
  c.c_ovr = number_or_nan(j.at("c_ovr"));
  c.has_pairs = j.at("has_pairs").get<bool>();
  return c;
}

inline Json part_to_json(const Part& p, std::size_t id) {
  Json sections = Json::array();
  for (std::size_t k = 0; k < p.sections.size(); ++k) {
    const CrossSection& s = p.sections[k];
    sections.push_back({{"center", to_json(s.center)},
                        {"normal", to_json(s.plane.normal)},
                        {"anchor", to_json(s.plane.anchor)},
                        {"scale", Json::array({s.scale.e1, s.scale.e2})},
                        {"seed", s.seed_index},
                        {"fit_cost", s.fit_cost},
                        {"method", k < p.methods.size() ? to_string(p.methods[k]) : "initial"},
                        {"members", s.members}});
  }
  Json pair_costs = Json::array();
  for (double c : p.pair_costs) pair_costs.push_back(c);
  return {{"id", id},
          {"seed_cluster", p.seed_cluster},
          {"seed_point", p.seed_point},
          {"seed_section", p.seed_section},
          {"delta_pd", p.delta_pd},
          {"stop_negative", to_string(p.stop_negative)},
          {"stop_positive", to_string(p.stop_positive)},
          {"pair_costs", pair_costs},
          {"sections", sections}};
}

inline Part part_from_json(const Json& j) {
  Part p;
  p.seed_cluster = j.at("seed_cluster").get<std::size_t>();
  p.seed_point = j.at("seed_point").get<std::size_t>();
  p.seed_section = j.at("seed_section").get<std::size_t>();
  p.delta_pd = j.at("delta_pd").get<double>();
  p.stop_negative = stop_reason_from_string(j.at("stop_negative").get<std::string>());
  p.stop_positive = stop_reason_from_string(j.at("stop_positive").get<std::string>());
  for (const Json& c : j.at("pair_costs")) p.pair_costs.push_back(number_or_nan(c));
  for (const Json& s : j.at("sections")) {
    CrossSection c;
    c.center = vec3_from_json(s.at("center"));
    c.plane = PlaneHypothesis::from_normal(vec3_from_json(s.at("normal")),
                                           vec3_from_json(s.at("anchor")));
    c.scale = {s.at("scale").at(0).get<double>(), s.at("scale").at(1).get<double>()};
    c.seed_index = s.at("seed").get<std::size_t>();
    c.fit_cost = s.at("fit_cost").get<double>();
    c.members = s.at("members").get<IndexSet>();
    p.methods.push_back(grow_method_from_string(s.at("method").get<std::string>()));
    p.sections.push_back(std::move(c));
  }
  if (p.sections.empty()) throw InvalidArgument("part has no sections");
  return p;
}

inline Json skeleton_to_json(const LinkResult& r) {
  const SkeletonGraph& g = r.skeleton;
  Json vertices = Json::array(), junction = Json::array(), edges = Json::array();
  for (std::size_t v = 0; v < g.vertices.size(); ++v) {
    vertices.push_back(to_json(g.vertices[v]));
    junction.push_back(bool(g.is_junction[v]));
  }
  for (const auto& e : g.edges)
    edges.push_back({{"a", e.a}, {"b", e.b}, {"kind", to_string(e.kind)},
                     {"part", e.part < 0 ? Json(nullptr) : Json(e.part)}});
  Json chains = Json::array();
  for (const auto& c : r.chains) chains.push_back({{"sources", c.sources}});
  Json merges = Json::array();
  for (const auto& m : r.merges)
    merges.push_back({{"a", m.a}, {"b", m.b}, {"end_a", to_string(m.end_a)},
                      {"end_b", to_string(m.end_b)}, {"cost_deg", m.test.cost_deg},
                      {"scale", m.test.scale}});
  Json junctions = Json::array();
  for (const auto& j : r.junctions)
    junctions.push_back({{"chains", j.chains}, {"point", to_json(j.point)}});
  Json links = Json::array();
  for (const auto& l : r.links)
    links.push_back({{"chain_a", l.chain_a}, {"chain_b", l.chain_b}, {"from", to_json(l.from)},
                     {"to", to_json(l.to)}});
  return {{"vertices", vertices},
          {"junction", junction},
          {"edges", edges},
          {"chains", chains},
          {"merges", merges},
          {"junctions", junctions},
          {"links", links},
          {"leaf_count", g.leaf_count()},
          {"component_count", g.vertices.empty() ? 0 : g.component_count()}};
}

/// `v` lines, then one `l` record per edge (1-based).
inline void write_obj(std::ostream& out, const SkeletonGraph& g) {
  char buf[128];
  for (const Vec3& v : g.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const auto& e : g.edges) out << "l " << e.a + 1 << ' ' << e.b + 1 << '\n';
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- run

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct PipelineResult {
  PipelineConfig config;
  std::string config_hash;
  PointCloud cloud;
  AdaptiveThresholds thresholds;
  ConnectivityGraph cnct;
  Clustering clustering;
  GrowResult grown;                 // candidates, id = index
  std::vector<PartCosts> costs;     // one per candidate
  SelectionProblem problem;
  bool k1_auto = true;
  Selection selection;
  std::vector<std::size_t> selected;  // candidate ids
  LinkResult link;
  std::vector<StageTiming> timings;  // not written to artifacts
};

inline Json parts_artifact(const PipelineResult& r) {
  Json j = stamp("parts", r.config_hash);
  j["n_points"] = r.cloud.size();
  Json cands = Json::array();
  for (std::size_t i = 0; i < r.grown.parts.size(); ++i) {
    Json p = part_to_json(r.grown.parts[i], i);
    p["costs"] = costs_to_json(r.costs[i]);
    cands.push_back(std::move(p));
  }
  j["candidates"] = std::move(cands);
  Json fails = Json::array();
  for (const auto& f : r.grown.failures)
    fails.push_back({{"seed_cluster", f.seed_cluster}, {"reason", f.reason}});
  j["failures"] = std::move(fails);
  return j;
}

inline Json selection_artifact(const PipelineResult& r) {
  Json j = stamp("select", r.config_hash);
  const auto& p = r.problem;
  const auto& s = r.selection;
  j["n_points"] = p.n_points;
  j["k1"] = p.k1;
  j["k1_auto"] = r.k1_auto;
  j["k2"] = p.k2;
  j["coverage_need"] = p.coverage_need();
  j["overlap_budget"] = p.overlap_budget();
  j["feasible"] = s.feasible;
  j["proven_optimal"] = s.proven_optimal;
  j["objective"] = s.objective;
  j["covered_points"] = s.covered_points;
  j["overlap_points"] = s.overlap_points;
  j["chosen"] = r.selected;
  Json parts = Json::array();
  for (std::size_t i = 0; i < r.costs.size(); ++i)
    parts.push_back({{"id", i}, {"chosen", bool(s.chosen[i])}, {"coverage", p.coverage[i]},
                     {"costs", costs_to_json(r.costs[i])}});
  j["parts"] = std::move(parts);
  return j;
}

inline Json skeleton_artifact(const PipelineResult& r) {
  Json j = stamp("link", r.config_hash);
  j["selected"] = r.selected;
  const Json sk = skeleton_to_json(r.link);
  for (auto& [k, v] : sk.items()) j[k] = v;
  return j;
}

namespace detail {

inline CloudFormat parse_format(const std::string& f, const std::string& path) {
  if (f == "auto") return format_from_path(path);
  if (f == "xyz") return CloudFormat::xyz;
  if (f == "xyzn") return CloudFormat::xyzn;
  if (f == "ply") return CloudFormat::ply_ascii;
  throw InvalidArgument("unknown format '" + f + "'");
}

}  // namespace detail

/// Normals, graph, clustering, growth, costs, selection and linking. With an
/// output directory, each artifact is written as soon as its stage completes
/// and manifest.json records which stages finished. `preloaded` replaces the
/// load stage.
inline PipelineResult run_pipeline(const PipelineConfig& cfg,
                                   const std::optional<std::filesystem::path>& out_dir = {},
                                   const PointCloud* preloaded = nullptr) {
  validate_config(cfg);
  PipelineResult r;
  r.config = cfg;
  r.config_hash = config_hash(cfg);
  Json done = Json::array(), artifacts = Json::array();
  if (out_dir) std::filesystem::create_directories(*out_dir);

  auto manifest = [&](const std::optional<PipelineError>& err) {
    if (!out_dir) return;
    Json m = stamp("manifest", r.config_hash);
    m["config"] = config_to_json(cfg);
    m["stages_completed"] = done;
    m["artifacts"] = artifacts;
    m["complete"] = !err.has_value();
    m["error"] = err ? Json{{"stage", err->stage()}, {"message", err->what()}} : Json(nullptr);
    write_json_file(*out_dir / "manifest.json", m);
  };
  auto emit = [&](const std::string& name, const Json& j) {
    if (!out_dir) return;
    write_json_file(*out_dir / name, j);
    artifacts.push_back(name);
  };
  auto stage = [&](const std::string& name, auto&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const std::exception& e) {
      PipelineError err(name, e.what());
      manifest(err);
      throw err;
    }
    r.timings.push_back(
        {name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    done.push_back(name);
  };

  stage("load", [&] {
    if (preloaded) r.cloud = *preloaded;
    else r.cloud = load_cloud(cfg.input, detail::parse_format(cfg.format, cfg.input));
    if (r.cloud.size() < 3) throw InvalidArgument("cloud needs at least 3 points");
  });

  EdgeList mst;
  stage("normals", [&] {
    mst = build_mst(r.cloud, cfg.mst_knn);
    if (mst.components != 1)
      throw DisconnectedGraphError("the neighbor graph of the cloud is disconnected",
                                   mst.components);
    if (!r.cloud.has_normals() || cfg.reestimate_normals) {
      auto est = estimate_normals(r.cloud, cfg.normal_k);
      r.cloud = orient_normals(est.cloud, mst);
    }
    if (out_dir) {
      save_cloud(*out_dir / "cloud.xyzn", r.cloud);
      artifacts.push_back("cloud.xyzn");
    }
  });

  stage("graph", [&] {
    r.thresholds = compute_thresholds(mst, r.cloud.size());
    r.cnct = build_connectivity(r.cloud, r.thresholds);
  });

  stage("cluster", [&] {
    if (cfg.clusters > r.cloud.size())
      throw InvalidArgument("more clusters than points");
    r.clustering = cluster_cloud(r.cloud, cfg.clusters, cfg.seed, &r.cnct);
  });

  stage("grow", [&] {
    const GrowContext ctx{r.cloud, r.cnct};
    r.grown = grow_all(ctx, r.clustering, r.thresholds, cfg.grow, cfg.threads);
    if (r.grown.parts.empty()) throw Error("no candidate part could be grown");
  });

  stage("costs", [&] {
    for (const auto& p : r.grown.parts) r.costs.push_back(part_costs(p));
    if (r.costs.size() >= 2) {
      r.costs = normalize_costs(r.costs, cfg.normalize);
    }
    emit("parts.json", parts_artifact(r));
  });

  stage("select", [&] {
    std::vector<IndexSet> members;
    std::vector<double> c;
    for (std::size_t i = 0; i < r.grown.parts.size(); ++i) {
      members.push_back(r.grown.parts[i].members());
      c.push_back(r.costs[i].c_ovr);
    }
    r.problem = make_selection_problem(members, c, r.cloud.size(), cfg.k1.value_or(cfg.k1_start),
                                       cfg.k2);
    r.k1_auto = !cfg.k1.has_value();
    if (r.k1_auto) r.problem.k1 = max_feasible_k1(r.problem, cfg.k1_start);
    r.selection = solve_selection(r.problem, cfg.solver);
    if (!r.selection.feasible) throw Error("selection problem is infeasible");
    for (std::size_t i = 0; i < r.selection.chosen.size(); ++i)
      if (r.selection.chosen[i]) r.selected.push_back(i);
    emit("selection.json", selection_artifact(r));
  });

  stage("link", [&] {
    std::vector<Part> chosen;
    for (std::size_t i : r.selected) chosen.push_back(r.grown.parts[i]);
    r.link = link_parts(r.cloud, r.cnct, chosen, r.selected, cfg.link);
    emit("skeleton.json", skeleton_artifact(r));
    if (out_dir) {
      std::ofstream obj(*out_dir / "skeleton.obj", std::ios::binary);
      if (!obj) throw InvalidArgument("cannot write skeleton.obj");
      write_obj(obj, r.link.skeleton);
      artifacts.push_back("skeleton.obj");
    }
  });

  manifest(std::nullopt);
  return r;
}

}  // namespace gcskel
