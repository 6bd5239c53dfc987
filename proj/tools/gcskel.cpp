// gcskel: run the skeleton pipeline, serve a review session, generate
// synthetic shapes.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gcskel/fixtures.hpp"
#include "gcskel/pipeline.hpp"
#include "gcskel/server.hpp"
#include "gcskel/synth.hpp"

using namespace gcskel;

namespace {

SessionServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_run(const std::string& config_path, PipelineConfig cfg, const std::string& k1,
            const std::string& out, bool quiet) {
  if (!config_path.empty()) {
    // file values first, explicit flags already applied on top by the caller
    const PipelineConfig file = config_from_json(read_json_file(config_path));
    cfg.grow = file.grow;
    cfg.link = file.link;
    cfg.normalize = file.normalize;
    cfg.solver = file.solver;
  }
  if (k1 == "auto") cfg.k1.reset();
  else cfg.k1 = std::stod(k1);
  try {
    const auto r = run_pipeline(cfg, std::filesystem::path(out));
    if (!quiet) {
      for (const auto& t : r.timings) std::fprintf(stderr, "%-8s %8.2f s\n", t.stage.c_str(), t.seconds);
      std::printf("points %zu  candidates %zu  selected %zu  k1 %.0f  chains %zu  junctions %zu  "
                  "leaves %zu  components %zu\n",
                  r.cloud.size(), r.grown.parts.size(), r.selected.size(), r.problem.k1,
                  r.link.chains.size(), r.link.junctions.size(), r.link.skeleton.leaf_count(),
                  r.link.skeleton.component_count());
      std::printf("artifacts in %s (config %s)\n", out.c_str(), r.config_hash.c_str());
    }
    return 0;
  } catch (const PipelineError& e) {
    std::fprintf(stderr, "error in stage '%s': %s\n", e.stage().c_str(), e.what());
    return 2;
  }
}

int cmd_serve(const std::string& dir, const std::string& host, int port) {
  Session session = Session::open(dir);
  SessionServer server(session);
  const int bound = server.bind(host, port);
  if (bound < 0) {
    std::fprintf(stderr, "cannot bind %s:%d\n", host.c_str(), port);
    return 1;
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::printf("serving %s on http://%s:%d\n", dir.c_str(), host.c_str(), bound);
  std::fflush(stdout);
  server.listen_after_bind();
  g_server = nullptr;
  return 0;
}

int cmd_fixture(const std::string& name, std::size_t points, std::uint64_t seed,
                const std::string& out) {
  const auto f = make_fixture(name, points, seed);
  save_cloud(out, f.cloud);
  std::printf("%s: %zu points, %zu leaves expected\n", name.c_str(), f.cloud.size(),
              f.expected_leaves);
  return 0;
}

int cmd_synth_gc(std::uint64_t seed, const std::string& sampling, std::size_t axis,
                 std::size_t contour, const std::string& out) {
  std::mt19937_64 rng(seed);
  GCSpec spec = random_gc_spec(rng, sampling_from_string(sampling));
  spec.axis_samples = axis;
  spec.contour_samples = contour;
  const auto gc = generate_gc(spec);
  save_cloud(out, gc.cloud);
  std::printf("C = (%.3f, %.3f, %.3f), %zu points\n", spec.c1, spec.c2, spec.c3, gc.cloud.size());
  return 0;
}

int cmd_synth_trials(std::size_t trials, std::uint64_t seed, const std::string& sampling,
                     std::size_t dest_width) {
  const SamplingMode mode = sampling_from_string(sampling);
  struct Sum {
    double rot = 0, plane = 0, cost = 0, scale = 0;
    std::size_t ok = 0, failed = 0;
    void add(const TrialRecord& r) {
      if (r.failed) {
        ++failed;
        return;
      }
      rot += r.rot_err;
      plane += r.plane_err_deg;
      cost += r.reg_cost_deg;
      scale += r.scale_err;
      ++ok;
    }
    Json json() const {
      const double n = ok ? double(ok) : 1.0;
      return {{"trials", ok}, {"failed", failed}, {"rotation_error", rot / n},
              {"plane_error_deg", plane / n}, {"registration_cost_deg", cost / n},
              {"scale_error", scale / n}};
    }
  } with, without;
  for (std::size_t t = 0; t < trials; ++t) {
    TrialOptions opt;
    opt.dest_width = dest_width;
    const auto p = run_paired_trial(t, mode, seed, opt);
    with.add(p.with_normals);
    without.add(p.without_normals);
  }
  std::cout << Json{{"sampling", sampling}, {"dest_width", dest_width}, {"with_normals", with.json()},
                    {"without_normals", without.json()}}
                   .dump(1)
            << '\n';
  return 0;
}

int cmd_synth_neighborhood(std::size_t trials, std::uint64_t seed) {
  const auto r = run_neighborhood_size_experiment(trials, seed);
  std::cout << Json{{"trials", r.trials}, {"worse_with_normals", r.proportion_with},
                    {"worse_without_normals", r.proportion_without}}
                   .dump(1)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curve skeletons from point clouds via generalized-cylinder parts"};
  app.require_subcommand(1);

  PipelineConfig cfg;
  std::string k1 = "auto", out, config_path;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run the full pipeline on a point cloud");
  run->add_option("--input", cfg.input, "point cloud (.xyz, .xyzn, .ply)")->required();
  run->add_option("--format", cfg.format, "auto, xyz, xyzn or ply")->capture_default_str();
  run->add_option("--clusters", cfg.clusters, "number of seed clusters")->capture_default_str();
  run->add_option("--k1", k1, "coverage percentage or 'auto'")->capture_default_str();
  run->add_option("--k1-start", cfg.k1_start, "first probe of the auto k1 search")->capture_default_str();
  run->add_option("--k2", cfg.k2, "overlap budget percentage")->capture_default_str();
  run->add_option("--seed", cfg.seed, "clustering seed")->capture_default_str();
  run->add_option("--normal-k", cfg.normal_k, "neighbors for normal estimation")->capture_default_str();
  run->add_flag("--reestimate-normals", cfg.reestimate_normals, "ignore normals in the input");
  run->add_option("--threads", cfg.threads, "growth workers (0 = all cores)")->capture_default_str();
  run->add_option("--config", config_path, "JSON file with grow/select/link settings");
  run->add_option("--out", out, "output directory")->required();
  run->add_flag("--quiet", quiet);

  std::string session_dir, host = "127.0.0.1";
  int port = 8787;
  auto* serve = app.add_subcommand("serve", "serve a finished run for review");
  serve->add_option("--session", session_dir, "run output directory")->required();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port, "0 picks a free port")->capture_default_str();

  std::string fixture_name = "quadruped";
  std::size_t fixture_points = 5000;
  std::uint64_t fixture_seed = 1;
  std::string fixture_out;
  auto* fixture = app.add_subcommand("fixture", "write a synthetic tube fixture");
  fixture->add_option("--name", fixture_name, "cylinder, t-junction or quadruped")->capture_default_str();
  fixture->add_option("--points", fixture_points)->capture_default_str();
  fixture->add_option("--seed", fixture_seed)->capture_default_str();
  fixture->add_option("--out", fixture_out, "output .xyzn file")->required();

  auto* synth = app.add_subcommand("synth", "synthetic generalized cylinders");
  synth->require_subcommand(1);
  std::uint64_t synth_seed = 1;
  std::string sampling = "regular", synth_out;
  std::size_t axis_samples = 100, contour_samples = 64, trials = 100, dest_width = 3;
  auto* gc = synth->add_subcommand("gc", "write one random generalized cylinder");
  gc->add_option("--seed", synth_seed)->capture_default_str();
  gc->add_option("--sampling", sampling, "regular or random")->capture_default_str();
  gc->add_option("--axis-samples", axis_samples)->capture_default_str();
  gc->add_option("--contour-samples", contour_samples)->capture_default_str();
  gc->add_option("--out", synth_out, "output .xyzn file")->required();
  auto* paired = synth->add_subcommand("trials", "registration with vs without normals");
  paired->add_option("--trials", trials)->capture_default_str();
  paired->add_option("--seed", synth_seed)->capture_default_str();
  paired->add_option("--sampling", sampling)->capture_default_str();
  paired->add_option("--dest-width", dest_width, "slices in the destination band (odd)")
      ->capture_default_str();
  auto* nbhd = synth->add_subcommand("neighborhood", "destination-size robustness");
  nbhd->add_option("--trials", trials)->capture_default_str();
  nbhd->add_option("--seed", synth_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, cfg, k1, out, quiet);
    if (*serve) return cmd_serve(session_dir, host, port);
    if (*fixture) return cmd_fixture(fixture_name, fixture_points, fixture_seed, fixture_out);
    if (*gc) return cmd_synth_gc(synth_seed, sampling, axis_samples, contour_samples, synth_out);
    if (*paired) return cmd_synth_trials(trials, synth_seed, sampling, dest_width);
    if (*nbhd) return cmd_synth_neighborhood(trials, synth_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
