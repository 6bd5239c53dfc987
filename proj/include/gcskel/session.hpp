#pragma once

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gcskel/pipeline.hpp"

namespace gcskel {

/// A request named candidate ids that are unknown or removed.
class SelectionError : public Error {
 public:
  SelectionError(const std::string& what, std::vector<std::size_t> ids)
      : Error(what), ids_(std::move(ids)) {}
  const std::vector<std::size_t>& ids() const { return ids_; }

 private:
  std::vector<std::size_t> ids_;
};

/// Review state over one pipeline run: candidates, the current selection,
/// removed candidates and the last linked skeleton. Not synchronized.
class Session {
 public:
  Session(PointCloud cloud, ConnectivityGraph cnct, std::vector<Part> parts,
          std::vector<PartCosts> costs, std::vector<std::size_t> selected,
          PipelineConfig config, std::string hash)
      : cloud_(std::move(cloud)),
        cnct_(std::move(cnct)),
        parts_(std::move(parts)),
        costs_(std::move(costs)),
        selected_(std::move(selected)),
        solver_selected_(selected_),
        config_(std::move(config)),
        hash_(std::move(hash)) {
    if (costs_.size() != parts_.size()) throw InvalidArgument("one cost record per part");
    std::sort(selected_.begin(), selected_.end());
    solver_selected_ = selected_;
    check_ids(selected_);
    relink_now();
  }

  static Session from_result(const PipelineResult& r) {
    return Session(r.cloud, r.cnct, r.grown.parts, r.costs, r.selected, r.config, r.config_hash);
  }

  /// Reloads a run directory; session.json, when present, restores edits.
  static Session open(const std::filesystem::path& dir) {
    const Json manifest = read_json_file(dir / "manifest.json");
    if (!manifest.value("complete", false))
      throw InvalidArgument("run in " + dir.string() + " is incomplete");
    const PipelineConfig cfg = config_from_json(manifest.at("config"));
    PointCloud cloud = load_cloud(dir / "cloud.xyzn", CloudFormat::xyzn);
    const EdgeList mst = build_mst(cloud, cfg.mst_knn);
    ConnectivityGraph cnct =
        build_connectivity(cloud, compute_thresholds(mst, cloud.size()));
    const Json parts = read_json_file(dir / "parts.json");
    std::vector<Part> cands;
    std::vector<PartCosts> costs;
    for (const Json& p : parts.at("candidates")) {
      cands.push_back(part_from_json(p));
      costs.push_back(costs_from_json(p.at("costs")));
    }
    const Json sel = read_json_file(dir / "selection.json");
    Session s(std::move(cloud), std::move(cnct), std::move(cands), std::move(costs),
              sel.at("chosen").get<std::vector<std::size_t>>(), cfg,
              manifest.at("config_hash").get<std::string>());
    s.dir_ = dir;
    if (std::filesystem::exists(dir / "session.json")) {
      const Json st = read_json_file(dir / "session.json");
      for (std::size_t id : st.at("removed").get<std::vector<std::size_t>>()) s.removed_.insert(id);
      s.selected_ = st.at("selected").get<std::vector<std::size_t>>();
      s.check_ids(s.selected_);
      s.relink_now();
      s.stale_ = false;
    }
    return s;
  }

  std::size_t candidate_count() const { return parts_.size(); }
  const std::vector<std::size_t>& selected() const { return selected_; }
  const std::set<std::size_t>& removed() const { return removed_; }
  bool stale() const { return stale_; }
  const LinkResult& link() const { return link_; }
  const std::string& config_hash() const { return hash_; }

  /// Points shown per candidate in GET /parts.
  static constexpr std::size_t kMemberSample = 64;

  Json parts_json() const {
    Json j = stamp("parts", hash_);
    j["n_points"] = cloud_.size();
    j["stale"] = stale_;
    Json cands = Json::array();
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      if (removed_.count(i)) continue;
      const Part& p = parts_[i];
      const IndexSet mem = p.members();
      Json sample = Json::array();
      const std::size_t stride = std::max<std::size_t>(1, (mem.size() + kMemberSample - 1) / kMemberSample);
      for (std::size_t k = 0; k < mem.size(); k += stride) sample.push_back(to_json(cloud_.position(mem[k])));
      Json axis = Json::array();
      for (const Vec3& v : p.axis()) axis.push_back(to_json(v));
      cands.push_back({{"id", i},
                       {"selected", is_selected(i)},
                       {"solver_selected", std::binary_search(solver_selected_.begin(),
                                                              solver_selected_.end(), i)},
                       {"costs", costs_to_json(costs_[i])},
                       {"section_count", p.sections.size()},
                       {"member_count", mem.size()},
                       {"stop_negative", to_string(p.stop_negative)},
                       {"stop_positive", to_string(p.stop_positive)},
                       {"axis", axis},
                       {"member_sample", sample}});
    }
    j["candidates"] = std::move(cands);
    j["removed"] = removed_;
    return j;
  }

  Json state_json() const {
    Json j = stamp("session", hash_);
    j["selected"] = selected_;
    j["removed"] = removed_;
    j["stale"] = stale_;
    return j;
  }

  /// Replaces the selection. Unknown or removed ids are rejected as a whole.
  Json set_selection(std::vector<std::size_t> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    check_ids(ids);
    if (ids != selected_) {
      selected_ = std::move(ids);
      stale_ = true;
    }
    persist();
    return state_json();
  }

  /// Drops candidates for good; selected ones leave the selection.
  Json remove(std::vector<std::size_t> ids) {
    std::vector<std::size_t> bad;
    for (std::size_t id : ids)
      if (id >= parts_.size() || removed_.count(id)) bad.push_back(id);
    if (!bad.empty()) throw SelectionError("unknown or already removed candidate ids", bad);
    for (std::size_t id : ids) {
      removed_.insert(id);
      auto it = std::find(selected_.begin(), selected_.end(), id);
      if (it != selected_.end()) {
        selected_.erase(it);
        stale_ = true;
      }
    }
    persist();
    return state_json();
  }

  /// Linking input for the current selection; pair with install_link.
  struct LinkJob {
    std::vector<std::size_t> ids;
    std::vector<Part> parts;
  };
  LinkJob link_job() const {
    LinkJob job{selected_, {}};
    for (std::size_t i : selected_) job.parts.push_back(parts_[i]);
    return job;
  }
  LinkResult compute_link(const LinkJob& job) const {
    return link_parts(cloud_, cnct_, job.parts, job.ids, config_.link);
  }
  /// The skeleton stays stale when the selection moved on meanwhile.
  void install_link(const LinkJob& job, LinkResult r) {
    link_ = std::move(r);
    linked_ = job.ids;
    stale_ = linked_ != selected_;
    persist();
  }

  Json relink() {
    relink_now();
    persist();
    return skeleton_json();
  }

  Json skeleton_json() const {
    Json j = stamp("link", hash_);
    j["selected"] = linked_;
    j["stale"] = stale_;
    const Json sk = skeleton_to_json(link_);
    for (auto& [k, v] : sk.items()) j[k] = v;
    return j;
  }

  /// Uniform subsample of at most `max_points` positions (seeded), in index order.
  Json cloud_json(std::size_t max_points = 50000) const {
    const std::size_t n = cloud_.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (max_points < n) {
      std::mt19937_64 rng(config_.seed);
      for (std::size_t i = 0; i < max_points; ++i) {
        const std::size_t j = i + std::size_t(rng() % (n - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(max_points);
      std::sort(idx.begin(), idx.end());
    }
    Json j = stamp("cloud", hash_);
    j["n_points"] = n;
    j["indices"] = idx;
    Json pos = Json::array();
    for (std::size_t i : idx) pos.push_back(to_json(cloud_.position(i)));
    j["positions"] = std::move(pos);
    return j;
  }

 private:
  bool is_selected(std::size_t i) const {
    return std::binary_search(selected_.begin(), selected_.end(), i);
  }

  void check_ids(const std::vector<std::size_t>& ids) const {
    std::vector<std::size_t> bad;
    for (std::size_t id : ids)
      if (id >= parts_.size() || removed_.count(id)) bad.push_back(id);
    if (!bad.empty()) throw SelectionError("selection names unknown or removed candidates", bad);
  }

  void relink_now() {
    const LinkJob job = link_job();
    install_link(job, compute_link(job));
  }

  void persist() const {
    if (!dir_) return;
    write_json_file(*dir_ / "session.json", state_json());
    write_json_file(*dir_ / "session_skeleton.json", skeleton_json());
  }

  PointCloud cloud_;
  ConnectivityGraph cnct_;
  std::vector<Part> parts_;
  std::vector<PartCosts> costs_;
  std::vector<std::size_t> selected_, solver_selected_, linked_;
  std::set<std::size_t> removed_;
  LinkResult link_;
  bool stale_ = false;
  PipelineConfig config_;
  std::string hash_;
  std::optional<std::filesystem::path> dir_;
};

}  // namespace gcskel
