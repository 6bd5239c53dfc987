#pragma once

#include <atomic>
#include <mutex>
#include <shared_mutex>
#include <string>

#include <httplib.h>

#include "gcskel/session.hpp"

namespace gcskel {

/// HTTP front end over one Session. Mutations are serialized, reads share a
/// lock, and relinking runs outside the lock so reads stay responsive.
class SessionServer {
 public:
  explicit SessionServer(Session& session) : session_(session) { routes(); }

  httplib::Server& http() { return http_; }

  /// Binds to `port` (0 picks a free one) and returns the bound port, or -1.
  int bind(const std::string& host, int port) {
    if (port == 0) return http_.bind_to_any_port(host);
    return http_.bind_to_port(host, port) ? port : -1;
  }
  bool listen_after_bind() { return http_.listen_after_bind(); }
  void stop() { http_.stop(); }
  void wait_until_ready() { http_.wait_until_ready(); }

 private:
  static void reply(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }
  static Json error_body(const std::string& msg, const std::vector<std::size_t>& ids = {}) {
    return {{"schema_version", kSchemaVersion}, {"error", msg}, {"offending_ids", ids}};
  }

  // ids from {"ids": [...]} or {"id": n}
  static std::vector<std::size_t> parse_ids(const std::string& body, const char* list_key) {
    const Json j = Json::parse(body);
    auto id = [](const Json& v) {
      if (!v.is_number_unsigned()) throw InvalidArgument("ids must be non-negative integers");
      return v.get<std::size_t>();
    };
    std::vector<std::size_t> ids;
    if (j.contains(list_key)) {
      if (!j.at(list_key).is_array()) throw InvalidArgument(std::string("'") + list_key + "' must be an array");
      for (const Json& v : j.at(list_key)) ids.push_back(id(v));
      return ids;
    }
    if (j.contains("id")) return {id(j.at("id"))};
    throw InvalidArgument(std::string("request needs '") + list_key + "' or 'id'");
  }

  template <class F>
  void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const SelectionError& e) {
      reply(res, 422, error_body(e.what(), e.ids()));
    } catch (const Json::exception& e) {
      reply(res, 400, error_body(std::string("malformed request: ") + e.what()));
    } catch (const InvalidArgument& e) {
      reply(res, 400, error_body(e.what()));
    } catch (const std::exception& e) {
      reply(res, 500, error_body(e.what()));
    }
  }

  void routes() {
    http_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    http_.Get("/parts", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        std::shared_lock lock(mutex_);
        reply(res, 200, session_.parts_json());
      });
    });
    http_.Get("/skeleton", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        std::shared_lock lock(mutex_);
        reply(res, 200, session_.skeleton_json());
      });
    });
    http_.Get("/cloud", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::size_t max_points = 50000;
        if (req.has_param("max")) {
          max_points = std::stoul(req.get_param_value("max"));
          max_points = std::min<std::size_t>(max_points, 50000);
        }
        std::shared_lock lock(mutex_);
        reply(res, 200, session_.cloud_json(max_points));
      });
    });
    http_.Post("/selection", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto ids = parse_ids(req.body, "selected");
        std::unique_lock lock(mutex_);
        reply(res, 200, session_.set_selection(std::move(ids)));
      });
    });
    http_.Post("/remove", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto ids = parse_ids(req.body, "ids");
        std::unique_lock lock(mutex_);
        reply(res, 200, session_.remove(std::move(ids)));
      });
    });
    http_.Post("/relink", [this](const httplib::Request&, httplib::Response& res) {
      std::unique_lock relink(relink_mutex_, std::try_to_lock);
      if (!relink.owns_lock()) {
        reply(res, 409, error_body("a relink is already running"));
        return;
      }
      guarded(res, [&] {
        Session::LinkJob job;
        {
          std::shared_lock lock(mutex_);
          job = session_.link_job();
        }
        LinkResult r = session_.compute_link(job);
        std::unique_lock lock(mutex_);
        session_.install_link(job, std::move(r));
        reply(res, 200, session_.skeleton_json());
      });
    });
  }

  Session& session_;
  httplib::Server http_;
  std::shared_mutex mutex_;
  std::mutex relink_mutex_;
};

}  // namespace gcskel
