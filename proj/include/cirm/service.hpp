#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cirm/intervene.hpp"
#include "cirm/models.hpp"
#include "cirm/realigner.hpp"
#include "cirm/world.hpp"

namespace cirm {

/// A loaded model the service can open sessions on.
struct ServedModel {
  std::string id;
  std::shared_ptr<const ConceptModel> model;
  std::shared_ptr<const Realigner> realigner;  // may be null
  SelectionUnits units;
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;
  /// Samples addressable by index in create requests.
  Dataset samples;
};

/// Fills units and names from `world` (or generic ones when absent).
ServedModel make_served_model(std::string id, std::shared_ptr<const ConceptModel> model,
                              std::shared_ptr<const Realigner> realigner,
                              const GenerativeWorld* world, Dataset samples);

struct ServiceConfig {
  std::chrono::seconds ttl{3600};
  /// Sessions are replayed from and written to this file when set.
  std::optional<std::filesystem::path> snapshot_path;
  /// Exposes the ground truth of dataset samples in payloads.
  bool debug = false;
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// Session bookkeeping behind the HTTP routes. Every state change goes
/// through TrajectoryRunner::intervene.
class SessionManager {
 public:
  SessionManager(std::vector<ServedModel> models, ServiceConfig config = {});

  /// Routes one request. `path` excludes the query string.
  ServiceResponse handle(const std::string& method, const std::string& path,
                         const std::string& body);

  ServiceResponse create_session(const nlohmann::json& request);
  ServiceResponse session_state(const std::string& id);
  ServiceResponse intervene(const std::string& id, const nlohmann::json& request);
  ServiceResponse delete_session(const std::string& id);
  ServiceResponse list_models() const;
  ServiceResponse health() const;

  std::size_t session_count() const;
  /// Drops sessions idle for longer than the TTL; returns how many.
  std::size_t evict_expired();

 private:
  struct Session;

  const ServedModel* find_model(const std::string& id) const;
  std::shared_ptr<Session> find_session(const std::string& id) const;
  std::shared_ptr<Session> open(const nlohmann::json& request, std::string id);
  ServiceResponse apply(Session& s, const nlohmann::json& request);
  nlohmann::json payload(const Session& s) const;
  void save_snapshot() const;
  void load_snapshot();
  std::string new_id();

  std::vector<ServedModel> models_;
  ServiceConfig config_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t id_state_;
  mutable std::mutex snapshot_mu_;
};

/// Serves `manager` over HTTP until stop_server() or process exit. Files
/// under `static_dir` are mounted at "/" when given.
class HttpService {
 public:
  explicit HttpService(SessionManager& manager,
                       std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpService();

  /// Binds and blocks. Port 0 picks a free port (see port()).
  void listen(const std::string& host, int port);
  /// Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port = 0);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace cirm
