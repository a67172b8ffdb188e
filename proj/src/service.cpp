#include "cirm/service.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <random>
#include <regex>
#include <thread>

#include <httplib.h>

#include "cirm/error.hpp"

namespace cirm {

using nlohmann::json;

namespace {

struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& msg) : std::runtime_error(msg), status(s) {}
};

ServiceResponse error_response(int status, const std::string& message) {
  return {status, {{"error", {{"code", status}, {"message", message}}}}};
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::uint64_t splitmix(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

PolicyKind parse_policy(const json& j) {
  if (j.is_null()) return PolicyKind::ucp(PolicySource::updated);
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "ucp") return PolicyKind::ucp(PolicySource::updated);
    if (s == "ucp_static") return PolicyKind::ucp(PolicySource::original);
    if (s == "random") return PolicyKind::random(0);
    throw HttpError(400, "unknown policy '" + s + "'");
  }
  if (!j.is_object()) throw HttpError(400, "policy must be a string or an object");
  try {
    return policy_from_json(j);
  } catch (const std::exception& e) {
    throw HttpError(400, std::string("bad policy: ") + e.what());
  }
}

std::size_t index_field(const json& request, const char* key) {
  const json& v = request.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw HttpError(400, std::string("'") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double binary_value(const json& v) {
  if (!v.is_number()) throw HttpError(400, "intervention values must be 0 or 1");
  const double d = v.get<double>();
  if (d != 0.0 && d != 1.0) throw HttpError(400, "intervention values must be 0 or 1");
  return d;
}

}  // namespace

ServedModel make_served_model(std::string id, std::shared_ptr<const ConceptModel> model,
                              std::shared_ptr<const Realigner> realigner,
                              const GenerativeWorld* world, Dataset samples) {
  if (!model) throw ValueError("served model is null");
  const std::size_t k = model->num_concepts();
  if (realigner && realigner->num_concepts() != k) {
    throw ShapeError("realigner has " + std::to_string(realigner->num_concepts()) +
                     " concepts, model has " + std::to_string(k));
  }
  ServedModel m;
  m.id = std::move(id);
  m.model = std::move(model);
  m.realigner = std::move(realigner);
  m.samples = std::move(samples);
  if (world) {
    if (world->num_concepts != k || world->num_classes != m.model->num_classes()) {
      throw ShapeError("world does not match the model's concept or class count");
    }
    m.units = SelectionUnits::from_groups(k, world->groups);
    m.concept_names = world->concept_names;
    m.class_names = world->class_names;
  } else {
    m.units = SelectionUnits::concepts(k);
  }
  if (m.concept_names.size() != k) {
    m.concept_names.clear();
    for (std::size_t i = 0; i < k; ++i) m.concept_names.push_back("c" + std::to_string(i));
  }
  if (m.class_names.size() != m.model->num_classes()) {
    m.class_names.clear();
    for (std::size_t i = 0; i < m.model->num_classes(); ++i) {
      m.class_names.push_back("y" + std::to_string(i));
    }
  }
  for (const auto& s : m.samples) {
    if (s.x.size() != m.model->input_dim()) throw ShapeError("sample has the wrong input dim");
  }
  return m;
}

struct SessionManager::Session {
  std::string id;
  const ServedModel* served = nullptr;
  json request;
  std::vector<json> transcript;
  std::optional<std::size_t> sample_index;
  PolicyKind policy;
  bool realign = false;
  std::unique_ptr<TrajectoryRunner> runner;
  Rng rng;
  std::optional<std::size_t> suggestion;
  std::int64_t created_ms = 0;
  std::atomic<std::int64_t> updated_ms{0};
  std::mutex write_mu;
  std::shared_ptr<const json> snapshot;
};

SessionManager::SessionManager(std::vector<ServedModel> models, ServiceConfig config)
    : models_(std::move(models)), config_(std::move(config)) {
  std::random_device rd;
  id_state_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
              static_cast<std::uint64_t>(now_ms());
  for (std::size_t i = 0; i < models_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (models_[i].id == models_[j].id) throw ValueError("duplicate model id " + models_[i].id);
    }
  }
  if (config_.snapshot_path && std::filesystem::exists(*config_.snapshot_path)) load_snapshot();
}

const ServedModel* SessionManager::find_model(const std::string& id) const {
  for (const auto& m : models_) {
    if (m.id == id) return &m;
  }
  return nullptr;
}

std::shared_ptr<SessionManager::Session> SessionManager::find_session(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::string SessionManager::new_id() {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(splitmix(id_state_)));
  return buf;
}

std::shared_ptr<SessionManager::Session> SessionManager::open(const json& request, std::string id) {
  if (!request.is_object()) throw HttpError(400, "request body must be a JSON object");
  const std::string model_id = [&] {
    if (request.contains("model")) {
      if (!request["model"].is_string()) throw HttpError(400, "'model' must be a string");
      return request["model"].get<std::string>();
    }
    if (models_.size() == 1) return models_.front().id;
    throw HttpError(400, "'model' is required when several models are served");
  }();
  const ServedModel* served = find_model(model_id);
  if (!served) throw HttpError(404, "unknown model '" + model_id + "'");

  auto s = std::make_shared<Session>();
  s->id = std::move(id);
  s->served = served;
  s->policy = parse_policy(request.value("policy", json()));
  if (s->policy.type == PolicyType::manual) throw HttpError(400, "manual policies cannot be served");

  const bool has_x = request.contains("x");
  const bool has_index = request.contains("sample_index");
  if (has_x == has_index) throw HttpError(400, "give exactly one of 'x' and 'sample_index'");
  Vec x;
  std::optional<Vec> truth;
  std::optional<std::size_t> label;
  if (has_x) {
    const json& jx = request["x"];
    if (!jx.is_array()) throw HttpError(400, "'x' must be an array of numbers");
    for (const auto& v : jx) {
      if (!v.is_number()) throw HttpError(400, "'x' must be an array of numbers");
      x.push_back(v.get<double>());
    }
    if (x.size() != served->model->input_dim()) {
      throw HttpError(400, "'x' has " + std::to_string(x.size()) + " entries, expected d=" +
                               std::to_string(served->model->input_dim()));
    }
  } else {
    const std::size_t n = index_field(request, "sample_index");
    if (n >= served->samples.size()) {
      throw HttpError(400, "sample_index " + std::to_string(n) + " out of range (" +
                               std::to_string(served->samples.size()) + " samples)");
    }
    s->sample_index = n;
    x = served->samples[n].x;
    truth = served->samples[n].c;
    label = served->samples[n].y;
  }

  s->realign = request.value("realign", served->realigner != nullptr);
  if (s->realign && !served->realigner) {
    throw HttpError(400, "model '" + model_id + "' has no realigner");
  }
  s->runner = std::make_unique<TrajectoryRunner>(
      *served->model, s->realign ? served->realigner.get() : nullptr, x, served->units, truth,
      label);
  const std::uint64_t stream = request.value("stream", std::uint64_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(s->policy.seed),
                    static_cast<std::uint32_t>(s->policy.seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  s->rng = Rng(seq);
  s->suggestion = s->runner->suggest(s->policy, &s->rng);
  s->request = request;
  s->created_ms = now_ms();
  s->updated_ms = s->created_ms;
  std::atomic_store(&s->snapshot, std::make_shared<const json>(payload(*s)));
  return s;
}

ServiceResponse SessionManager::apply(Session& s, const json& request) {
  if (!request.is_object()) throw HttpError(400, "request body must be a JSON object");
  const SelectionUnits& units = s.served->units;
  std::size_t unit = 0;
  if (request.contains("group")) {
    unit = index_field(request, "group");
    if (unit >= units.size()) throw HttpError(400, "group " + std::to_string(unit) + " out of range");
  } else if (request.contains("concept")) {
    const std::size_t i = index_field(request, "concept");
    if (i >= units.num_concepts) {
      throw HttpError(400, "concept " + std::to_string(i) + " out of range");
    }
    for (std::size_t u = 0; u < units.size(); ++u) {
      if (std::find(units.members[u].begin(), units.members[u].end(), i) != units.members[u].end()) {
        unit = u;
      }
    }
  } else {
    throw HttpError(400, "give 'concept' or 'group'");
  }
  if (s.runner->state().unit_done[unit]) {
    throw HttpError(409, "unit " + std::to_string(unit) + " (" + units.names[unit] +
                             ") was already intervened on");
  }
  const auto& members = units.members[unit];
  Vec values;
  if (request.contains("values")) {
    if (!request["values"].is_array() || request["values"].size() != members.size()) {
      throw HttpError(400, "'values' must hold " + std::to_string(members.size()) + " entries");
    }
    for (const auto& v : request["values"]) values.push_back(binary_value(v));
  } else if (request.contains("value")) {
    if (request.contains("concept") && members.size() > 1) {
      throw HttpError(400, "concept belongs to group '" + units.names[unit] +
                               "'; intervene on the group with 'values'");
    }
    values.assign(members.size(), binary_value(request["value"]));
  } else {
    throw HttpError(400, "'value' is required");
  }

  s.runner->intervene(unit, values);
  s.transcript.push_back(request);
  s.suggestion = s.runner->complete() ? std::nullopt
                                      : std::optional(s.runner->suggest(s.policy, &s.rng));
  s.updated_ms = now_ms();
  auto snap = std::make_shared<const json>(payload(s));
  std::atomic_store(&s.snapshot, snap);
  return {200, *snap};
}

json SessionManager::payload(const Session& s) const {
  const TrajectoryRunner& r = *s.runner;
  const ServedModel& m = *s.served;
  const StepRecord& last = r.records().back();
  json units = json::array();
  for (std::size_t u = 0; u < m.units.size(); ++u) {
    units.push_back({{"index", u},
                     {"name", m.units.names[u]},
                     {"members", m.units.members[u]},
                     {"intervened", r.state().unit_done[u] != 0}});
  }
  json steps = json::array();
  for (const auto& rec : r.records()) {
    json j = to_json(rec);
    if (!config_.debug) {
      j.erase("concept_loss");
      j.erase("correct");
    }
    steps.push_back(std::move(j));
  }
  json suggestion = nullptr;
  if (s.suggestion) {
    suggestion = {{"unit", *s.suggestion},
                  {"name", m.units.names[*s.suggestion]},
                  {"members", m.units.members[*s.suggestion]}};
  }
  const auto& probs = last.class_probs;
  json out{{"id", s.id},
           {"model", m.id},
           {"t", r.state().t},
           {"complete", r.complete()},
           {"realigned", s.realign},
           {"policy", to_json(s.policy)},
           {"sample_index", s.sample_index ? json(*s.sample_index) : json(nullptr)},
           {"concept_names", m.concept_names},
           {"class_names", m.class_names},
           {"units", units},
           {"c_hat", r.c_hat()},
           {"values", r.state().values},
           {"concepts", r.current()},
           {"intervened", r.state().intervened()},
           {"class_probs", probs},
           {"predicted_class",
            std::distance(probs.begin(), std::max_element(probs.begin(), probs.end()))},
           {"suggestion", suggestion},
           {"steps", steps},
           {"created_ms", s.created_ms},
           {"updated_ms", s.updated_ms.load()}};
  if (config_.debug && s.sample_index) {
    const auto& sample = m.samples[*s.sample_index];
    out["truth"] = {{"concepts", sample.c}, {"label", sample.y}};
  }
  return out;
}

ServiceResponse SessionManager::create_session(const json& request) {
  try {
    std::shared_ptr<Session> s;
    {
      std::unique_lock lock(mu_);
      s = open(request, new_id());
      sessions_[s->id] = s;
    }
    save_snapshot();
    return {201, *std::atomic_load(&s->snapshot)};
  } catch (const HttpError& e) {
    return error_response(e.status, e.what());
  }
}

ServiceResponse SessionManager::session_state(const std::string& id) {
  auto s = find_session(id);
  if (!s) return error_response(404, "unknown session '" + id + "'");
  return {200, *std::atomic_load(&s->snapshot)};
}

ServiceResponse SessionManager::intervene(const std::string& id, const json& request) {
  auto s = find_session(id);
  if (!s) return error_response(404, "unknown session '" + id + "'");
  ServiceResponse out;
  try {
    std::lock_guard lock(s->write_mu);
    out = apply(*s, request);
  } catch (const HttpError& e) {
    return error_response(e.status, e.what());
  } catch (const StateError& e) {
    return error_response(409, e.what());
  } catch (const ValueError& e) {
    return error_response(400, e.what());
  }
  save_snapshot();
  return out;
}

ServiceResponse SessionManager::delete_session(const std::string& id) {
  {
    std::unique_lock lock(mu_);
    if (sessions_.erase(id) == 0) return error_response(404, "unknown session '" + id + "'");
  }
  save_snapshot();
  return {204, nullptr};
}

ServiceResponse SessionManager::list_models() const {
  json out = json::array();
  for (const auto& m : models_) {
    out.push_back({{"id", m.id},
                   {"kind", to_string(m.model->kind())},
                   {"input_dim", m.model->input_dim()},
                   {"num_concepts", m.model->num_concepts()},
                   {"num_classes", m.model->num_classes()},
                   {"num_units", m.units.size()},
                   {"has_realigner", m.realigner != nullptr},
                   {"num_samples", m.samples.size()},
                   {"concept_names", m.concept_names},
                   {"class_names", m.class_names}});
  }
  return {200, {{"models", out}}};
}

ServiceResponse SessionManager::health() const {
  return {200, {{"status", "ok"}, {"sessions", session_count()}, {"models", models_.size()}}};
}

std::size_t SessionManager::session_count() const {
  std::shared_lock lock(mu_);
  return sessions_.size();
}

std::size_t SessionManager::evict_expired() {
  const std::int64_t cutoff =
      now_ms() - std::chrono::duration_cast<std::chrono::milliseconds>(config_.ttl).count();
  std::size_t n = 0;
  {
    std::unique_lock lock(mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (it->second->updated_ms.load() < cutoff) {
        it = sessions_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
  }
  if (n > 0) save_snapshot();
  return n;
}

ServiceResponse SessionManager::handle(const std::string& method, const std::string& path,
                                       const std::string& body) {
  static const std::regex session_re(R"(^/sessions/([A-Za-z0-9_-]+)$)");
  static const std::regex intervene_re(R"(^/sessions/([A-Za-z0-9_-]+)/interventions$)");
  evict_expired();
  auto parse = [&]() -> json {
    if (body.empty()) return json::object();
    return json::parse(body);
  };
  try {
    std::smatch m;
    if (path == "/healthz") {
      if (method == "GET") return health();
    } else if (path == "/models") {
      if (method == "GET") return list_models();
    } else if (path == "/sessions") {
      if (method == "POST") return create_session(parse());
    } else if (std::regex_match(path, m, intervene_re)) {
      if (method == "POST") return intervene(m[1], parse());
    } else if (std::regex_match(path, m, session_re)) {
      if (method == "GET") return session_state(m[1]);
      if (method == "DELETE") return delete_session(m[1]);
    } else {
      return error_response(404, "no route for " + path);
    }
    return error_response(405, method + " not allowed on " + path);
  } catch (const json::exception& e) {
    return error_response(400, std::string("malformed JSON: ") + e.what());
  }
}

void SessionManager::save_snapshot() const {
  if (!config_.snapshot_path) return;
  json sessions = json::array();
  {
    std::shared_lock lock(mu_);
    for (const auto& [id, s] : sessions_) {
      std::lock_guard wl(s->write_mu);
      sessions.push_back({{"id", id},
                          {"request", s->request},
                          {"transcript", s->transcript},
                          {"created_ms", s->created_ms},
                          {"updated_ms", s->updated_ms.load()}});
    }
  }
  std::lock_guard lock(snapshot_mu_);
  const auto& path = *config_.snapshot_path;
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write session snapshot " + tmp);
    out << json{{"format", "cirm-sessions"}, {"sessions", sessions}}.dump();
  }
  std::filesystem::rename(tmp, path);
}

void SessionManager::load_snapshot() {
  std::ifstream in(*config_.snapshot_path);
  if (!in) throw IoError("cannot read session snapshot " + config_.snapshot_path->string());
  const json j = json::parse(in);
  if (j.value("format", "") != "cirm-sessions") {
    throw IoError(config_.snapshot_path->string() + " is not a session snapshot");
  }
  for (const auto& e : j.at("sessions")) {
    // Sessions whose model is no longer served are dropped.
    try {
      auto s = open(e.at("request"), e.at("id").get<std::string>());
      for (const auto& step : e.at("transcript")) apply(*s, step);
      s->created_ms = e.value("created_ms", s->created_ms);
      s->updated_ms = e.value("updated_ms", s->updated_ms.load());
      std::atomic_store(&s->snapshot, std::make_shared<const json>(payload(*s)));
      sessions_[s->id] = s;
    } catch (const std::exception&) {
    }
  }
}

// ----------------------------------------------------------------------------
// HTTP

struct HttpService::Impl {
  SessionManager* manager;
  httplib::Server server;
  std::thread thread;
};

HttpService::HttpService(SessionManager& manager, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>()) {
  impl_->manager = &manager;
  auto& svr = impl_->server;
  if (static_dir && !svr.set_mount_point("/", static_dir->string())) {
    throw IoError("static directory " + static_dir->string() + " does not exist");
  }
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const ServiceResponse r = impl_->manager->handle(req.method, req.path, req.body);
    res.status = r.status;
    if (!r.body.is_null()) res.set_content(r.body.dump(), "application/json");
  };
  svr.Get(".*", handler);
  svr.Post(".*", handler);
  svr.Delete(".*", handler);
  svr.Put(".*", handler);
}

HttpService::~HttpService() { stop(); }

void HttpService::listen(const std::string& host, int port) {
  if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  port_ = port;
  impl_->server.listen_after_bind();
}

int HttpService::start(const std::string& host, int port) {
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
    if (port_ < 0) throw IoError("cannot bind " + host);
  } else {
    if (!impl_->server.bind_to_port(host, port)) {
      throw IoError("cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace cirm
