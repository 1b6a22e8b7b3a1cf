#include "merg/service.hpp"

#include "merg/error.hpp"
#include "merg/util.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>

namespace merg {

using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";
constexpr const char* kAssetPrefix = "/v1/assets/";

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownProfile:
      return 404;
    case ErrorCode::TurnInFlight:
      return 409;
    case ErrorCode::AllBackendsFailed:
      return 502;
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidQuery:
    case ErrorCode::InvalidRequest:
    case ErrorCode::SchemaError:
      return 400;
    default:
      return 500;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void send_error(httplib::Response& res, const Error& e) {
  send_json(res, status_for(e.code()),
            {{"error", to_string(e.code())}, {"message", e.what()}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) {
    throw Error(ErrorCode::InvalidRequest, "body must be a JSON object");
  }
  return body;
}

std::string content_type_for(std::string_view ext) {
  if (ext == "wav") return "audio/wav";
  if (ext == "mp3") return "audio/mpeg";
  if (ext == "ogg") return "audio/ogg";
  if (ext == "flac") return "audio/flac";
  if (ext == "mp4") return "video/mp4";
  if (ext == "webm") return "video/webm";
  if (ext == "png") return "image/png";
  if (ext == "jpg" || ext == "jpeg") return "image/jpeg";
  return "application/octet-stream";
}

bool is_terminal(const json& event) {
  const auto& type = event["type"];
  return type == "turn_completed" || type == "turn_failed";
}

struct SessionSlot {
  std::mutex mu;
  std::condition_variable cv;
  Session session;
  std::vector<json> results;
  std::vector<json> events;
  std::atomic<bool> in_flight{false};
  bool deleted = false;
};

}  // namespace

json turn_response_body(const TurnResult& r, const std::string& speech_url,
                        const std::string& video_url) {
  json status = json::object();
  for (const auto& [stage, s] : r.stage_status) {
    status[stage] = {{"state", to_string(s.state)}, {"reason", s.reason}};
  }
  return json{{"turn_index", r.turn_index},
              {"predicted_emotion", r.predicted_emotion},
              {"response_text", r.response_text},
              {"speech_url", speech_url.empty() ? json(nullptr) : json(speech_url)},
              {"video_url", video_url.empty() ? json(nullptr) : json(video_url)},
              {"stage_status", status},
              {"timings_ms", r.timings_ms}};
}

static std::string profile_id_field(const json& body, const char* key) {
  if (!body.contains(key) || body[key].is_null()) return {};
  if (body[key].is_string()) return body[key].get<std::string>();
  if (body[key].is_number_integer()) return std::to_string(body[key].get<long long>());
  throw Error(ErrorCode::InvalidRequest, std::string(key) + " must be a string or integer");
}

struct Service::Impl {
  std::shared_ptr<Engine> engine;
  PipelineConfig base;
  std::vector<BackendDescriptor> registry;
  httplib::Server server;
  std::atomic<bool> stopping{false};

  std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions;

  std::mutex assets_mu;
  std::map<std::string, std::string> assets;

  std::shared_ptr<SessionSlot> find(const std::string& id) {
    std::lock_guard lock(sessions_mu);
    const auto it = sessions.find(id);
    if (it == sessions.end()) {
      throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
    }
    return it->second;
  }

  std::string register_asset(const std::string& uri) {
    auto id = util::sha256_hex(uri).substr(0, 16);
    const auto ext = util::extension_of(uri);
    if (!ext.empty()) id += "." + ext;
    std::lock_guard lock(assets_mu);
    assets[id] = uri;
    return kAssetPrefix + id;
  }

  std::string url_for(const std::optional<ModalityRef>& ref) {
    return ref ? register_asset(ref->uri) : std::string{};
  }

  std::optional<ModalityRef> resolve_media(const json& body, const char* key,
                                           ModalityKind fallback) {
    if (!body.contains(key) || body[key].is_null()) return std::nullopt;
    if (!body[key].is_string()) {
      throw Error(ErrorCode::InvalidQuery, std::string(key) + " must be a string");
    }
    auto uri = body[key].get<std::string>();
    if (uri.rfind(kAssetPrefix, 0) == 0) {
      const auto id = uri.substr(std::string_view(kAssetPrefix).size());
      std::lock_guard lock(assets_mu);
      const auto it = assets.find(id);
      if (it == assets.end()) {
        throw Error(ErrorCode::InvalidQuery, "unknown asset " + uri);
      }
      uri = it->second;
    }
    return make_ref(uri, fallback);
  }

  json session_body(SessionSlot& slot) {
    std::lock_guard lock(slot.mu);
    const auto& s = slot.session;
    json turns = json::array();
    for (const auto& t : s.dialogue.turns) {
      json jt{{"role", to_string(t.role)}, {"text", t.utterance.text}};
      if (t.utterance.audio) jt["audio_url"] = register_asset(t.utterance.audio->uri);
      if (t.utterance.video) jt["video_url"] = register_asset(t.utterance.video->uri);
      turns.push_back(std::move(jt));
    }
    return json{{"session_id", s.id},
                {"speaker_profile_id", s.dialogue.speaker_profile_id},
                {"listener_profile_id", s.dialogue.listener_profile_id},
                {"config", config_summary(s.config)},
                {"turns", turns},
                {"results", slot.results}};
  }

  void push_event(SessionSlot& slot, const StageEvent& ev) {
    {
      std::lock_guard lock(slot.mu);
      slot.events.push_back({{"seq", slot.events.size() + 1},
                             {"type", ev.type},
                             {"data", ev.data},
                             {"timestamp_ms", util::now_unix_ms()}});
    }
    slot.cv.notify_all();
  }

  void create_session(const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    PipelineConfig config = base;
    try {
      if (body.contains("config")) {
        apply_config_overrides(config, body["config"], registry);
      }
    } catch (const Error& e) {
      send_json(res, 400, {{"error", to_string(e.code())},
                           {"message", e.what()},
                           {"violations", json::array({e.what()})}});
      return;
    }
    const auto violations = validate_config(config);
    if (!violations.empty()) {
      send_json(res, 400, {{"error", "InvalidConfig"}, {"violations", violations}});
      return;
    }
    const auto speaker = profile_id_field(body, "speaker_profile_id");
    const auto listener = profile_id_field(body, "listener_profile_id");
    auto slot = std::make_shared<SessionSlot>();
    slot->session = engine->start_session(std::move(config), speaker, listener);
    const auto id = slot->session.id;
    {
      std::lock_guard lock(sessions_mu);
      sessions[id] = slot;
    }
    send_json(res, 201, {{"session_id", id}});
  }

  void post_turn(const std::string& id, const httplib::Request& req,
                 httplib::Response& res) {
    auto slot = find(id);
    const auto body = parse_body(req);
    if (!body.contains("text") || !body["text"].is_string()) {
      throw Error(ErrorCode::InvalidQuery, "turn needs a string 'text'");
    }
    Utterance query{body["text"].get<std::string>(),
                    resolve_media(body, "audio_uri", ModalityKind::audio),
                    resolve_media(body, "video_uri", ModalityKind::video)};

    bool expected = false;
    if (!slot->in_flight.compare_exchange_strong(expected, true)) {
      throw Error(ErrorCode::TurnInFlight, "a turn is already running on " + id);
    }
    struct Release {
      std::atomic<bool>& flag;
      ~Release() { flag = false; }
    } release{slot->in_flight};

    Session working;
    {
      std::lock_guard lock(slot->mu);
      if (slot->deleted) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
      working = slot->session;
    }
    const auto result = engine->run_turn(
        working, query, [&](const StageEvent& ev) { push_event(*slot, ev); });
    auto reply = turn_response_body(result, url_for(result.speech), url_for(result.video));
    {
      std::lock_guard lock(slot->mu);
      slot->session = std::move(working);
      slot->results.push_back(reply);
    }
    send_json(res, 200, reply);
  }

  void delete_session(const std::string& id, httplib::Response& res) {
    auto slot = find(id);
    if (slot->in_flight) {
      throw Error(ErrorCode::TurnInFlight, "a turn is running on " + id);
    }
    {
      std::lock_guard lock(sessions_mu);
      sessions.erase(id);
    }
    {
      std::lock_guard lock(slot->mu);
      slot->deleted = true;
    }
    slot->cv.notify_all();
    engine->store().delete_session(id);
    res.status = 204;
  }

  void stream_events(const std::string& id, const httplib::Request& req,
                     httplib::Response& res) {
    auto slot = find(id);
    std::size_t after = 0;
    long long timeout_ms = 30000;
    bool follow = false;
    try {
      if (req.has_param("after")) after = std::stoull(req.get_param_value("after"));
      if (req.has_param("timeout_ms")) {
        timeout_ms = std::stoll(req.get_param_value("timeout_ms"));
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidRequest, "after and timeout_ms are integers");
    }
    if (req.has_param("follow")) {
      const auto f = req.get_param_value("follow");
      follow = f == "1" || f == "true";
    }
    if (!follow) {
      std::string out;
      std::lock_guard lock(slot->mu);
      for (std::size_t i = after; i < slot->events.size(); ++i) {
        out += slot->events[i].dump() + "\n";
      }
      res.status = 200;
      res.set_content(out, "application/x-ndjson");
      return;
    }
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    auto cursor = std::make_shared<std::size_t>(after);
    res.set_chunked_content_provider(
        "application/x-ndjson",
        [this, slot, cursor, deadline](std::size_t, httplib::DataSink& sink) {
          std::unique_lock lock(slot->mu);
          slot->cv.wait_until(lock, std::min(deadline, std::chrono::steady_clock::now() +
                                                           std::chrono::milliseconds(200)),
                              [&] {
                                return slot->events.size() > *cursor || slot->deleted ||
                                       stopping;
                              });
          bool finished = false;
          std::string out;
          while (*cursor < slot->events.size()) {
            const auto& ev = slot->events[(*cursor)++];
            out += ev.dump() + "\n";
            if (is_terminal(ev)) {
              finished = true;
              break;
            }
          }
          finished = finished || slot->deleted || stopping ||
                     std::chrono::steady_clock::now() >= deadline;
          lock.unlock();
          if (!out.empty() && !sink.write(out.data(), out.size())) return false;
          if (finished) sink.done();
          return true;
        });
  }

  void get_asset(const std::string& id, httplib::Response& res) {
    std::string uri;
    {
      std::lock_guard lock(assets_mu);
      const auto it = assets.find(id);
      if (it == assets.end()) {
        send_json(res, 404, {{"error", "UnknownAsset"}, {"message", "no asset " + id}});
        return;
      }
      uri = it->second;
    }
    if (uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0) {
      res.set_redirect(uri);
      return;
    }
    const auto path = uri.rfind("file://", 0) == 0 ? uri.substr(7) : uri;
    try {
      res.set_content(util::read_file(path), content_type_for(util::extension_of(path)));
    } catch (const Error&) {
      send_json(res, 404, {{"error", "UnknownAsset"}, {"message", "asset file missing"}});
    }
  }

  void upload_asset(const httplib::Request& req, httplib::Response& res) {
    if (req.body.empty()) throw Error(ErrorCode::InvalidRequest, "empty upload");
    auto ext = util::to_lower(req.has_param("ext") ? req.get_param_value("ext") : "bin");
    if (ext.empty() || ext.find_first_not_of("abcdefghijklmnopqrstuvwxyz0123456789") !=
                           std::string::npos) {
      throw Error(ErrorCode::InvalidRequest, "bad extension '" + ext + "'");
    }
    const auto digest = util::sha256_hex(req.body).substr(0, 16);
    const auto path = engine->store().asset_root() / "uploads" / (digest + "." + ext);
    util::write_file(path, req.body);
    const auto url = register_asset(path.string());
    send_json(res, 201, {{"asset_id", url.substr(std::string_view(kAssetPrefix).size())},
                         {"url", url}});
  }

  template <typename Fn>
  httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const std::exception& e) {
        send_json(res, 500, {{"error", "Internal"}, {"message", e.what()}});
      }
    };
  }

  void routes() {
    server.Get("/v1/health", guarded([this](const auto&, auto& res) {
                 std::size_t n = 0;
                 {
                   std::lock_guard lock(sessions_mu);
                   n = sessions.size();
                 }
                 send_json(res, 200, {{"status", "ok"}, {"sessions", n}});
               }));
    server.Post("/v1/sessions", guarded([this](const auto& req, auto& res) {
                  create_session(req, res);
                }));
    server.Get(R"(/v1/sessions/([^/]+))", guarded([this](const auto& req, auto& res) {
                 send_json(res, 200, session_body(*find(req.matches[1])));
               }));
    server.Delete(R"(/v1/sessions/([^/]+))",
                  guarded([this](const auto& req, auto& res) {
                    delete_session(req.matches[1], res);
                  }));
    server.Post(R"(/v1/sessions/([^/]+)/turns)",
                guarded([this](const auto& req, auto& res) {
                  post_turn(req.matches[1], req, res);
                }));
    server.Get(R"(/v1/sessions/([^/]+)/events)",
               guarded([this](const auto& req, auto& res) {
                 stream_events(req.matches[1], req, res);
               }));
    server.Post("/v1/assets", guarded([this](const auto& req, auto& res) {
                  upload_asset(req, res);
                }));
    server.Get(R"(/v1/assets/([^/]+))", guarded([this](const auto& req, auto& res) {
                 get_asset(req.matches[1], res);
               }));
  }
};

Service::Service(std::shared_ptr<Engine> engine, PipelineConfig base_config,
                 std::vector<BackendDescriptor> registry)
    : impl_(std::make_unique<Impl>()) {
  impl_->engine = std::move(engine);
  impl_->base = std::move(base_config);
  impl_->registry = std::move(registry);
  impl_->routes();
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) {
    throw Error(ErrorCode::IoError,
                "cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::stop() {
  impl_->stopping = true;
  {
    std::lock_guard lock(impl_->sessions_mu);
    for (auto& [id, slot] : impl_->sessions) slot->cv.notify_all();
  }
  impl_->server.stop();
}

std::string Service::asset_url(const std::string& uri) {
  return impl_->register_asset(uri);
}

}  // namespace merg
