#include "merg/backends.hpp"

#include "merg/error.hpp"
#include "merg/util.hpp"

#include <httplib.h>

#include <array>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace merg {

using nlohmann::json;

namespace {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::InvalidConfig, "endpoint is not a URL: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::unique_ptr<httplib::Client> http_client_for(const BackendDescriptor& d,
                                                 const ParsedUrl& url) {
  auto cli = std::make_unique<httplib::Client>(url.scheme_host_port);
  // Connect + write + read never exceed timeout_ms for one attempt.
  const auto budget = std::chrono::milliseconds(std::max(d.timeout_ms, 4));
  cli->set_connection_timeout(budget / 4);
  cli->set_write_timeout(budget / 4);
  cli->set_read_timeout(budget / 2);
  return cli;
}

httplib::Headers auth_headers(const BackendDescriptor& d) {
  httplib::Headers headers;
  if (!d.api_key_env.empty()) {
    if (const char* key = std::getenv(d.api_key_env.c_str());
        key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  return headers;
}

/// POSTs `body` and returns the parsed JSON reply. Transport failures map to
/// Timeout, non-2xx to HttpError (or the error named in the reply body).
json post_json(const BackendDescriptor& d, const json& body) {
  const auto url = parse_url(d.endpoint);
  auto cli = http_client_for(d, url);
  auto res = cli->Post(url.path, auth_headers(d), body.dump(),
                       "application/json");
  if (!res) {
    throw Error(ErrorCode::Timeout, d.name + ": " +
                                        httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    std::string named;
    try {
      const auto err = json::parse(res->body);
      if (err.is_object() && err.contains("error") && err["error"].is_string()) {
        named = err["error"].get<std::string>();
      }
    } catch (const json::parse_error&) {
    }
    if (named == "unsupported_style") {
      throw Error(ErrorCode::UnsupportedStyle, d.name + " rejected the style");
    }
    if (named == "missing_asset") {
      throw Error(ErrorCode::MissingAsset, d.name + " could not resolve media");
    }
    throw Error(ErrorCode::HttpError,
                d.name + " returned HTTP " + std::to_string(res->status),
                res->status);
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error&) {
    throw Error(ErrorCode::ProtocolError, d.name + " returned non-JSON body");
  }
}

std::string extract_chat_content(const json& reply, const std::string& name) {
  const auto bad = [&] {
    return Error(ErrorCode::ProtocolError,
                 name + ": reply lacks choices[0].message.content");
  };
  if (!reply.is_object() || !reply.contains("choices") ||
      !reply["choices"].is_array() || reply["choices"].empty()) {
    throw bad();
  }
  const auto& choice = reply["choices"][0];
  if (!choice.is_object() || !choice.contains("message") ||
      !choice["message"].is_object() || !choice["message"].contains("content")) {
    throw bad();
  }
  const auto& content = choice["message"]["content"];
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string text;
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text" &&
          part.contains("text") && part["text"].is_string()) {
        text += part["text"].get<std::string>();
      }
    }
    return text;
  }
  throw bad();
}

std::string string_field(const json& reply, const char* field,
                         const std::string& name) {
  if (!reply.is_object() || !reply.contains(field) ||
      !reply[field].is_string() || reply[field].get<std::string>().empty()) {
    throw Error(ErrorCode::ProtocolError,
                name + ": reply lacks string field '" + field + "'");
  }
  return reply[field].get<std::string>();
}

void log_attempt(const std::shared_ptr<ReplayLog>& log,
                 const BackendDescriptor& d, std::string digest,
                 json request, std::string reply, std::string error) {
  if (!log) return;
  ReplayLog::Record r;
  r.backend = d.name;
  r.kind = d.kind;
  r.digest = std::move(digest);
  r.request = std::move(request);
  r.reply = std::move(reply);
  r.error = std::move(error);
  log->append(std::move(r));
}

template <typename Fn>
auto with_one_retry(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Timeout) throw;
  }
  return fn();
}

bool local_asset_missing(const std::string& uri) {
  if (util::has_uri_scheme(uri)) {
    if (uri.rfind("file://", 0) == 0) {
      return !std::filesystem::exists(uri.substr(7));
    }
    return false;
  }
  return !std::filesystem::exists(uri);
}

std::string silent_wav() {
  // 16 kHz mono 16-bit PCM, zero samples.
  const auto le32 = [](std::uint32_t v) {
    return std::string{static_cast<char>(v & 0xFF),
                       static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF),
                       static_cast<char>((v >> 24) & 0xFF)};
  };
  const auto le16 = [](std::uint16_t v) {
    return std::string{static_cast<char>(v & 0xFF),
                       static_cast<char>((v >> 8) & 0xFF)};
  };
  std::string wav = "RIFF" + le32(36) + "WAVE" + "fmt " + le32(16) + le16(1) +
                    le16(1) + le32(16000) + le32(32000) + le16(2) + le16(16) +
                    "data" + le32(0);
  return wav;
}

void scripted_delay(const MockScript& script) {
  if (script.delay_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(script.delay_ms));
  }
}

}  // namespace

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::chat: return "chat";
    case BackendKind::tts: return "tts";
    case BackendKind::talking_head: return "talking_head";
  }
  return "chat";
}

std::vector<BackendDescriptor> parse_backend_registry(
    const json& doc, const std::filesystem::path& base_dir) {
  const json* list = &doc;
  if (doc.is_object()) {
    if (!doc.contains("backends")) {
      throw Error(ErrorCode::InvalidConfig, "registry lacks 'backends'");
    }
    list = &doc["backends"];
  }
  if (!list->is_array()) {
    throw Error(ErrorCode::InvalidConfig, "'backends' must be an array");
  }
  std::vector<BackendDescriptor> out;
  for (const auto& entry : *list) {
    if (!entry.is_object() || !entry.contains("name") ||
        !entry.contains("kind") || !entry.contains("endpoint")) {
      throw Error(ErrorCode::InvalidConfig,
                  "backend entries need name, kind and endpoint");
    }
    BackendDescriptor d;
    try {
      d.name = entry["name"].get<std::string>();
      const auto kind = entry["kind"].get<std::string>();
      if (kind == "chat") {
        d.kind = BackendKind::chat;
      } else if (kind == "tts") {
        d.kind = BackendKind::tts;
      } else if (kind == "talking_head") {
        d.kind = BackendKind::talking_head;
      } else {
        throw Error(ErrorCode::InvalidConfig, "unknown backend kind " + kind);
      }
      d.endpoint = entry["endpoint"].get<std::string>();
      if (entry.contains("weight") && !entry["weight"].is_null()) {
        d.weight = entry["weight"].get<double>();
      }
      d.timeout_ms = entry.value("timeout_ms", 30000);
      d.model = entry.value("model", d.name);
      d.api_key_env = entry.value("api_key_env", std::string{});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig,
                  std::string("malformed backend entry: ") + e.what());
    }
    if (d.name.empty()) {
      throw Error(ErrorCode::InvalidConfig, "backend name is empty");
    }
    if (d.timeout_ms <= 0) {
      throw Error(ErrorCode::InvalidConfig,
                  d.name + ": timeout_ms must be positive");
    }
    if (d.weight && *d.weight < 0.0) {
      throw Error(ErrorCode::InvalidConfig, d.name + ": weight is negative");
    }
    if (d.is_mock()) {
      auto script = d.mock_script_path();
      if (!script.empty() && std::filesystem::path(script).is_relative() &&
          !base_dir.empty()) {
        d.endpoint = "mock:" + (base_dir / script).string();
      }
    } else if (!util::has_uri_scheme(d.endpoint)) {
      throw Error(ErrorCode::InvalidConfig,
                  d.name + ": endpoint must be a URL or mock:<path>");
    }
    for (const auto& existing : out) {
      if (existing.name == d.name) {
        throw Error(ErrorCode::InvalidConfig, "duplicate backend " + d.name);
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<BackendDescriptor> load_backend_registry(
    const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(util::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig,
                path.string() + ": " + e.what());
  }
  return parse_backend_registry(doc, path.parent_path());
}

ChatRequest make_chat_request(const RenderedPrompt& prompt, int max_tokens,
                              double temperature) {
  ChatRequest req;
  req.messages.push_back(ChatMessage{"user", prompt.segments});
  req.max_tokens = max_tokens;
  req.temperature = temperature;
  return req;
}

json chat_wire_messages(const ChatRequest& req) {
  json messages = json::array();
  for (const auto& m : req.messages) {
    const bool has_media =
        std::any_of(m.segments.begin(), m.segments.end(),
                    [](const PromptSegment& s) { return s.kind != SegmentKind::text; });
    json msg{{"role", m.role}};
    if (!has_media) {
      std::string text;
      for (const auto& s : m.segments) text += s.text;
      msg["content"] = text;
    } else {
      json parts = json::array();
      for (const auto& s : m.segments) {
        switch (s.kind) {
          case SegmentKind::text:
            parts.push_back({{"type", "text"}, {"text", s.text}});
            break;
          case SegmentKind::audio_slot:
            parts.push_back({{"type", "audio_url"},
                             {"audio_url", {{"url", s.media->uri}}}});
            break;
          case SegmentKind::video_slot:
            parts.push_back({{"type", "video_url"},
                             {"video_url", {{"url", s.media->uri}}}});
            break;
        }
      }
      msg["content"] = std::move(parts);
    }
    messages.push_back(std::move(msg));
  }
  return messages;
}

json chat_wire_body(const ChatRequest& req, const std::string& model) {
  return json{{"model", model},
              {"messages", chat_wire_messages(req)},
              {"max_tokens", req.max_tokens},
              {"temperature", req.temperature},
              {"stream", false}};
}

json tts_wire_body(const TtsRequest& req) {
  json body{{"text", req.text},
            {"speaking_style", req.speaking_style},
            {"reference_speech", req.reference_speech.uri}};
  if (req.language) body["language"] = *req.language;
  return body;
}

json talking_head_wire_body(const TalkingHeadRequest& req) {
  return json{{"speech_uri", req.speech.uri},
              {"reference_facial", req.reference_facial.uri},
              {"emotion", req.facial_emotion}};
}

std::string chat_request_digest(const ChatRequest& req) {
  return util::sha256_hex(json{{"messages", chat_wire_messages(req)}}.dump());
}

std::string tts_request_digest(const TtsRequest& req) {
  return util::sha256_hex(
      json{{"speaking_style", req.speaking_style}, {"text", req.text}}.dump());
}

std::string talking_head_request_digest(const TalkingHeadRequest& req) {
  return util::sha256_hex(
      json{{"emotion", req.facial_emotion}, {"speech_uri", req.speech.uri}}
          .dump());
}

ReplayLog::ReplayLog(std::filesystem::path file) : file_(std::move(file)) {
  if (file_->has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(file_->parent_path(), ec);
  }
}

void ReplayLog::append(Record record) {
  std::lock_guard lock(mutex_);
  record.seq = next_seq_++;
  record.timestamp_ms = util::now_unix_ms();
  if (file_) {
    std::ofstream out(*file_, std::ios::app);
    out << to_json(record).dump() << '\n';
  }
  records_.push_back(std::move(record));
}

std::vector<ReplayLog::Record> ReplayLog::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t ReplayLog::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

json ReplayLog::to_json(const Record& r) {
  json j{{"seq", r.seq},
         {"timestamp", util::format_utc(r.timestamp_ms)},
         {"timestamp_ms", r.timestamp_ms},
         {"backend", r.backend},
         {"kind", to_string(r.kind)},
         {"digest", r.digest},
         {"reply", r.reply},
         {"request", r.request}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

ReplayLog::Record ReplayLog::from_json(const json& j) {
  Record r;
  r.seq = j.value("seq", std::uint64_t{0});
  r.timestamp_ms = j.value("timestamp_ms", 0LL);
  r.backend = j.value("backend", std::string{});
  const auto kind = j.value("kind", std::string{"chat"});
  r.kind = kind == "tts"            ? BackendKind::tts
           : kind == "talking_head" ? BackendKind::talking_head
                                    : BackendKind::chat;
  r.digest = j.value("digest", std::string{});
  r.reply = j.value("reply", std::string{});
  r.error = j.value("error", std::string{});
  r.request = j.value("request", json::object());
  return r;
}

std::vector<ReplayLog::Record> ReplayLog::parse(std::string_view jsonl) {
  std::vector<Record> out;
  for (const auto& line : util::split(jsonl, '\n')) {
    if (util::trim(line).empty()) continue;
    out.push_back(from_json(json::parse(line)));
  }
  return out;
}

MockScript MockScript::from_json(const json& doc) {
  if (!doc.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "mock script must be an object");
  }
  MockScript s;
  try {
    if (doc.contains("default") && !doc["default"].is_null()) {
      s.default_reply = doc["default"].get<std::string>();
    }
    if (doc.contains("replies")) {
      s.replies = doc["replies"].get<std::map<std::string, std::string>>();
    }
    if (doc.contains("failures")) {
      s.failures = doc["failures"].get<std::map<std::string, std::string>>();
    }
    if (doc.contains("fail_all") && !doc["fail_all"].is_null()) {
      s.fail_all = doc["fail_all"].get<std::string>();
    }
    s.delay_ms = doc.value("delay_ms", 0);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig,
                std::string("malformed mock script: ") + e.what());
  }
  return s;
}

MockScript MockScript::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(util::read_file(path)));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

json MockScript::to_json() const {
  json j{{"replies", replies}};
  if (default_reply) j["default"] = *default_reply;
  if (!failures.empty()) j["failures"] = failures;
  if (fail_all) j["fail_all"] = *fail_all;
  if (delay_ms > 0) j["delay_ms"] = delay_ms;
  return j;
}

std::string mock_script_lookup(const MockScript& script,
                               std::string_view digest) {
  const auto it = script.replies.find(std::string(digest));
  if (it != script.replies.end()) return it->second;
  if (script.default_reply) return *script.default_reply;
  throw Error(ErrorCode::NoDefaultAndMiss,
              "no scripted reply for digest " + std::string(digest));
}

std::optional<std::string> mock_script_failure(const MockScript& script,
                                               std::string_view digest) {
  const auto it = script.failures.find(std::string(digest));
  if (it != script.failures.end()) return it->second;
  return script.fail_all;
}

void throw_scripted_failure(const std::string& mode,
                            const std::string& backend) {
  if (mode == "timeout") {
    throw Error(ErrorCode::Timeout, backend + ": scripted timeout");
  }
  if (mode == "protocol") {
    throw Error(ErrorCode::ProtocolError, backend + ": scripted bad reply");
  }
  if (mode == "unsupported_style") {
    throw Error(ErrorCode::UnsupportedStyle, backend + ": scripted rejection");
  }
  if (mode == "missing_asset") {
    throw Error(ErrorCode::MissingAsset, backend + ": scripted missing asset");
  }
  if (mode.rfind("http:", 0) == 0) {
    const int status = std::atoi(mode.c_str() + 5);
    throw Error(ErrorCode::HttpError,
                backend + ": scripted HTTP " + std::to_string(status), status);
  }
  throw Error(ErrorCode::InvalidConfig,
              backend + ": unknown scripted failure '" + mode + "'");
}

ChatClient::ChatClient(BackendDescriptor descriptor)
    : descriptor_(std::move(descriptor)) {}

std::string ChatClient::complete(const ChatRequest& req) {
  if (req.messages.empty()) {
    throw Error(ErrorCode::InvalidRequest, "chat request has no messages");
  }
  return with_one_retry([&] { return attempt(req); });
}

TtsClient::TtsClient(BackendDescriptor descriptor)
    : descriptor_(std::move(descriptor)) {}

ModalityRef TtsClient::synthesize(const TtsRequest& req) {
  if (req.text.empty()) {
    throw Error(ErrorCode::InvalidRequest, "TTS text is empty");
  }
  if (!is_speaking_style(req.speaking_style)) {
    throw Error(ErrorCode::UnsupportedStyle,
                "'" + req.speaking_style + "' is not in the speaking-style bank");
  }
  return with_one_retry([&] { return attempt(req); });
}

TalkingHeadClient::TalkingHeadClient(BackendDescriptor descriptor)
    : descriptor_(std::move(descriptor)) {}

ModalityRef TalkingHeadClient::generate(const TalkingHeadRequest& req) {
  if (!is_facial_emotion(req.facial_emotion)) {
    throw Error(ErrorCode::InvalidRequest,
                "'" + req.facial_emotion + "' is not in the facial bank");
  }
  if (req.speech.kind != ModalityKind::audio) {
    throw Error(ErrorCode::InvalidRequest, "speech ref must be audio");
  }
  if (req.speech.uri.empty() || local_asset_missing(req.speech.uri)) {
    throw Error(ErrorCode::MissingAsset,
                "speech asset '" + req.speech.uri + "' does not resolve");
  }
  return with_one_retry([&] { return attempt(req); });
}

MockChatClient::MockChatClient(BackendDescriptor descriptor, MockScript script,
                               std::shared_ptr<ReplayLog> log)
    : ChatClient(std::move(descriptor)),
      script_(std::move(script)),
      log_(std::move(log)) {}

std::string MockChatClient::attempt(const ChatRequest& req) {
  const auto digest = chat_request_digest(req);
  const auto wire = chat_wire_body(req, descriptor().model);
  scripted_delay(script_);
  try {
    if (auto failure = mock_script_failure(script_, digest)) {
      throw_scripted_failure(*failure, descriptor().name);
    }
    auto reply = mock_script_lookup(script_, digest);
    log_attempt(log_, descriptor(), digest, wire, reply, {});
    return reply;
  } catch (const Error& e) {
    log_attempt(log_, descriptor(), digest, wire, {},
                std::string(to_string(e.code())));
    throw;
  }
}

MockTtsClient::MockTtsClient(BackendDescriptor descriptor, MockScript script,
                             std::filesystem::path asset_dir,
                             std::shared_ptr<ReplayLog> log)
    : TtsClient(std::move(descriptor)),
      script_(std::move(script)),
      asset_dir_(std::move(asset_dir)),
      log_(std::move(log)) {}

ModalityRef MockTtsClient::attempt(const TtsRequest& req) {
  const auto digest = tts_request_digest(req);
  const auto wire = tts_wire_body(req);
  scripted_delay(script_);
  try {
    if (auto failure = mock_script_failure(script_, digest)) {
      throw_scripted_failure(*failure, descriptor().name);
    }
    const auto path = asset_dir_ / "mock-tts" / (digest.substr(0, 16) + ".wav");
    util::write_file(path, silent_wav());
    log_attempt(log_, descriptor(), digest, wire, path.string(), {});
    return ModalityRef{path.string(), ModalityKind::audio, 0};
  } catch (const Error& e) {
    log_attempt(log_, descriptor(), digest, wire, {},
                std::string(to_string(e.code())));
    throw;
  }
}

MockTalkingHeadClient::MockTalkingHeadClient(BackendDescriptor descriptor,
                                             MockScript script,
                                             std::filesystem::path asset_dir,
                                             std::shared_ptr<ReplayLog> log)
    : TalkingHeadClient(std::move(descriptor)),
      script_(std::move(script)),
      asset_dir_(std::move(asset_dir)),
      log_(std::move(log)) {}

ModalityRef MockTalkingHeadClient::attempt(const TalkingHeadRequest& req) {
  const auto digest = talking_head_request_digest(req);
  const auto wire = talking_head_wire_body(req);
  scripted_delay(script_);
  try {
    if (auto failure = mock_script_failure(script_, digest)) {
      throw_scripted_failure(*failure, descriptor().name);
    }
    const auto path = asset_dir_ / "mock-th" / (digest.substr(0, 16) + ".mp4");
    util::write_file(path, "mock talking head\n" + wire.dump() + "\n");
    log_attempt(log_, descriptor(), digest, wire, path.string(), {});
    return ModalityRef{path.string(), ModalityKind::video, std::nullopt};
  } catch (const Error& e) {
    log_attempt(log_, descriptor(), digest, wire, {},
                std::string(to_string(e.code())));
    throw;
  }
}

HttpChatClient::HttpChatClient(BackendDescriptor descriptor,
                               std::shared_ptr<ReplayLog> log)
    : ChatClient(std::move(descriptor)), log_(std::move(log)) {}

std::string HttpChatClient::attempt(const ChatRequest& req) {
  const auto body = chat_wire_body(req, descriptor().model);
  const auto digest = chat_request_digest(req);
  try {
    auto text = extract_chat_content(post_json(descriptor(), body),
                                     descriptor().name);
    log_attempt(log_, descriptor(), digest, body, text, {});
    return text;
  } catch (const Error& e) {
    log_attempt(log_, descriptor(), digest, body, {},
                std::string(to_string(e.code())));
    throw;
  }
}

HttpTtsClient::HttpTtsClient(BackendDescriptor descriptor,
                             std::shared_ptr<ReplayLog> log)
    : TtsClient(std::move(descriptor)), log_(std::move(log)) {}

ModalityRef HttpTtsClient::attempt(const TtsRequest& req) {
  const auto body = tts_wire_body(req);
  const auto digest = tts_request_digest(req);
  try {
    auto uri = string_field(post_json(descriptor(), body), "audio_uri",
                            descriptor().name);
    log_attempt(log_, descriptor(), digest, body, uri, {});
    return ModalityRef{std::move(uri), ModalityKind::audio, std::nullopt};
  } catch (const Error& e) {
    log_attempt(log_, descriptor(), digest, body, {},
                std::string(to_string(e.code())));
    throw;
  }
}

HttpTalkingHeadClient::HttpTalkingHeadClient(BackendDescriptor descriptor,
                                             std::shared_ptr<ReplayLog> log)
    : TalkingHeadClient(std::move(descriptor)), log_(std::move(log)) {}

ModalityRef HttpTalkingHeadClient::attempt(const TalkingHeadRequest& req) {
  const auto body = talking_head_wire_body(req);
  const auto digest = talking_head_request_digest(req);
  try {
    auto uri = string_field(post_json(descriptor(), body), "video_uri",
                            descriptor().name);
    log_attempt(log_, descriptor(), digest, body, uri, {});
    return ModalityRef{std::move(uri), ModalityKind::video, std::nullopt};
  } catch (const Error& e) {
    log_attempt(log_, descriptor(), digest, body, {},
                std::string(to_string(e.code())));
    throw;
  }
}

RecordingChatClient::RecordingChatClient(std::unique_ptr<ChatClient> inner)
    : ChatClient(inner->descriptor()), inner_(std::move(inner)) {}

MockScript RecordingChatClient::script() const {
  std::lock_guard lock(mutex_);
  return recorded_;
}

std::string RecordingChatClient::attempt(const ChatRequest& req) {
  auto reply = inner_->attempt(req);
  std::lock_guard lock(mutex_);
  recorded_.replies[chat_request_digest(req)] = reply;
  return reply;
}

std::unique_ptr<ChatClient> make_chat_client(const BackendDescriptor& d,
                                             const BackendContext& ctx) {
  if (d.kind != BackendKind::chat) {
    throw Error(ErrorCode::InvalidConfig, d.name + " is not a chat backend");
  }
  if (d.is_mock()) {
    if (d.mock_script_path().empty()) {
      throw Error(ErrorCode::InvalidConfig,
                  d.name + ": chat mocks need a script path");
    }
    return std::make_unique<MockChatClient>(
        d, MockScript::load(d.mock_script_path()), ctx.log);
  }
  return std::make_unique<HttpChatClient>(d, ctx.log);
}

std::unique_ptr<TtsClient> make_tts_client(const BackendDescriptor& d,
                                           const BackendContext& ctx) {
  if (d.kind != BackendKind::tts) {
    throw Error(ErrorCode::InvalidConfig, d.name + " is not a TTS backend");
  }
  if (d.is_mock()) {
    const auto path = d.mock_script_path();
    return std::make_unique<MockTtsClient>(
        d, path.empty() ? MockScript{} : MockScript::load(path), ctx.asset_dir,
        ctx.log);
  }
  return std::make_unique<HttpTtsClient>(d, ctx.log);
}

std::unique_ptr<TalkingHeadClient> make_talking_head_client(
    const BackendDescriptor& d, const BackendContext& ctx) {
  if (d.kind != BackendKind::talking_head) {
    throw Error(ErrorCode::InvalidConfig,
                d.name + " is not a talking-head backend");
  }
  if (d.is_mock()) {
    const auto path = d.mock_script_path();
    return std::make_unique<MockTalkingHeadClient>(
        d, path.empty() ? MockScript{} : MockScript::load(path), ctx.asset_dir,
        ctx.log);
  }
  return std::make_unique<HttpTalkingHeadClient>(d, ctx.log);
}

}  // namespace merg
