#pragma once

#include "merg/dialogue.hpp"
#include "merg/prompt.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace merg {

enum class BackendKind { chat, tts, talking_head };

std::string_view to_string(BackendKind kind);

/// One entry of the backend registry. `endpoint` is either an http(s) URL
/// or `mock:<script-path>` (the path may be empty for media mocks).
struct BackendDescriptor {
  std::string name;
  BackendKind kind = BackendKind::chat;
  std::string endpoint;
  /// Voting weight; only consulted by weighted voting.
  std::optional<double> weight;
  int timeout_ms = 30000;
  /// Model id sent in chat requests; defaults to `name`.
  std::string model;
  /// Environment variable holding a bearer token, if any.
  std::string api_key_env;

  bool is_mock() const { return endpoint.rfind("mock:", 0) == 0; }
  std::string mock_script_path() const { return endpoint.substr(5); }
};

/// Registry file: {"backends": [{name, kind, endpoint, weight?, timeout_ms?,
/// model?, api_key_env?}, ...]}. Relative mock script paths resolve against
/// `base_dir`. Throws InvalidConfig.
std::vector<BackendDescriptor> parse_backend_registry(
    const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
std::vector<BackendDescriptor> load_backend_registry(
    const std::filesystem::path& path);

struct ChatMessage {
  std::string role = "user";
  std::vector<PromptSegment> segments;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  int max_tokens = 256;
  double temperature = 0.0;
};

/// Single user message carrying a rendered prompt.
ChatRequest make_chat_request(const RenderedPrompt& prompt, int max_tokens,
                              double temperature);

struct TtsRequest {
  std::string text;
  std::string speaking_style;
  ModalityRef reference_speech;
  std::optional<std::string> language;
};

struct TalkingHeadRequest {
  ModalityRef speech;
  ModalityRef reference_facial;
  std::string facial_emotion;
};

/// Chat-completions style `messages` array. Text-only messages carry a
/// string `content`; messages with media carry content parts of type
/// `text`, `audio_url` and `video_url`.
nlohmann::json chat_wire_messages(const ChatRequest& req);
nlohmann::json chat_wire_body(const ChatRequest& req, const std::string& model);
nlohmann::json tts_wire_body(const TtsRequest& req);
nlohmann::json talking_head_wire_body(const TalkingHeadRequest& req);

/// sha256 of the compact JSON {"messages": chat_wire_messages(req)}.
/// Sampling parameters are deliberately excluded.
std::string chat_request_digest(const ChatRequest& req);
/// sha256 of the compact JSON {"speaking_style": ..., "text": ...}.
std::string tts_request_digest(const TtsRequest& req);
/// sha256 of the compact JSON {"emotion": ..., "speech_uri": ...}.
std::string talking_head_request_digest(const TalkingHeadRequest& req);

/// Append-only record of every request a backend served. Shared by all
/// clients of one engine so that records carry a global order.
class ReplayLog {
 public:
  struct Record {
    std::uint64_t seq = 0;
    long long timestamp_ms = 0;
    std::string backend;
    BackendKind kind = BackendKind::chat;
    std::string digest;
    std::string reply;
    /// Error code name when the attempt failed, empty on success.
    std::string error;
    nlohmann::json request;
  };

  ReplayLog() = default;
  /// Records are also appended to `file` as JSON lines.
  explicit ReplayLog(std::filesystem::path file);

  void append(Record record);
  std::vector<Record> records() const;
  std::size_t size() const;

  static nlohmann::json to_json(const Record& r);
  static Record from_json(const nlohmann::json& j);
  static std::vector<Record> parse(std::string_view jsonl);

 private:
  mutable std::mutex mutex_;
  std::vector<Record> records_;
  std::optional<std::filesystem::path> file_;
  std::uint64_t next_seq_ = 1;
};

/// Scripted replies for mock backends, keyed by request digest.
///
/// File form: {"default": "...", "replies": {digest: reply},
///             "failures": {digest: mode}, "fail_all": mode, "delay_ms": n}
/// where mode is "timeout", "protocol", "http:<status>",
/// "unsupported_style" or "missing_asset".
struct MockScript {
  std::map<std::string, std::string> replies;
  std::optional<std::string> default_reply;
  std::map<std::string, std::string> failures;
  std::optional<std::string> fail_all;
  int delay_ms = 0;

  static MockScript from_json(const nlohmann::json& doc);
  static MockScript load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Scripted reply for `digest`, else the default. Throws NoDefaultAndMiss.
std::string mock_script_lookup(const MockScript& script,
                               std::string_view digest);

/// Failure mode scripted for `digest`, if any.
std::optional<std::string> mock_script_failure(const MockScript& script,
                                               std::string_view digest);

/// Throws the Error a failure mode describes.
[[noreturn]] void throw_scripted_failure(const std::string& mode,
                                         const std::string& backend);

/// Where mocks write assets and where every client logs.
struct BackendContext {
  std::filesystem::path asset_dir;
  std::shared_ptr<ReplayLog> log;
};

class ChatClient {
 public:
  explicit ChatClient(BackendDescriptor descriptor);
  virtual ~ChatClient() = default;

  /// Full completion text. A Timeout is retried exactly once.
  std::string complete(const ChatRequest& req);

  const BackendDescriptor& descriptor() const { return descriptor_; }

 protected:
  virtual std::string attempt(const ChatRequest& req) = 0;

 private:
  friend class RecordingChatClient;
  BackendDescriptor descriptor_;
};

class TtsClient {
 public:
  explicit TtsClient(BackendDescriptor descriptor);
  virtual ~TtsClient() = default;

  /// Validates the request (InvalidRequest / UnsupportedStyle), then calls
  /// the backend with one retry on Timeout.
  ModalityRef synthesize(const TtsRequest& req);

  const BackendDescriptor& descriptor() const { return descriptor_; }

 protected:
  virtual ModalityRef attempt(const TtsRequest& req) = 0;

 private:
  BackendDescriptor descriptor_;
};

class TalkingHeadClient {
 public:
  explicit TalkingHeadClient(BackendDescriptor descriptor);
  virtual ~TalkingHeadClient() = default;

  /// Validates the request (InvalidRequest / MissingAsset for local speech
  /// paths that do not exist), then calls the backend with one retry on
  /// Timeout.
  ModalityRef generate(const TalkingHeadRequest& req);

  const BackendDescriptor& descriptor() const { return descriptor_; }

 protected:
  virtual ModalityRef attempt(const TalkingHeadRequest& req) = 0;

 private:
  BackendDescriptor descriptor_;
};

class MockChatClient final : public ChatClient {
 public:
  MockChatClient(BackendDescriptor descriptor, MockScript script,
                 std::shared_ptr<ReplayLog> log);

 protected:
  std::string attempt(const ChatRequest& req) override;

 private:
  MockScript script_;
  std::shared_ptr<ReplayLog> log_;
};

/// Writes a silent WAV to `<asset_dir>/mock-tts/<digest16>.wav`.
class MockTtsClient final : public TtsClient {
 public:
  MockTtsClient(BackendDescriptor descriptor, MockScript script,
                std::filesystem::path asset_dir,
                std::shared_ptr<ReplayLog> log);

 protected:
  ModalityRef attempt(const TtsRequest& req) override;

 private:
  MockScript script_;
  std::filesystem::path asset_dir_;
  std::shared_ptr<ReplayLog> log_;
};

/// Writes a placeholder file to `<asset_dir>/mock-th/<digest16>.mp4`.
class MockTalkingHeadClient final : public TalkingHeadClient {
 public:
  MockTalkingHeadClient(BackendDescriptor descriptor, MockScript script,
                        std::filesystem::path asset_dir,
                        std::shared_ptr<ReplayLog> log);

 protected:
  ModalityRef attempt(const TalkingHeadRequest& req) override;

 private:
  MockScript script_;
  std::filesystem::path asset_dir_;
  std::shared_ptr<ReplayLog> log_;
};

/// Chat-completions over HTTP(S). Reply must carry
/// choices[0].message.content.
class HttpChatClient final : public ChatClient {
 public:
  HttpChatClient(BackendDescriptor descriptor, std::shared_ptr<ReplayLog> log);

 protected:
  std::string attempt(const ChatRequest& req) override;

 private:
  std::shared_ptr<ReplayLog> log_;
};

/// POSTs tts_wire_body; reply {"audio_uri": "..."}.
class HttpTtsClient final : public TtsClient {
 public:
  HttpTtsClient(BackendDescriptor descriptor, std::shared_ptr<ReplayLog> log);

 protected:
  ModalityRef attempt(const TtsRequest& req) override;

 private:
  std::shared_ptr<ReplayLog> log_;
};

/// POSTs talking_head_wire_body; reply {"video_uri": "..."}.
class HttpTalkingHeadClient final : public TalkingHeadClient {
 public:
  HttpTalkingHeadClient(BackendDescriptor descriptor,
                        std::shared_ptr<ReplayLog> log);

 protected:
  ModalityRef attempt(const TalkingHeadRequest& req) override;

 private:
  std::shared_ptr<ReplayLog> log_;
};

/// Wraps another chat client and collects digest -> reply pairs, for
/// `mock record`.
class RecordingChatClient final : public ChatClient {
 public:
  explicit RecordingChatClient(std::unique_ptr<ChatClient> inner);

  MockScript script() const;

 protected:
  std::string attempt(const ChatRequest& req) override;

 private:
  std::unique_ptr<ChatClient> inner_;
  mutable std::mutex mutex_;
  MockScript recorded_;
};

std::unique_ptr<ChatClient> make_chat_client(const BackendDescriptor& d,
                                             const BackendContext& ctx);
std::unique_ptr<TtsClient> make_tts_client(const BackendDescriptor& d,
                                           const BackendContext& ctx);
std::unique_ptr<TalkingHeadClient> make_talking_head_client(
    const BackendDescriptor& d, const BackendContext& ctx);

}  // namespace merg
