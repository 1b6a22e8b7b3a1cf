#pragma once

#include "merg/backends.hpp"
#include "merg/dialogue.hpp"
#include "merg/emotion.hpp"
#include "merg/memory.hpp"
#include "merg/prompt.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace merg {

struct PipelineConfig {
  EmotionSet emoset = EmotionSet::default_set();
  std::vector<BackendDescriptor> chat_backends;
  std::optional<BackendDescriptor> tts_backend;
  std::optional<BackendDescriptor> th_backend;
  VotingStrategy voting = VotingStrategy::majority;
  /// Per chat backend name; required for weighted voting.
  std::map<std::string, double> weights;
  std::size_t few_shot_n = 0;
  std::uint64_t few_shot_seed = 0;
  std::vector<FewShotExample> few_shot_pool;
  EmotionMapping mapping = EmotionMapping::default_table();
  bool text_only = false;
  std::size_t max_history_turns = 16;
  int emotion_max_tokens = 16;
  int response_max_tokens = 256;
  double temperature = 0.0;
  std::optional<std::string> language;
};

/// Human-readable violations; empty when the config is usable.
std::vector<std::string> validate_config(const PipelineConfig& config);

/// Builds a config from a JSON document (see docs/configuration.md) and the
/// backend registry. Relative paths resolve against `base_dir`. Throws
/// InvalidConfig.
PipelineConfig parse_pipeline_config(const nlohmann::json& doc,
                                     const std::vector<BackendDescriptor>& registry,
                                     const std::filesystem::path& base_dir = {});

/// Applies the subset of config keys a client may override per session:
/// voting, weights, few_shot_n, few_shot_seed, text_only, max_history_turns,
/// chat_backends, temperature. Throws InvalidConfig.
void apply_config_overrides(PipelineConfig& config, const nlohmann::json& overrides,
                            const std::vector<BackendDescriptor>& registry);

nlohmann::json config_summary(const PipelineConfig& config);

enum class StageState { ok, failed, skipped };

std::string_view to_string(StageState state);

struct StageStatus {
  StageState state = StageState::skipped;
  std::string reason;

  friend bool operator==(const StageStatus&, const StageStatus&) = default;
};

inline constexpr const char* kStageMeu = "meu";
inline constexpr const char* kStageEmr = "emr";
inline constexpr const char* kStageTts = "tts";
inline constexpr const char* kStageTh = "th";

struct TurnResult {
  /// Index of the listener turn this result was appended as.
  std::size_t turn_index = 0;
  EmotionLabel predicted_emotion;
  std::string response_text;
  std::optional<ModalityRef> speech;
  std::optional<ModalityRef> video;
  /// Keys: meu, emr, tts, th.
  std::map<std::string, StageStatus> stage_status;
  std::map<std::string, long long> timings_ms;
  VotingResult vote;
  std::optional<EmotionTokens> emotion_tokens;
  /// backend name -> failure, for chat backends that produced no ballot.
  std::map<std::string, std::string> backend_errors;
};

nlohmann::json turn_result_to_json(const TurnResult& result);

struct Session {
  std::string id;
  Dialogue dialogue;
  std::optional<IdentityProfile> speaker_profile;
  std::optional<IdentityProfile> listener_profile;
  PipelineConfig config;
  /// Few-shot examples drawn once at session start.
  std::vector<FewShotExample> examples;
};

struct StageEvent {
  std::string type;
  nlohmann::json data;
};

using ProgressFn = std::function<void(const StageEvent&)>;

struct BatchItem {
  std::string dialogue_id;
  std::optional<TurnResult> result;
  std::optional<EmotionLabel> gold;
  /// Set when the item failed; the batch keeps going.
  std::string error;
};

/// Runs turns against a memory store and a set of backend clients.
class Engine {
 public:
  Engine(std::shared_ptr<MemoryStore> store, BackendContext context);

  /// Replaces the client the engine would otherwise build for that backend.
  void set_chat_client(std::shared_ptr<ChatClient> client);
  void set_tts_client(std::shared_ptr<TtsClient> client);
  void set_talking_head_client(std::shared_ptr<TalkingHeadClient> client);

  MemoryStore& store() { return *store_; }
  const BackendContext& context() const { return context_; }

  /// Throws InvalidConfig or UnknownProfile. Profiles are optional when the
  /// config is text-only.
  Session start_session(PipelineConfig config,
                        const std::string& speaker_profile_id,
                        const std::string& listener_profile_id);

  /// Understanding, retrieval, then generation for one user query. Media
  /// stage failures degrade the result; a turn in which no chat backend
  /// produced a ballot throws AllBackendsFailed and leaves the dialogue as
  /// it was.
  TurnResult run_turn(Session& session, const Utterance& query,
                      const ProgressFn& progress = {});

  /// One turn per dialogue on its final speaker turn, earlier turns as
  /// history. Item failures are recorded, never thrown.
  std::vector<BatchItem> run_batch(std::span<const Dialogue> dataset,
                                   const PipelineConfig& config);

 private:
  std::shared_ptr<ChatClient> chat_client(const BackendDescriptor& d);
  std::shared_ptr<TtsClient> tts_client(const BackendDescriptor& d);
  std::shared_ptr<TalkingHeadClient> talking_head_client(
      const BackendDescriptor& d);

  std::shared_ptr<MemoryStore> store_;
  BackendContext context_;
  std::mutex clients_mutex_;
  std::map<std::string, std::shared_ptr<ChatClient>> chat_clients_;
  std::map<std::string, std::shared_ptr<TtsClient>> tts_clients_;
  std::map<std::string, std::shared_ptr<TalkingHeadClient>> th_clients_;
};

}  // namespace merg
