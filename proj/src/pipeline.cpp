#include "merg/pipeline.hpp"

#include "merg/error.hpp"
#include "merg/util.hpp"

#include <chrono>
#include <future>
#include <set>

namespace merg {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

long long elapsed_ms(Clock::time_point since) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() -
                                                               since)
      .count();
}

const BackendDescriptor& find_backend(
    const std::vector<BackendDescriptor>& registry, const std::string& name,
    BackendKind kind) {
  for (const auto& d : registry) {
    if (d.name == name) {
      if (d.kind != kind) {
        throw Error(ErrorCode::InvalidConfig,
                    "backend '" + name + "' is " + std::string(to_string(d.kind)) +
                        ", expected " + std::string(to_string(kind)));
      }
      return d;
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown backend '" + name + "'");
}

std::optional<BackendDescriptor> first_of_kind(
    const std::vector<BackendDescriptor>& registry, BackendKind kind) {
  for (const auto& d : registry) {
    if (d.kind == kind) return d;
  }
  return std::nullopt;
}

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

std::vector<FewShotExample> load_pool_file(const std::filesystem::path& path,
                                           const EmotionSet& emoset) {
  const auto text = util::read_file(path);
  for (const auto& line : util::split(text, '\n')) {
    if (util::trim(line).empty()) continue;
    const auto first = json::parse(line, nullptr, false);
    if (first.is_object() && first.contains("turns")) {
      const auto dialogues = parse_dataset(text, emoset);
      return few_shot_pool_from_dialogues(dialogues);
    }
    break;
  }
  return load_few_shot_pool(path, emoset);
}

template <typename T>
T get_field(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key) || doc[key].is_null()) return fallback;
  try {
    return doc[key].get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::InvalidConfig,
                std::string("config field '") + key + "' has the wrong type");
  }
}

std::vector<BackendDescriptor> chat_backends_by_name(
    const json& names, const std::vector<BackendDescriptor>& registry) {
  if (!names.is_array()) {
    throw Error(ErrorCode::InvalidConfig, "'chat_backends' must be a list");
  }
  std::vector<BackendDescriptor> out;
  for (const auto& n : names) {
    if (!n.is_string()) {
      throw Error(ErrorCode::InvalidConfig, "chat backend names are strings");
    }
    out.push_back(find_backend(registry, n.get<std::string>(), BackendKind::chat));
  }
  return out;
}

std::map<std::string, double> weights_from(const json& obj) {
  if (!obj.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "'weights' must be an object");
  }
  std::map<std::string, double> out;
  for (const auto& [name, value] : obj.items()) {
    if (!value.is_number()) {
      throw Error(ErrorCode::InvalidConfig, "weight for " + name + " must be a number");
    }
    out[name] = value.get<double>();
  }
  return out;
}

void validate_query(const Utterance& query) {
  Dialogue probe{"query", {Turn{Role::speaker, query, std::nullopt}}, {}, {}, {}};
  const auto violations = validate_dialogue(probe, true);
  if (!violations.empty()) {
    throw Error(ErrorCode::InvalidQuery,
                std::string(to_string(violations.front().kind)));
  }
}

struct BackendOutcome {
  std::optional<VotingBallot> ballot;
  std::string error;
};

}  // namespace

std::vector<std::string> validate_config(const PipelineConfig& c) {
  std::vector<std::string> v;
  if (c.chat_backends.empty()) v.emplace_back("no chat backends configured");
  for (const auto& d : c.chat_backends) {
    if (d.kind != BackendKind::chat) {
      v.push_back("backend '" + d.name + "' is not a chat backend");
    }
  }
  if (c.voting != VotingStrategy::single && c.chat_backends.size() < 2) {
    v.push_back(std::string(to_string(c.voting)) +
                " voting needs at least 2 chat backends");
  }
  if (c.voting == VotingStrategy::weighted) {
    for (const auto& d : c.chat_backends) {
      const auto it = c.weights.find(d.name);
      if (it == c.weights.end()) {
        v.push_back("missing weight for chat backend '" + d.name + "'");
      } else if (!(it->second > 0.0)) {
        v.push_back("weight for chat backend '" + d.name + "' must be positive");
      }
    }
  }
  if (!c.text_only) {
    if (!c.tts_backend) {
      v.emplace_back("no TTS backend configured");
    } else if (c.tts_backend->kind != BackendKind::tts) {
      v.push_back("backend '" + c.tts_backend->name + "' is not a TTS backend");
    }
    if (!c.th_backend) {
      v.emplace_back("no talking-head backend configured");
    } else if (c.th_backend->kind != BackendKind::talking_head) {
      v.push_back("backend '" + c.th_backend->name +
                  "' is not a talking-head backend");
    }
  }
  for (const auto& label : c.mapping.uncovered(c.emoset)) {
    v.push_back("emotion mapping has no row for '" + label + "'");
  }
  if (c.few_shot_n > c.few_shot_pool.size()) {
    v.push_back("few_shot_n=" + std::to_string(c.few_shot_n) +
                " exceeds pool of " + std::to_string(c.few_shot_pool.size()));
  }
  for (const auto& ex : c.few_shot_pool) {
    if (!c.emoset.contains(ex.gold_emotion)) {
      v.push_back("few-shot example labelled '" + ex.gold_emotion +
                  "' outside the emotion set");
      break;
    }
  }
  if (c.max_history_turns == 0) v.emplace_back("max_history_turns must be >= 1");
  if (c.emotion_max_tokens <= 0 || c.response_max_tokens <= 0) {
    v.emplace_back("max token limits must be positive");
  }
  if (c.temperature < 0.0) v.emplace_back("temperature must be non-negative");
  return v;
}

PipelineConfig parse_pipeline_config(const json& doc,
                                     const std::vector<BackendDescriptor>& registry,
                                     const std::filesystem::path& base_dir) {
  if (!doc.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  }
  PipelineConfig c;
  if (doc.contains("emoset")) {
    const auto& e = doc["emoset"];
    if (e.is_string()) {
      c.emoset = EmotionSet::parse_list(e.get<std::string>());
    } else if (e.is_array()) {
      c.emoset = EmotionSet(e.get<std::vector<std::string>>());
    } else {
      throw Error(ErrorCode::InvalidConfig, "'emoset' must be a list");
    }
  }
  if (doc.contains("mapping")) {
    const auto& m = doc["mapping"];
    if (m.is_string()) {
      c.mapping = EmotionMapping::load(resolve(base_dir, m.get<std::string>()));
    } else if (m.is_array()) {
      EmotionMapping mapping;
      for (const auto& row : m) {
        const auto label = get_field<std::string>(row, "fine_label", "");
        EmotionTokens tokens{get_field<std::string>(row, "speaking_style", ""),
                             get_field<std::string>(row, "facial_emotion", "")};
        if (label == "*") {
          mapping.set_fallback(tokens);
        } else {
          mapping.set(label, tokens);
        }
      }
      c.mapping = std::move(mapping);
    } else {
      throw Error(ErrorCode::InvalidConfig, "'mapping' must be a path or rows");
    }
  }

  if (doc.contains("chat_backends")) {
    c.chat_backends = chat_backends_by_name(doc["chat_backends"], registry);
  } else {
    for (const auto& d : registry) {
      if (d.kind == BackendKind::chat) c.chat_backends.push_back(d);
    }
  }
  if (doc.contains("tts_backend")) {
    c.tts_backend = find_backend(registry, get_field<std::string>(doc, "tts_backend", ""),
                                 BackendKind::tts);
  } else {
    c.tts_backend = first_of_kind(registry, BackendKind::tts);
  }
  if (doc.contains("talking_head_backend")) {
    c.th_backend = find_backend(
        registry, get_field<std::string>(doc, "talking_head_backend", ""),
        BackendKind::talking_head);
  } else {
    c.th_backend = first_of_kind(registry, BackendKind::talking_head);
  }

  const auto voting = get_field<std::string>(doc, "voting", "majority");
  const auto strategy = parse_voting_strategy(voting);
  if (!strategy) {
    throw Error(ErrorCode::InvalidConfig, "unknown voting strategy " + voting);
  }
  c.voting = *strategy;
  if (doc.contains("weights")) {
    c.weights = weights_from(doc["weights"]);
  } else {
    for (const auto& d : c.chat_backends) {
      if (d.weight) c.weights[d.name] = *d.weight;
    }
  }

  c.few_shot_n = get_field<std::size_t>(doc, "few_shot_n", 0);
  c.few_shot_seed = get_field<std::uint64_t>(doc, "few_shot_seed", 0);
  if (doc.contains("few_shot_pool")) {
    c.few_shot_pool = load_pool_file(
        resolve(base_dir, get_field<std::string>(doc, "few_shot_pool", "")),
        c.emoset);
  }
  c.text_only = get_field<bool>(doc, "text_only", false);
  c.max_history_turns = get_field<std::size_t>(doc, "max_history_turns", 16);
  c.emotion_max_tokens = get_field<int>(doc, "emotion_max_tokens", 16);
  c.response_max_tokens = get_field<int>(doc, "response_max_tokens", 256);
  c.temperature = get_field<double>(doc, "temperature", 0.0);
  if (doc.contains("language") && doc["language"].is_string()) {
    c.language = doc["language"].get<std::string>();
  }
  return c;
}

void apply_config_overrides(PipelineConfig& c, const json& o,
                            const std::vector<BackendDescriptor>& registry) {
  if (o.is_null()) return;
  if (!o.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "config overrides must be an object");
  }
  static const std::set<std::string> allowed{
      "voting",     "weights",           "few_shot_n",    "few_shot_seed",
      "text_only",  "max_history_turns", "chat_backends", "temperature"};
  for (const auto& [key, value] : o.items()) {
    if (!allowed.contains(key)) {
      throw Error(ErrorCode::InvalidConfig, "'" + key + "' cannot be overridden");
    }
  }
  if (o.contains("voting")) {
    const auto voting = get_field<std::string>(o, "voting", "");
    const auto strategy = parse_voting_strategy(voting);
    if (!strategy) {
      throw Error(ErrorCode::InvalidConfig, "unknown voting strategy " + voting);
    }
    c.voting = *strategy;
  }
  if (o.contains("chat_backends")) {
    c.chat_backends = chat_backends_by_name(o["chat_backends"], registry);
  }
  if (o.contains("weights")) c.weights = weights_from(o["weights"]);
  c.few_shot_n = get_field<std::size_t>(o, "few_shot_n", c.few_shot_n);
  c.few_shot_seed = get_field<std::uint64_t>(o, "few_shot_seed", c.few_shot_seed);
  c.text_only = get_field<bool>(o, "text_only", c.text_only);
  c.max_history_turns =
      get_field<std::size_t>(o, "max_history_turns", c.max_history_turns);
  c.temperature = get_field<double>(o, "temperature", c.temperature);
}

json config_summary(const PipelineConfig& c) {
  json chat = json::array();
  for (const auto& d : c.chat_backends) chat.push_back(d.name);
  json j{{"emoset", c.emoset.labels()},
         {"chat_backends", chat},
         {"voting", to_string(c.voting)},
         {"few_shot_n", c.few_shot_n},
         {"few_shot_seed", c.few_shot_seed},
         {"text_only", c.text_only},
         {"max_history_turns", c.max_history_turns}};
  if (!c.weights.empty()) j["weights"] = c.weights;
  if (c.tts_backend) j["tts_backend"] = c.tts_backend->name;
  if (c.th_backend) j["talking_head_backend"] = c.th_backend->name;
  return j;
}

std::string_view to_string(StageState state) {
  switch (state) {
    case StageState::ok: return "ok";
    case StageState::failed: return "failed";
    case StageState::skipped: return "skipped";
  }
  return "skipped";
}

json turn_result_to_json(const TurnResult& r) {
  json status = json::object();
  for (const auto& [stage, s] : r.stage_status) {
    json entry{{"state", to_string(s.state)}};
    if (!s.reason.empty()) entry["reason"] = s.reason;
    status[stage] = std::move(entry);
  }
  json j{{"turn_index", r.turn_index},
         {"predicted_emotion", r.predicted_emotion},
         {"response_text", r.response_text},
         {"speech_uri", r.speech ? json(r.speech->uri) : json(nullptr)},
         {"video_uri", r.video ? json(r.video->uri) : json(nullptr)},
         {"stage_status", status},
         {"timings_ms", r.timings_ms},
         {"voting",
          {{"strategy", to_string(r.vote.strategy)},
           {"tally", r.vote.tally},
           {"winner_backend", r.vote.winner_backend}}}};
  if (r.emotion_tokens) {
    j["speaking_style"] = r.emotion_tokens->speaking_style;
    j["facial_emotion"] = r.emotion_tokens->facial_emotion;
  }
  if (!r.backend_errors.empty()) j["backend_errors"] = r.backend_errors;
  return j;
}

Engine::Engine(std::shared_ptr<MemoryStore> store, BackendContext context)
    : store_(std::move(store)), context_(std::move(context)) {
  if (context_.asset_dir.empty()) context_.asset_dir = store_->asset_root();
}

void Engine::set_chat_client(std::shared_ptr<ChatClient> client) {
  std::lock_guard lock(clients_mutex_);
  chat_clients_[client->descriptor().name] = std::move(client);
}

void Engine::set_tts_client(std::shared_ptr<TtsClient> client) {
  std::lock_guard lock(clients_mutex_);
  tts_clients_[client->descriptor().name] = std::move(client);
}

void Engine::set_talking_head_client(std::shared_ptr<TalkingHeadClient> client) {
  std::lock_guard lock(clients_mutex_);
  th_clients_[client->descriptor().name] = std::move(client);
}

std::shared_ptr<ChatClient> Engine::chat_client(const BackendDescriptor& d) {
  std::lock_guard lock(clients_mutex_);
  auto& slot = chat_clients_[d.name];
  if (!slot) slot = make_chat_client(d, context_);
  return slot;
}

std::shared_ptr<TtsClient> Engine::tts_client(const BackendDescriptor& d) {
  std::lock_guard lock(clients_mutex_);
  auto& slot = tts_clients_[d.name];
  if (!slot) slot = make_tts_client(d, context_);
  return slot;
}

std::shared_ptr<TalkingHeadClient> Engine::talking_head_client(
    const BackendDescriptor& d) {
  std::lock_guard lock(clients_mutex_);
  auto& slot = th_clients_[d.name];
  if (!slot) slot = make_talking_head_client(d, context_);
  return slot;
}

Session Engine::start_session(PipelineConfig config,
                              const std::string& speaker_profile_id,
                              const std::string& listener_profile_id) {
  const auto violations = validate_config(config);
  if (!violations.empty()) {
    std::string msg;
    for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + v;
    throw Error(ErrorCode::InvalidConfig, msg);
  }
  Session s;
  s.id = "s-" + util::random_hex_id();
  s.dialogue.id = s.id;
  s.dialogue.speaker_profile_id = speaker_profile_id;
  s.dialogue.listener_profile_id = listener_profile_id;
  if (!config.text_only || store_->has_profile(speaker_profile_id)) {
    s.speaker_profile = store_->profile(speaker_profile_id);
  }
  if (!config.text_only || store_->has_profile(listener_profile_id)) {
    s.listener_profile = store_->profile(listener_profile_id);
  }
  s.examples = sample_few_shot(config.few_shot_pool, config.few_shot_n,
                               config.few_shot_seed);
  s.config = std::move(config);
  return s;
}

TurnResult Engine::run_turn(Session& session, const Utterance& query,
                            const ProgressFn& progress) {
  const auto emit = [&](std::string type, json data = json::object()) {
    if (progress) progress(StageEvent{std::move(type), std::move(data)});
  };
  validate_query(query);
  const auto& cfg = session.config;
  auto& turns = session.dialogue.turns;
  const std::size_t rollback_size = turns.size();

  TurnResult result;
  result.stage_status = {{kStageMeu, {}}, {kStageEmr, {}}, {kStageTts, {}},
                         {kStageTh, {}}};

  // Understanding: both prompts go to every participating backend at once.
  const auto meu_start = Clock::now();
  emit("meu_started");
  std::vector<BackendDescriptor> participants = cfg.chat_backends;
  if (cfg.voting == VotingStrategy::single) participants.resize(1);
  try {
    turns.push_back(Turn{Role::speaker, query, std::nullopt});
    const auto history =
        history_window(session.dialogue, turns.size(), cfg.max_history_turns);
    const auto emotion_req = make_chat_request(
        render_emotion_prompt(history, cfg.emoset, session.examples),
        cfg.emotion_max_tokens, cfg.temperature);
    const auto response_req = make_chat_request(
        render_response_prompt(history, session.examples),
        cfg.response_max_tokens, cfg.temperature);

    std::vector<std::future<BackendOutcome>> pending;
    for (std::size_t k = 0; k < participants.size(); ++k) {
      auto client = chat_client(participants[k]);
      pending.push_back(std::async(std::launch::async, [&, k, client] {
        BackendOutcome out;
        try {
          const auto raw = client->complete(emotion_req);
          auto label = normalize_emotion_output(raw, cfg.emoset);
          auto response = std::string(util::trim(client->complete(response_req)));
          if (response.empty()) {
            throw Error(ErrorCode::ProtocolError, "empty response text");
          }
          out.ballot = VotingBallot{participants[k].name, k, std::move(label),
                                    std::move(response)};
        } catch (const std::exception& e) {
          out.error = e.what();
        }
        return out;
      }));
    }
    std::vector<VotingBallot> ballots;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      auto outcome = pending[k].get();
      if (outcome.ballot) {
        ballots.push_back(std::move(*outcome.ballot));
      } else {
        result.backend_errors[participants[k].name] = outcome.error;
      }
    }
    if (ballots.empty()) {
      std::string msg;
      for (const auto& [name, err] : result.backend_errors) {
        msg += (msg.empty() ? "" : "; ") + name + ": " + err;
      }
      throw Error(ErrorCode::AllBackendsFailed, msg);
    }
    switch (cfg.voting) {
      case VotingStrategy::single:
        result.vote = majority_vote(ballots, cfg.emoset);
        result.vote.strategy = VotingStrategy::single;
        break;
      case VotingStrategy::majority:
        result.vote = majority_vote(ballots, cfg.emoset);
        break;
      case VotingStrategy::weighted:
        result.vote = weighted_vote(ballots, cfg.weights, cfg.emoset);
        break;
    }
  } catch (const Error& e) {
    turns.resize(rollback_size);
    emit("turn_failed", {{"error", std::string(to_string(e.code()))},
                         {"message", e.what()}});
    throw;
  } catch (...) {
    turns.resize(rollback_size);
    emit("turn_failed", {{"error", "internal"}});
    throw;
  }
  result.predicted_emotion = result.vote.winner;
  result.response_text = result.vote.response;
  result.stage_status[kStageMeu] = {StageState::ok, {}};
  result.timings_ms[kStageMeu] = elapsed_ms(meu_start);
  result.turn_index = turns.size();
  emit("emotion_predicted", {{"label", result.predicted_emotion}});

  // Retrieval.
  std::optional<ModalityRef> reference_speech;
  std::optional<ModalityRef> reference_facial;
  if (!cfg.text_only) {
    const auto emr_start = Clock::now();
    try {
      const auto& listener = session.dialogue.listener_profile_id;
      reference_speech = store_->get_reference_media(listener, ReferenceKind::speech);
      reference_facial = store_->get_reference_media(listener, ReferenceKind::facial);
      result.emotion_tokens = EmotionTokens{
          retrieve_emotion_token(EmotionBank::tts, result.predicted_emotion,
                                 cfg.mapping),
          retrieve_emotion_token(EmotionBank::facial, result.predicted_emotion,
                                 cfg.mapping)};
      result.stage_status[kStageEmr] = {StageState::ok, {}};
    } catch (const std::exception& e) {
      result.stage_status[kStageEmr] = {StageState::failed, e.what()};
    }
    result.timings_ms[kStageEmr] = elapsed_ms(emr_start);
  }
  emit("emr_done", {{"status", to_string(result.stage_status[kStageEmr].state)}});

  // Generation: speech first, then the talking head driven by cached speech.
  if (result.stage_status[kStageEmr].state == StageState::ok) {
    const auto tts_start = Clock::now();
    try {
      TtsRequest req{result.response_text, result.emotion_tokens->speaking_style,
                     *reference_speech, cfg.language};
      const auto generated = tts_client(*cfg.tts_backend)->synthesize(req);
      const auto entry =
          store_->cache_put(session.id, result.turn_index, generated);
      result.speech = entry.asset;
      result.stage_status[kStageTts] = {StageState::ok, {}};
    } catch (const std::exception& e) {
      result.stage_status[kStageTts] = {StageState::failed, e.what()};
    }
    result.timings_ms[kStageTts] = elapsed_ms(tts_start);
  }
  emit("tts_done", {{"status", to_string(result.stage_status[kStageTts].state)}});

  if (result.stage_status[kStageTts].state == StageState::ok) {
    const auto th_start = Clock::now();
    try {
      const auto cached = store_->cache_get(session.id, result.turn_index);
      TalkingHeadRequest req{cached.asset, *reference_facial,
                             result.emotion_tokens->facial_emotion};
      result.video = talking_head_client(*cfg.th_backend)->generate(req);
      result.stage_status[kStageTh] = {StageState::ok, {}};
    } catch (const std::exception& e) {
      result.stage_status[kStageTh] = {StageState::failed, e.what()};
    }
    result.timings_ms[kStageTh] = elapsed_ms(th_start);
  }
  emit("th_done", {{"status", to_string(result.stage_status[kStageTh].state)}});

  turns.push_back(Turn{Role::listener,
                       Utterance{result.response_text, result.speech, result.video},
                       std::nullopt});
  emit("turn_completed", {{"turn_index", result.turn_index}});
  return result;
}

std::vector<BatchItem> Engine::run_batch(std::span<const Dialogue> dataset,
                                         const PipelineConfig& config) {
  std::vector<BatchItem> items;
  items.reserve(dataset.size());
  for (const auto& d : dataset) {
    BatchItem item;
    item.dialogue_id = d.id;
    try {
      const auto violations = validate_dialogue(d, true, &config.emoset);
      if (!violations.empty()) {
        throw Error(ErrorCode::InvalidQuery,
                    std::string(to_string(violations.front().kind)));
      }
      item.gold = d.turns.back().gold_emotion;
      if (!item.gold) {
        throw Error(ErrorCode::InvalidQuery, "final speaker turn has no gold emotion");
      }
      auto session =
          start_session(config, d.speaker_profile_id, d.listener_profile_id);
      session.dialogue.turns.assign(d.turns.begin(), d.turns.end() - 1);
      item.result = run_turn(session, d.turns.back().utterance);
    } catch (const std::exception& e) {
      item.error = e.what();
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace merg
