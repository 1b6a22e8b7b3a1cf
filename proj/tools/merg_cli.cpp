#include "merg/error.hpp"
#include "merg/eval.hpp"
#include "merg/pipeline.hpp"
#include "merg/service.hpp"
#include "merg/util.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <iostream>

using nlohmann::json;

namespace {

struct Common {
  std::string backends;
  std::string config;
  std::string profiles;
  std::string asset_root = "merg-assets";
  std::string replay_log;
  std::string pool;
  std::optional<std::size_t> shots;
  std::optional<std::string> voting;
  std::optional<std::uint64_t> seed;
  bool text_only = false;
};

void add_common(CLI::App* app, Common& c, bool need_backends = true) {
  auto* b = app->add_option("--backends", c.backends, "Backend registry JSON");
  if (need_backends) b->required()->check(CLI::ExistingFile);
  app->add_option("--config", c.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  app->add_option("--profiles", c.profiles, "Identity profiles JSON")
      ->check(CLI::ExistingFile);
  app->add_option("--asset-root", c.asset_root, "Speech cache and upload directory");
  app->add_option("--replay-log", c.replay_log, "Append backend requests as JSONL");
  app->add_option("--pool", c.pool, "Few-shot pool (examples or dataset JSONL)")
      ->check(CLI::ExistingFile);
  app->add_option("--shots", c.shots, "Few-shot examples per prompt");
  app->add_option("--voting", c.voting, "single, majority or weighted")
      ->check(CLI::IsMember({"single", "majority", "weighted"}));
  app->add_option("--seed", c.seed, "Few-shot sampling seed");
  app->add_flag("--text-only", c.text_only, "Skip speech and video generation");
}

struct Setup {
  std::vector<merg::BackendDescriptor> registry;
  merg::PipelineConfig config;
  std::shared_ptr<merg::Engine> engine;
};

Setup build(const Common& c) {
  Setup s;
  if (!c.backends.empty()) s.registry = merg::load_backend_registry(c.backends);
  json doc = json::object();
  std::filesystem::path base;
  if (!c.config.empty()) {
    doc = json::parse(merg::util::read_file(c.config));
    base = std::filesystem::path(c.config).parent_path();
  }
  s.config = merg::parse_pipeline_config(doc, s.registry, base);
  if (!c.pool.empty()) {
    json pool_doc{{"few_shot_pool", std::filesystem::absolute(c.pool).string()}};
    s.config.few_shot_pool =
        merg::parse_pipeline_config(pool_doc, s.registry).few_shot_pool;
  }
  json overrides = json::object();
  if (c.shots) overrides["few_shot_n"] = *c.shots;
  if (c.voting) overrides["voting"] = *c.voting;
  if (c.seed) overrides["few_shot_seed"] = *c.seed;
  if (c.text_only) overrides["text_only"] = true;
  merg::apply_config_overrides(s.config, overrides, s.registry);

  merg::ProfileMap profiles;
  if (!c.profiles.empty()) profiles = merg::load_profiles(c.profiles);
  auto store = std::make_shared<merg::MemoryStore>(c.asset_root, std::move(profiles));
  merg::BackendContext ctx{c.asset_root, nullptr};
  ctx.log = c.replay_log.empty() ? std::make_shared<merg::ReplayLog>()
                                 : std::make_shared<merg::ReplayLog>(c.replay_log);
  s.engine = std::make_shared<merg::Engine>(store, ctx);
  return s;
}

void check_config(const merg::PipelineConfig& config) {
  const auto violations = merg::validate_config(config);
  if (violations.empty()) return;
  std::string msg;
  for (const auto& v : violations) msg += "\n  " + v;
  throw merg::Error(merg::ErrorCode::InvalidConfig, "config rejected:" + msg);
}

json items_to_json(const std::vector<merg::BatchItem>& items) {
  json out = json::array();
  for (const auto& item : items) {
    json j{{"dialogue_id", item.dialogue_id},
           {"gold", item.gold ? json(*item.gold) : json(nullptr)}};
    if (item.result) j["result"] = merg::turn_result_to_json(*item.result);
    if (!item.error.empty()) j["error"] = item.error;
    out.push_back(std::move(j));
  }
  return out;
}

int report(const std::vector<merg::BatchItem>& items, const std::string& label,
           merg::DistLevel level, const std::string& out) {
  const auto records = merg::records_from_batch(items);
  const auto rep = merg::build_report(records, {label, level});
  std::cout << merg::render_table(std::span(&rep, 1));
  std::size_t failed = 0;
  for (const auto& item : items) {
    if (!item.error.empty()) {
      ++failed;
      std::cerr << item.dialogue_id << ": " << item.error << "\n";
    }
  }
  if (failed) std::cerr << failed << " of " << items.size() << " items failed\n";
  if (!out.empty()) {
    json doc = merg::report_to_json(rep);
    doc["items"] = items_to_json(items);
    merg::util::write_file(out, doc.dump(2) + "\n");
  }
  return 0;
}

merg::Service* g_service = nullptr;

extern "C" void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal empathetic response engine"};
  app.require_subcommand(1);

  Common serve_opts;
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  add_common(serve, serve_opts);
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  Common eval_opts;
  std::string dataset, out, label = "mock-backend", level_name = "per_response_mean";
  auto* eval = app.add_subcommand("eval", "Run a dataset batch and report HIT and Dist-n");
  add_common(eval, eval_opts);
  eval->add_option("--dataset", dataset, "Dialogue JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "Write the report and per-item results as JSON");
  eval->add_option("--label", label, "Model column in the report table");
  eval->add_option("--level", level_name, "Dist-n level: per_response_mean or corpus");

  Common turn_opts;
  std::string text, audio, video, speaker, listener;
  auto* turn = app.add_subcommand("turn", "Run one turn on a fresh session");
  add_common(turn, turn_opts);
  turn->add_option("--text", text, "Speaker utterance")->required();
  turn->add_option("--audio", audio, "Speaker audio file");
  turn->add_option("--video", video, "Speaker video file");
  turn->add_option("--speaker", speaker, "Speaker profile ID");
  turn->add_option("--listener", listener, "Listener profile ID");
  turn->add_option("--out", out, "Write the result JSON here");

  std::string profiles_file;
  auto* profiles = app.add_subcommand("profiles", "Identity profile tools");
  profiles->require_subcommand(1);
  auto* validate = profiles->add_subcommand("validate", "Check a profiles file");
  validate->add_option("file", profiles_file)->required();

  auto* mock = app.add_subcommand("mock", "Record or replay scripted chat replies");
  mock->require_subcommand(1);
  Common record_opts;
  std::string backend_name, script_out;
  auto* record = mock->add_subcommand("record", "Capture a chat backend's replies as a mock script");
  add_common(record, record_opts);
  record->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
  record->add_option("--backend", backend_name, "Chat backend to record")->required();
  record->add_option("--out", script_out, "Mock script to write")->required();

  Common replay_opts;
  std::string script_in;
  auto* replay = mock->add_subcommand("replay", "Run a dataset against a recorded script");
  add_common(replay, replay_opts, false);
  replay->add_option("--script", script_in)->required()->check(CLI::ExistingFile);
  replay->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
  replay->add_option("--out", out);
  replay->add_option("--label", label);
  replay->add_option("--level", level_name);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto level = merg::parse_dist_level(level_name);
    if (!level) throw merg::Error(merg::ErrorCode::InvalidConfig, "unknown level " + level_name);

    if (*serve) {
      auto s = build(serve_opts);
      check_config(s.config);
      merg::Service service(s.engine, s.config, s.registry);
      const int bound = service.bind(host, port);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on " << host << ":" << bound << std::endl;
      service.run();
      g_service = nullptr;
      return 0;
    }
    if (*eval) {
      auto s = build(eval_opts);
      check_config(s.config);
      const auto dialogues = merg::load_dataset(dataset, s.config.emoset);
      const auto items = s.engine->run_batch(dialogues, s.config);
      return report(items, label, *level, out);
    }
    if (*turn) {
      auto s = build(turn_opts);
      auto session = s.engine->start_session(s.config, speaker, listener);
      merg::Utterance query{text, std::nullopt, std::nullopt};
      if (!audio.empty()) query.audio = merg::make_ref(audio, merg::ModalityKind::audio);
      if (!video.empty()) query.video = merg::make_ref(video, merg::ModalityKind::video);
      const auto result = s.engine->run_turn(session, query);
      const auto doc = merg::turn_result_to_json(result).dump(2) + "\n";
      if (!out.empty()) merg::util::write_file(out, doc);
      std::cout << doc;
      return 0;
    }
    if (*validate) {
      const auto loaded = merg::load_profiles(profiles_file);
      std::cout << loaded.size() << " profile(s) ok:";
      for (const auto& [id, p] : loaded) std::cout << " " << id;
      std::cout << "\n";
      return 0;
    }
    if (*record) {
      auto s = build(record_opts);
      const auto it = std::find_if(s.registry.begin(), s.registry.end(), [&](const auto& d) {
        return d.name == backend_name && d.kind == merg::BackendKind::chat;
      });
      if (it == s.registry.end()) {
        throw merg::Error(merg::ErrorCode::InvalidConfig, "no chat backend " + backend_name);
      }
      auto recorder = std::make_shared<merg::RecordingChatClient>(
          merg::make_chat_client(*it, s.engine->context()));
      s.engine->set_chat_client(recorder);
      s.config.chat_backends = {*it};
      s.config.voting = merg::VotingStrategy::single;
      check_config(s.config);
      const auto dialogues = merg::load_dataset(dataset, s.config.emoset);
      const auto items = s.engine->run_batch(dialogues, s.config);
      const auto script = recorder->script();
      merg::util::write_file(script_out, script.to_json().dump(2) + "\n");
      std::cout << "recorded " << script.replies.size() << " replies to " << script_out
                << "\n";
      return 0;
    }
    if (*replay) {
      auto s = build(replay_opts);
      merg::BackendDescriptor d;
      d.name = "replay";
      d.kind = merg::BackendKind::chat;
      d.endpoint = "mock:" + std::filesystem::absolute(script_in).string();
      s.config.chat_backends = {d};
      s.config.voting = merg::VotingStrategy::single;
      check_config(s.config);
      const auto dialogues = merg::load_dataset(dataset, s.config.emoset);
      const auto items = s.engine->run_batch(dialogues, s.config);
      return report(items, label, *level, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
