// Prints one PASS/FAIL/SKIP line per acceptance criterion; exits non-zero if
// any line is FAIL.
//
// Criterion 8 runs only when MERG_SMOKE_BACKENDS and MERG_SMOKE_DATASET are
// set (see README).

#include "merg/emotion.hpp"
#include "merg/error.hpp"
#include "merg/eval.hpp"
#include "merg/memory.hpp"
#include "merg/pipeline.hpp"
#include "merg/prompt.hpp"
#include "merg/util.hpp"

#include "oracles.hpp"
#include "rig.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace merg;
using nlohmann::json;

namespace {

struct Outcome {
  enum class State { pass, fail, skip } state = State::pass;
  std::string detail;
};

Outcome pass(std::string detail) { return {Outcome::State::pass, std::move(detail)}; }
Outcome fail(std::string detail) { return {Outcome::State::fail, std::move(detail)}; }
Outcome skip(std::string detail) { return {Outcome::State::skip, std::move(detail)}; }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

// 1 ------------------------------------------------------------------------

Outcome metric_oracles() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937 rng(1234);
  const std::vector<std::string> vocab{"I",    "am",   "so",  "sorry", "that", "you",
                                       "feel", "sad,", "it's", "okay!", "HEY", "hey",
                                       "we",   "can",  "talk", "more",  "...",  "x"};
  std::size_t corpora = 0;
  std::size_t checks = 0;
  while (corpora < 250) {
    const std::size_t n_responses = 1 + rng() % 20;
    std::vector<std::string> responses;
    for (std::size_t i = 0; i < n_responses; ++i) {
      const std::size_t len = rng() % 31;
      std::string r;
      for (std::size_t t = 0; t < len; ++t) r += (t ? " " : "") + vocab[rng() % vocab.size()];
      responses.push_back(r);
    }
    ++corpora;
    for (std::size_t n : {1u, 2u, 3u}) {
      for (bool corpus : {false, true}) {
        const auto level = corpus ? DistLevel::corpus : DistLevel::per_response_mean;
        std::optional<double> got;
        try {
          got = dist_n(responses, n, level);
        } catch (const Error&) {
        }
        double want = oracle::distinct_n(responses, n, corpus);
        const bool want_defined = !std::isnan(want);
        if (got.has_value() != want_defined) {
          return fail("definedness differs on corpus " + std::to_string(corpora));
        }
        if (got && std::fabs(*got - want) > 1e-12) {
          return fail("dist-" + std::to_string(n) + " off by " +
                      std::to_string(std::fabs(*got - want)));
        }
        ++checks;
      }
    }
  }

  const std::vector<std::string> labels = EmotionSet::default_set().labels();
  std::vector<EvalRecord> records;
  std::vector<std::pair<std::string, std::optional<std::string>>> pairs;
  for (int i = 0; i < 1000; ++i) {
    const auto gold = labels[rng() % labels.size()];
    std::optional<std::string> predicted;
    if (rng() % 10) predicted = labels[rng() % labels.size()];
    records.push_back({gold, predicted, "r"});
    pairs.emplace_back(gold, predicted);
  }
  const double hit = hit_rate(records);
  if (hit != oracle::hit_percent(pairs)) return fail("hit_rate differs from oracle");

  const double secs = seconds_since(start);
  if (secs >= 10.0) return fail("took " + fmt(secs) + " s");
  return pass(std::to_string(corpora) + " corpora, " + std::to_string(checks) +
              " dist checks, 1000 HIT records, " + fmt(secs) + " s");
}

// 2 ------------------------------------------------------------------------

Outcome voting() {
  const auto set = EmotionSet::default_set();
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> weight(0.01, 10.0);
  std::uniform_real_distribution<double> scale(0.001, 1000.0);
  std::size_t scale_checks = 0;
  for (int round = 0; round < 10000; ++round) {
    const std::size_t k = 1 + rng() % 5;
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<VotingBallot> ballots;
    std::vector<oracle::Vote> votes;
    std::map<std::string, double> uniform;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& label = set.labels()[rng() % set.size()];
      const auto name = "b" + std::to_string(idx[i]);
      ballots.push_back({name, idx[i], label, "r" + std::to_string(idx[i])});
      votes.push_back({label, idx[i], "r" + std::to_string(idx[i])});
      uniform[name] = 1.0;
    }
    const auto got = majority_vote(ballots, set);
    const auto want = oracle::count_sort_vote(votes, set.labels());
    if (got.winner != want.winner || got.response != want.response ||
        got.winner_backend_index != want.backend_index) {
      return fail("majority differs from count-sort oracle in round " + std::to_string(round));
    }
    const auto w = weighted_vote(ballots, uniform, set);
    if (w.winner != got.winner || w.response != got.response) {
      return fail("uniform weighted differs from majority in round " + std::to_string(round));
    }
    if (round % 10 == 0) {
      std::map<std::string, double> weights;
      for (const auto& b : ballots) weights[b.backend_name] = weight(rng);
      const auto base = weighted_vote(ballots, weights, set).winner;
      const double c = scale(rng);
      for (auto& [name, v] : weights) v *= c;
      if (weighted_vote(ballots, weights, set).winner != base) {
        return fail("scaling weights by " + std::to_string(c) + " changed the winner");
      }
      ++scale_checks;
    }
  }
  return pass("10000 ballot lists, " + std::to_string(scale_checks) + " scale checks");
}

// 3 ------------------------------------------------------------------------

Turn speaker(std::string text, bool audio, bool video) {
  Turn t{Role::speaker, {std::move(text), std::nullopt, std::nullopt}, std::nullopt};
  if (audio) t.utterance.audio = ModalityRef{"q.wav", ModalityKind::audio, std::nullopt};
  if (video) t.utterance.video = ModalityRef{"q.mp4", ModalityKind::video, std::nullopt};
  return t;
}

Outcome prompt_goldens() {
  const auto set = EmotionSet::default_set();
  const auto pool = load_few_shot_pool(rig::fixture_dir() / "fewshot_pool.jsonl", set);
  std::size_t compared = 0;
  for (const std::string fixture : {"1turn", "3turn"}) {
    for (bool media : {false, true}) {
      std::vector<Turn> history;
      if (fixture == "1turn") {
        history = {speaker("I lost my job today.", media, media)};
      } else {
        history = {speaker("My dog has been sick all week.", false, media),
                   Turn{Role::listener,
                        {"Oh no, that sounds really stressful. Is he getting better?",
                         std::nullopt, std::nullopt},
                        std::nullopt},
                   speaker("The vet says he might not make it.", media, media)};
      }
      for (std::size_t shots : {0u, 1u, 3u}) {
        const std::vector<FewShotExample> examples(pool.begin(),
                                                   pool.begin() + static_cast<long>(shots));
        const std::string tag = fixture + (media ? "_media_" : "_text_") +
                                std::to_string(shots) + "shot.txt";
        const auto emo = render_emotion_prompt(history, set, examples).plain_text;
        const auto resp = render_response_prompt(history, examples).plain_text;
        if (emo != util::read_file(rig::golden_dir() / ("emotion_" + tag))) {
          return fail("emotion_" + tag + " differs");
        }
        if (resp != util::read_file(rig::golden_dir() / ("response_" + tag))) {
          return fail("response_" + tag + " differs");
        }
        compared += 2;
      }
    }
  }
  return pass(std::to_string(compared) + " golden files byte-identical");
}

// 4 ------------------------------------------------------------------------

Outcome mapping() {
  const std::set<std::string> styles{"friendly", "cheerful", "excited",  "sad",
                                     "angry",    "terrified", "shouting", "whispering"};
  const std::set<std::string> faces{"angry", "contempt", "disgusted", "fear",
                                    "happy", "sad",      "surprised", "neutral"};
  const std::map<std::string, std::string> style_of{
      {"neutral", "friendly"}, {"happy", "cheerful"}, {"surprised", "excited"},
      {"angry", "angry"},      {"fear", "terrified"}, {"sad", "sad"},
      {"disgusted", "angry"},  {"contempt", "angry"}};
  if (std::set<std::string>(kSpeakingStyleBank.begin(), kSpeakingStyleBank.end()) != styles ||
      std::set<std::string>(kFacialEmotionBank.begin(), kFacialEmotionBank.end()) != faces) {
    return fail("token banks differ from the expected banks");
  }
  const auto table = EmotionMapping::default_table();
  const auto set = EmotionSet::default_set();
  for (const auto& label : set.labels()) {
    EmotionTokens t;
    try {
      t = map_emotion(label, table);
    } catch (const Error& e) {
      return fail(label + ": " + e.what());
    }
    if (!styles.count(t.speaking_style) || !faces.count(t.facial_emotion)) {
      return fail(label + " maps outside the banks");
    }
    if (t.speaking_style != style_of.at(label)) return fail(label + " style " + t.speaking_style);
  }
  for (const auto& face : faces) {
    if (map_emotion(face, table).facial_emotion != face) {
      return fail("facial mapping not identity on " + face);
    }
  }
  return pass("8 labels total over both banks, facial identity holds");
}

// 5 ------------------------------------------------------------------------

Outcome end_to_end() {
  const auto start = std::chrono::steady_clock::now();
  const auto dataset = rig::fixture_dataset();
  PipelineConfig probe;
  std::vector<MockScript> scripts(3);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto digests = rig::batch_digests(dataset[i], probe);
    const auto gold = *dataset[i].turns.back().gold_emotion;
    const auto wrong = gold == "neutral" ? "happy" : "neutral";
    const bool planted_hit = i % 5 != 4;
    for (std::size_t k = 0; k < scripts.size(); ++k) {
      // Backend 2 dissents on every item; the other two carry the vote.
      scripts[k].replies[digests.emotion] = k == 2 ? wrong : (planted_hit ? gold : wrong);
      scripts[k].replies[digests.response] = "backend " + std::to_string(k) + " on " +
                                             dataset[i].id + ": that sounds hard, I'm here.";
    }
  }
  auto r = rig::make_rig(scripts);
  const auto items = r.engine->run_batch(dataset, r.config);
  const auto report = build_report(records_from_batch(items), {});
  if (report.n_failed != 0) return fail(std::to_string(report.n_failed) + " items failed");
  if (report.hit_percent != 80.0) return fail("HIT " + fmt(report.hit_percent, 6));

  std::set<std::string> cached;
  for (const auto& e : r.store->cache_entries()) cached.insert(e.asset.uri);
  const auto records = r.log->records();
  std::size_t item = 0;
  std::optional<std::size_t> pending_tts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.kind == BackendKind::tts) {
      if (pending_tts) return fail("two speech calls without a video call");
      pending_tts = i;
      continue;
    }
    if (rec.kind != BackendKind::talking_head) continue;
    if (!pending_tts) return fail("video requested before speech at log seq " +
                                  std::to_string(rec.seq));
    if (item >= items.size() || !items[item].result) return fail("log/item mismatch");
    const auto& res = *items[item].result;
    const auto& tts = records[*pending_tts];
    const auto tokens = map_emotion(res.predicted_emotion, r.config.mapping);
    if (tts.request.value("speaking_style", "") != tokens.speaking_style ||
        rec.request.value("emotion", "") != tokens.facial_emotion) {
      return fail(items[item].dialogue_id + ": emotion tokens not routed by the mapping");
    }
    const auto speech_uri = rec.request.value("speech_uri", "");
    if (!cached.count(speech_uri) || !res.speech || res.speech->uri != speech_uri) {
      return fail(items[item].dialogue_id + ": video request does not reuse cached speech");
    }
    pending_tts.reset();
    ++item;
  }
  if (item != items.size()) return fail("only " + std::to_string(item) + " media turns logged");
  const double secs = seconds_since(start);
  if (secs >= 30.0) return fail("took " + fmt(secs) + " s");
  return pass("HIT 80.0 over 10 dialogues, ordering/cache/routing hold on " +
              std::to_string(item) + " turns, " + fmt(secs) + " s");
}

// 6 ------------------------------------------------------------------------

Outcome degradation() {
  const Utterance query{"I lost my job today.", std::nullopt, std::nullopt};
  MockScript chat;
  chat.replies[rig::turn_digests({Turn{Role::speaker, query, std::nullopt}}, PipelineConfig{})
                   .emotion] = "sad";
  chat.default_reply = "I'm sorry, that is a lot to take in.";
  MockScript broken;
  broken.fail_all = "http:503";
  auto r = rig::make_rig({chat}, broken);
  auto session = r.engine->start_session(r.config, "1", "2");
  const auto res = r.engine->run_turn(session, query);
  const auto& st = res.stage_status;
  if (res.response_text != chat.default_reply || res.speech || res.video ||
      st.at(kStageMeu).state != StageState::ok || st.at(kStageEmr).state != StageState::ok ||
      st.at(kStageTts).state != StageState::failed ||
      st.at(kStageTh).state != StageState::skipped) {
    return fail("TTS failure did not degrade to a text-only result");
  }

  MockScript down;
  down.fail_all = "timeout";
  auto dead = rig::make_rig({down, down, down});
  auto s = dead.engine->start_session(dead.config, "1", "2");
  s.dialogue.id = s.id;
  s.dialogue.turns.push_back({Role::speaker, {"Earlier.", std::nullopt, std::nullopt}, {}});
  s.dialogue.turns.push_back({Role::listener, {"Go on.", std::nullopt, std::nullopt}, {}});
  const auto before = serialize_dataset_record(s.dialogue).dump();
  try {
    dead.engine->run_turn(s, query);
    return fail("all-backend failure did not raise");
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AllBackendsFailed) return fail(e.what());
  }
  if (serialize_dataset_record(s.dialogue).dump() != before) {
    return fail("dialogue changed after all-backend failure");
  }
  return pass("text-only fallback with tts=failed th=skipped; dialogue byte-identical");
}

// 7 ------------------------------------------------------------------------

json entries_json(const std::vector<SpeechCacheEntry>& entries) {
  json out = json::array();
  for (const auto& e : entries) {
    out.push_back({{"session", e.session_id}, {"turn", e.turn_index}, {"uri", e.asset.uri}});
  }
  return out;
}

int write_cache(const std::filesystem::path& root) {
  const auto src = root.parent_path() / "gen.wav";
  util::write_file(src, util::read_file(rig::fixture_dir() / "media/q0.wav"));
  MemoryStore store(root);
  for (int s = 0; s < 3; ++s) {
    for (std::size_t t = 1; t < 8; t += 2) {
      store.cache_put("session-" + std::to_string(s), t,
                      ModalityRef{src.string(), ModalityKind::audio, std::nullopt});
    }
  }
  store.cache_put("session-0", 3, ModalityRef{src.string(), ModalityKind::audio, std::nullopt});
  store.delete_session("session-2");
  std::cout << entries_json(store.cache_entries()).dump() << "\n";
  return 0;
}

Outcome persistence(const std::string& self) {
  rig::TempDir dir;
  const auto root = dir.path() / "root";
  const auto out = dir.path() / "child.json";
  const auto cmd = "\"" + self + "\" --write-cache \"" + root.string() + "\" > \"" +
                   out.string() + "\"";
  if (std::system(cmd.c_str()) != 0) return fail("writer process failed");
  const auto written = json::parse(util::read_file(out));
  MemoryStore reopened(root);
  const auto read = entries_json(reopened.cache_entries());
  if (read != written || written.size() != 8) {
    return fail("index after restart differs: " + read.dump());
  }
  for (const auto& e : read) {
    if (!std::filesystem::exists(e["uri"].get<std::string>())) return fail("missing cached file");
  }

  const auto doc = json::parse(util::read_file(rig::fixture_dir() / "profiles.json"));
  try {
    parse_profiles(doc);
  } catch (const Error& e) {
    return fail(std::string("fixture rejected: ") + e.what());
  }
  std::size_t mutants = 0;
  for (const char* side : {"speaker_profile", "listener_profile"}) {
    for (const auto& [field, value] : doc[side].items()) {
      auto mutant = doc;
      mutant[side].erase(field);
      ++mutants;
      try {
        parse_profiles(mutant);
        return fail(std::string(side) + " without " + field + " accepted");
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SchemaError) return fail(e.what());
      }
    }
  }
  return pass("8 cache keys identical across restart; " + std::to_string(mutants) +
              " profile mutants rejected");
}

// 8 ------------------------------------------------------------------------

const char* env(const char* name) {
  const char* v = std::getenv(name);
  return v && *v ? v : nullptr;
}

Outcome real_backend_smoke() {
  const char* backends = env("MERG_SMOKE_BACKENDS");
  const char* dataset_path = env("MERG_SMOKE_DATASET");
  if (!backends || !dataset_path) {
    return skip("set MERG_SMOKE_BACKENDS and MERG_SMOKE_DATASET to run");
  }
  const auto registry = load_backend_registry(backends);
  json doc = json::object();
  std::filesystem::path base;
  if (const char* cfg = env("MERG_SMOKE_CONFIG")) {
    doc = json::parse(util::read_file(cfg));
    base = std::filesystem::path(cfg).parent_path();
  }
  auto config = parse_pipeline_config(doc, registry, base);
  config.text_only = true;
  const auto dialogues = load_dataset(dataset_path, config.emoset);
  if (dialogues.size() < 50) {
    return fail("dataset has " + std::to_string(dialogues.size()) + " dialogues, need 50");
  }
  const std::size_t shots = env("MERG_SMOKE_SHOTS") ? std::stoul(env("MERG_SMOKE_SHOTS")) : 3;
  if (config.few_shot_pool.empty()) config.few_shot_pool = few_shot_pool_from_dialogues(dialogues);

  rig::TempDir dir;
  auto store = std::make_shared<MemoryStore>(dir.path());
  Engine engine(store, BackendContext{dir.path(), std::make_shared<ReplayLog>()});
  std::vector<EvalReport> reports;
  for (std::size_t n : {std::size_t{0}, shots}) {
    auto c = config;
    c.few_shot_n = n;
    const auto items = engine.run_batch(dialogues, c);
    reports.push_back(build_report(records_from_batch(items),
                                   {std::to_string(n) + "-shot", DistLevel::per_response_mean}));
  }
  std::cout << render_table(reports);
  const bool trend = reports[1].hit_percent >= reports[0].hit_percent;
  return pass(std::to_string(dialogues.size()) + " dialogues; few-shot trend " +
              (trend ? "held" : "not held (soft)"));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc == 3 && std::string(argv[1]) == "--write-cache") return write_cache(argv[2]);
  const std::string self = std::filesystem::canonical("/proc/self/exe").string();

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracles", metric_oracles},
      {"voting correctness", voting},
      {"prompt goldens", prompt_goldens},
      {"mapping totality and bank conformance", mapping},
      {"end-to-end mock pipeline", end_to_end},
      {"degradation and atomicity", degradation},
      {"persistence", [&] { return persistence(self); }},
      {"real-backend smoke", real_backend_smoke},
  };
  bool ok = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.state == Outcome::State::pass   ? "PASS"
                      : o.state == Outcome::State::skip ? "SKIP"
                                                        : "FAIL";
    ok = ok && o.state != Outcome::State::fail;
    std::cout << "[" << tag << "] " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return ok ? 0 : 1;
}
