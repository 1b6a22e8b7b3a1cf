#include "merg/backends.hpp"
#include "merg/error.hpp"
#include "merg/prompt.hpp"
#include "merg/util.hpp"

#include "rig.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace merg;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no merg::Error thrown";
  return ErrorCode::IoError;
}

ChatRequest text_request(const std::string& text) {
  ChatRequest req;
  req.messages.push_back({"user", {{SegmentKind::text, text, std::nullopt}}});
  return req;
}

BackendDescriptor descriptor(std::string name, BackendKind kind) {
  BackendDescriptor d;
  d.name = std::move(name);
  d.kind = kind;
  d.endpoint = "mock:";
  return d;
}

}  // namespace

TEST(Wire, TextOnlyMessageUsesStringContent) {
  const auto msgs = chat_wire_messages(text_request("hello"));
  EXPECT_EQ(msgs, json::parse(R"([{"role":"user","content":"hello"}])"));
}

TEST(Wire, MediaMessageUsesContentParts) {
  Turn t{Role::speaker,
         {"hi", ModalityRef{"q.wav", ModalityKind::audio, std::nullopt},
          ModalityRef{"q.mp4", ModalityKind::video, std::nullopt}},
         std::nullopt};
  const std::vector<Turn> history{t};
  const auto prompt = render_emotion_prompt(history, EmotionSet::default_set(), {});
  const auto req = make_chat_request(prompt, 16, 0.0);
  const auto body = chat_wire_body(req, "m1");
  EXPECT_EQ(body["model"], "m1");
  EXPECT_EQ(body["max_tokens"], 16);
  EXPECT_EQ(body["stream"], false);
  const auto& parts = body["messages"][0]["content"];
  ASSERT_TRUE(parts.is_array());
  std::vector<std::string> types;
  std::string text;
  for (const auto& p : parts) {
    types.push_back(p["type"]);
    if (p["type"] == "text") text += p["text"].get<std::string>();
  }
  EXPECT_EQ(types, (std::vector<std::string>{"text", "audio_url", "text", "video_url", "text"}));
  EXPECT_EQ(parts[1]["audio_url"]["url"], "q.wav");
  EXPECT_EQ(parts[3]["video_url"]["url"], "q.mp4");
  EXPECT_NE(text.find("Speaker: \"hi\" "), std::string::npos);
}

TEST(Wire, DigestIgnoresSamplingParameters) {
  auto a = text_request("x");
  auto b = a;
  b.max_tokens = 3;
  b.temperature = 0.9;
  EXPECT_EQ(chat_request_digest(a), chat_request_digest(b));
  EXPECT_NE(chat_request_digest(a), chat_request_digest(text_request("y")));
  EXPECT_EQ(chat_request_digest(a),
            util::sha256_hex(R"({"messages":[{"content":"x","role":"user"}]})"));
}

TEST(Registry, ParsesAndResolvesMockPaths) {
  const auto doc = json::parse(R"({"backends": [
      {"name": "a", "kind": "chat", "endpoint": "mock:scripts/a.json", "weight": 2},
      {"name": "b", "kind": "chat", "endpoint": "http://127.0.0.1:9/v1/chat/completions",
       "model": "qwen", "timeout_ms": 500, "api_key_env": "KEY"},
      {"name": "t", "kind": "tts", "endpoint": "mock:"}]})");
  const auto r = parse_backend_registry(doc, "/base");
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].endpoint, "mock:/base/scripts/a.json");
  EXPECT_EQ(r[0].weight, 2.0);
  EXPECT_FALSE(r[1].weight);
  EXPECT_EQ(r[1].model, "qwen");
  EXPECT_EQ(r[1].timeout_ms, 500);
  EXPECT_EQ(r[2].kind, BackendKind::tts);
  EXPECT_EQ(r[2].endpoint, "mock:");
}

TEST(Registry, Rejects) {
  for (const char* bad : {
           R"([{"name": "a", "kind": "chat"}])",
           R"([{"name": "a", "kind": "robot", "endpoint": "mock:"}])",
           R"([{"name": "a", "kind": "chat", "endpoint": "mock:x", "weight": -1}])",
           R"([{"name": "a", "kind": "chat", "endpoint": "mock:x", "timeout_ms": 0}])",
           R"([{"name": "a", "kind": "chat", "endpoint": "mock:x"},
               {"name": "a", "kind": "chat", "endpoint": "mock:y"}])",
           R"({"backends": 3})"}) {
    EXPECT_EQ(code_of([&] { parse_backend_registry(json::parse(bad)); }),
              ErrorCode::InvalidConfig)
        << bad;
  }
}

TEST(MockChat, ScriptedRepliesAndDefault) {
  MockScript s;
  s.replies[chat_request_digest(text_request("a"))] = "sad";
  auto log = std::make_shared<ReplayLog>();
  MockChatClient c(descriptor("m", BackendKind::chat), s, log);
  EXPECT_EQ(c.complete(text_request("a")), "sad");
  EXPECT_EQ(code_of([&] { c.complete(text_request("b")); }), ErrorCode::NoDefaultAndMiss);
  s.default_reply = "neutral";
  MockChatClient d(descriptor("m", BackendKind::chat), s, log);
  EXPECT_EQ(d.complete(text_request("b")), "neutral");
  const auto rec = log->records();
  ASSERT_EQ(rec.size(), 3u);
  EXPECT_EQ(rec[0].reply, "sad");
  EXPECT_EQ(rec[1].error, "NoDefaultAndMiss");
  EXPECT_EQ(rec[2].seq, 3u);
  EXPECT_EQ(code_of([&] { d.complete(ChatRequest{}); }), ErrorCode::InvalidRequest);
}

TEST(MockChat, TimeoutRetriedExactlyOnceOthersNot) {
  auto log = std::make_shared<ReplayLog>();
  MockScript s;
  s.fail_all = "timeout";
  MockChatClient c(descriptor("m", BackendKind::chat), s, log);
  EXPECT_EQ(code_of([&] { c.complete(text_request("a")); }), ErrorCode::Timeout);
  EXPECT_EQ(log->size(), 2u);
  s.fail_all = "protocol";
  MockChatClient p(descriptor("p", BackendKind::chat), s, log);
  EXPECT_EQ(code_of([&] { p.complete(text_request("a")); }), ErrorCode::ProtocolError);
  EXPECT_EQ(log->size(), 3u);
  s.fail_all = "http:503";
  MockChatClient h(descriptor("h", BackendKind::chat), s, log);
  try {
    h.complete(text_request("a"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::HttpError);
    EXPECT_EQ(e.http_status(), 503);
  }
}

TEST(MockTts, WritesSilentWavAndValidates) {
  rig::TempDir dir;
  auto log = std::make_shared<ReplayLog>();
  MockTtsClient t(descriptor("t", BackendKind::tts), {}, dir.path(), log);
  TtsRequest req{"I'm here for you.", "sad", {"ref.wav", ModalityKind::audio, std::nullopt},
                 std::nullopt};
  const auto out = t.synthesize(req);
  EXPECT_EQ(out.kind, ModalityKind::audio);
  EXPECT_EQ(util::read_file(out.uri).size(), 44u);
  EXPECT_EQ(util::read_file(out.uri).substr(0, 4), "RIFF");
  EXPECT_EQ(std::filesystem::path(out.uri).filename().string(),
            tts_request_digest(req).substr(0, 16) + ".wav");
  EXPECT_EQ(t.synthesize(req).uri, out.uri);

  req.speaking_style = "melancholic";
  EXPECT_EQ(code_of([&] { t.synthesize(req); }), ErrorCode::UnsupportedStyle);
  req.speaking_style = "sad";
  req.text.clear();
  EXPECT_EQ(code_of([&] { t.synthesize(req); }), ErrorCode::InvalidRequest);
  EXPECT_EQ(log->records().front().request["speaking_style"], "sad");
}

TEST(MockTalkingHead, NeedsResolvableSpeech) {
  rig::TempDir dir;
  auto log = std::make_shared<ReplayLog>();
  MockTalkingHeadClient h(descriptor("h", BackendKind::talking_head), {}, dir.path(), log);
  const auto speech = dir.path() / "s.wav";
  util::write_file(speech, "RIFF");
  TalkingHeadRequest req{{speech.string(), ModalityKind::audio, std::nullopt},
                         {"face.png", ModalityKind::image, std::nullopt},
                         "sad"};
  const auto out = h.generate(req);
  EXPECT_EQ(out.kind, ModalityKind::video);
  EXPECT_TRUE(std::filesystem::exists(out.uri));
  EXPECT_EQ(log->records().back().request["speech_uri"], speech.string());

  req.facial_emotion = "melancholic";
  EXPECT_EQ(code_of([&] { h.generate(req); }), ErrorCode::InvalidRequest);
  req.facial_emotion = "sad";
  req.speech.uri = (dir.path() / "gone.wav").string();
  EXPECT_EQ(code_of([&] { h.generate(req); }), ErrorCode::MissingAsset);
  req.speech.kind = ModalityKind::video;
  EXPECT_EQ(code_of([&] { h.generate(req); }), ErrorCode::InvalidRequest);
}

TEST(MockScriptFile, RoundTripAndModes) {
  MockScript s;
  s.replies = {{"d1", "sad"}};
  s.failures = {{"d2", "missing_asset"}};
  s.default_reply = "ok";
  s.delay_ms = 5;
  const auto back = MockScript::from_json(s.to_json());
  EXPECT_EQ(back.replies, s.replies);
  EXPECT_EQ(back.failures, s.failures);
  EXPECT_EQ(back.default_reply, s.default_reply);
  EXPECT_EQ(back.delay_ms, 5);
  EXPECT_EQ(code_of([] { throw_scripted_failure("unsupported_style", "x"); }),
            ErrorCode::UnsupportedStyle);
  EXPECT_EQ(code_of([] { throw_scripted_failure("bogus", "x"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { MockScript::from_json(json::array()); }), ErrorCode::InvalidConfig);
}

TEST(ReplayLogFile, JsonlRoundTrip) {
  rig::TempDir dir;
  const auto path = dir.path() / "log" / "replay.jsonl";
  ReplayLog log(path);
  log.append({0, 0, "a", BackendKind::tts, "dg", "out.wav", "", json{{"text", "x"}}});
  log.append({0, 0, "b", BackendKind::chat, "dh", "", "Timeout", json::object()});
  const auto parsed = ReplayLog::parse(util::read_file(path));
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[0].seq, 1u);
  EXPECT_EQ(parsed[0].kind, BackendKind::tts);
  EXPECT_EQ(parsed[0].request["text"], "x");
  EXPECT_EQ(parsed[1].error, "Timeout");
  EXPECT_GT(parsed[1].timestamp_ms, 0);
}

TEST(Factories, MockChatNeedsScriptAndRecorderCaptures) {
  rig::TempDir dir;
  BackendContext ctx{dir.path(), std::make_shared<ReplayLog>()};
  EXPECT_EQ(code_of([&] { make_chat_client(descriptor("c", BackendKind::chat), ctx); }),
            ErrorCode::InvalidConfig);
  MockScript s;
  s.default_reply = "fine";
  util::write_file(dir.path() / "s.json", s.to_json().dump());
  auto d = descriptor("c", BackendKind::chat);
  d.endpoint = "mock:" + (dir.path() / "s.json").string();
  RecordingChatClient rec(make_chat_client(d, ctx));
  EXPECT_EQ(rec.complete(text_request("q")), "fine");
  EXPECT_EQ(rec.script().replies.at(chat_request_digest(text_request("q"))), "fine");
  EXPECT_EQ(ctx.log->size(), 1u);
  EXPECT_TRUE(make_tts_client(descriptor("t", BackendKind::tts), ctx));
  EXPECT_TRUE(make_talking_head_client(descriptor("h", BackendKind::talking_head), ctx));
}
