#include "merg/dialogue.hpp"
#include "merg/error.hpp"

#include "rig.hpp"

#include <gtest/gtest.h>

using namespace merg;
using nlohmann::json;

namespace {

json record() {
  return json::parse(R"({"id": "x1", "speaker_profile_id": "1", "listener_profile_id": "2",
    "turns": [{"role": "speaker", "text": "I failed my exam.", "audio_path": "a.wav"},
              {"role": "listener", "text": "I'm sorry to hear that."},
              {"role": "speaker", "text": "I studied for weeks.", "emotion": "Sad",
               "video_path": "v.mp4"}]})");
}

ErrorCode parse_code(const json& j) {
  try {
    parse_dataset_record(j, EmotionSet::default_set());
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "record accepted: " << j.dump();
  return ErrorCode::IoError;
}

}  // namespace

TEST(Dataset, ParsesRecord) {
  const auto d = parse_dataset_record(record(), EmotionSet::default_set());
  EXPECT_EQ(d.id, "x1");
  ASSERT_EQ(d.turns.size(), 3u);
  EXPECT_EQ(d.turns[0].utterance.audio->uri, "a.wav");
  EXPECT_EQ(d.turns[0].utterance.audio->kind, ModalityKind::audio);
  EXPECT_FALSE(d.turns[0].utterance.video);
  EXPECT_EQ(d.turns[1].role, Role::listener);
  EXPECT_EQ(d.turns[2].gold_emotion, "sad");
  EXPECT_EQ(d.turns[2].utterance.video->kind, ModalityKind::video);
}

TEST(Dataset, RoundTrip) {
  const auto d = parse_dataset_record(record(), EmotionSet::default_set());
  const auto back =
      parse_dataset_record(serialize_dataset_record(d), EmotionSet::default_set());
  EXPECT_EQ(back, d);
  const auto ds = rig::fixture_dataset();
  std::vector<Dialogue> copy(ds.begin(), ds.end());
  EXPECT_EQ(parse_dataset(serialize_dataset(copy), EmotionSet::default_set()), copy);
}

TEST(Dataset, EmptyMediaMeansAbsent) {
  auto j = record();
  j["turns"][0]["audio_path"] = "";
  const auto d = parse_dataset_record(j, EmotionSet::default_set());
  EXPECT_FALSE(d.turns[0].utterance.audio);
}

TEST(Dataset, RejectsEachMissingRequiredField) {
  for (const char* key : {"id", "speaker_profile_id", "listener_profile_id", "turns"}) {
    auto j = record();
    j.erase(key);
    EXPECT_EQ(parse_code(j), ErrorCode::SchemaError) << key;
  }
  for (const char* key : {"role", "text"}) {
    auto j = record();
    j["turns"][1].erase(key);
    EXPECT_EQ(parse_code(j), ErrorCode::SchemaError) << key;
  }
}

TEST(Dataset, RejectsBadValues) {
  auto j = record();
  j["turns"][2]["emotion"] = "joy";
  EXPECT_EQ(parse_code(j), ErrorCode::UnknownEmotion);
  j = record();
  j["turns"][0]["role"] = "narrator";
  EXPECT_EQ(parse_code(j), ErrorCode::SchemaError);
  j = record();
  j["turns"] = json::array();
  EXPECT_EQ(parse_code(j), ErrorCode::SchemaError);
  j = record();
  j["turns"][1]["text"] = "";
  EXPECT_EQ(parse_code(j), ErrorCode::SchemaError);
  j = record();
  j["turns"][2]["text"] = "";
  EXPECT_NO_THROW(parse_dataset_record(j, EmotionSet::default_set()));
  j = record();
  j["turns"][0]["audio_path"] = "clip.mp4";
  EXPECT_EQ(parse_code(j), ErrorCode::SchemaError);
}

TEST(Dataset, DuplicateIdsAndMalformedLines) {
  const auto line = record().dump();
  EXPECT_THROW(parse_dataset(line + "\n" + line + "\n", EmotionSet::default_set()), Error);
  EXPECT_THROW(parse_dataset("{oops\n", EmotionSet::default_set()), Error);
  EXPECT_EQ(parse_dataset("\n" + line + "\n\n", EmotionSet::default_set()).size(), 1u);
}

TEST(Validate, Violations) {
  auto d = parse_dataset_record(record(), EmotionSet::default_set());
  EXPECT_TRUE(validate_dialogue(d, true).empty());
  d.turns.push_back({Role::listener, {"ok", std::nullopt, std::nullopt}, std::nullopt});
  EXPECT_EQ(validate_dialogue(d, true),
            (std::vector<ViolationReport>{{Violation::LastTurnNotSpeaker, 3}}));
  EXPECT_TRUE(validate_dialogue(d, false).empty());
  d.turns[1].utterance.text = "";
  d.turns[0].utterance.audio->kind = ModalityKind::video;
  const auto v = validate_dialogue(d, false);
  EXPECT_NE(std::find(v.begin(), v.end(), ViolationReport{Violation::EmptyUtterance, 1}), v.end());
  EXPECT_NE(std::find(v.begin(), v.end(), ViolationReport{Violation::MediaKindMismatch, 0}),
            v.end());
  Dialogue empty;
  EXPECT_EQ(validate_dialogue(empty, false).size(), 2u);
}

TEST(Validate, GoldCheckedOnlyWithSet) {
  auto d = parse_dataset_record(record(), EmotionSet::default_set());
  d.turns[2].gold_emotion = "joy";
  EXPECT_TRUE(validate_dialogue(d, true).empty());
  const auto set = EmotionSet::default_set();
  EXPECT_EQ(validate_dialogue(d, true, &set),
            (std::vector<ViolationReport>{{Violation::UnknownGoldEmotion, 2}}));
}

TEST(History, Window) {
  const auto d = parse_dataset_record(record(), EmotionSet::default_set());
  EXPECT_EQ(history_window(d, 3, 16).size(), 3u);
  const auto w = history_window(d, 3, 2);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].utterance.text, "I'm sorry to hear that.");
  EXPECT_TRUE(history_window(d, 0, 5).empty());
  try {
    history_window(d, 4, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexOutOfRange);
  }
}

TEST(Modality, KindFromExtension) {
  EXPECT_EQ(kind_from_extension("a/b/C.WAV"), ModalityKind::audio);
  EXPECT_EQ(kind_from_extension("https://x/y.mp4?sig=1"), ModalityKind::video);
  EXPECT_EQ(kind_from_extension("face.png"), ModalityKind::image);
  EXPECT_FALSE(kind_from_extension("noext"));
}
