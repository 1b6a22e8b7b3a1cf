#include "merg/prompt.hpp"

#include "merg/error.hpp"
#include "merg/util.hpp"

#include <nlohmann/json.hpp>

#include <numeric>
#include <random>

namespace merg {

namespace {

constexpr std::string_view kEmotionInstruction =
    "Please act as an expert in the field of emotions. Please choose one most "
    "likely emotion from the given candidates for the speaker in the given "
    "dialogue:\n";
constexpr std::string_view kEmotionRule =
    "Respond with only one word for the chosen emotion. Do not include any "
    "other text.\n";
constexpr std::string_view kEmotionTail = "The emotion class of the Speaker:";

constexpr std::string_view kResponseInstruction =
    "Please act as an empathetic responser. Please output the listener's next "
    "response to the speaker in the given dialogue. Note that the response "
    "should show the concern of listener and attempting to address the "
    "speaker’s emotional state.\n"
    "Output the response directly. Do not include any other words.\n";
constexpr std::string_view kResponseTail = "The response of the Listener:";

constexpr std::string_view kDialogueHeader = "The dialogue is:\n";

class PromptBuilder {
 public:
  void text(std::string_view t) {
    if (t.empty()) return;
    if (segments_.empty() || segments_.back().kind != SegmentKind::text) {
      segments_.push_back({SegmentKind::text, {}, std::nullopt});
    }
    segments_.back().text += t;
    plain_ += t;
  }

  void slot(SegmentKind kind, const ModalityRef& ref) {
    segments_.push_back({kind, {}, ref});
    plain_ += kind == SegmentKind::audio_slot ? kAudioToken : kVideoToken;
  }

  void dialogue(std::span<const Turn> turns) {
    for (const auto& turn : turns) {
      text(turn.role == Role::speaker ? "Speaker: \"" : "Listener: \"");
      text(turn.utterance.text);
      text("\"");
      if (turn.utterance.audio) {
        text(" ");
        slot(SegmentKind::audio_slot, *turn.utterance.audio);
      }
      if (turn.utterance.video) {
        text(" ");
        slot(SegmentKind::video_slot, *turn.utterance.video);
      }
      text("\n");
    }
  }

  RenderedPrompt finish() && {
    return RenderedPrompt{std::move(segments_), std::move(plain_)};
  }

 private:
  std::vector<PromptSegment> segments_;
  std::string plain_;
};

std::string_view without_trailing_newlines(std::string_view s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

void check_history(std::span<const Turn> history) {
  if (history.empty()) {
    throw Error(ErrorCode::EmptyHistory, "prompt needs at least one turn");
  }
  if (history.back().role != Role::speaker) {
    throw Error(ErrorCode::LastTurnNotSpeaker,
                "prompt history must end with a speaker turn");
  }
}

}  // namespace

RenderedPrompt render_emotion_prompt(std::span<const Turn> history,
                                     const EmotionSet& emoset,
                                     std::span<const FewShotExample> examples) {
  check_history(history);
  PromptBuilder b;
  b.text(kEmotionInstruction);
  b.text("EmoSet = " + emoset.braced() + "\n");
  b.text(kEmotionRule);
  for (std::size_t k = 0; k < examples.size(); ++k) {
    const auto& ex = examples[k];
    if (!emoset.contains(ex.gold_emotion)) {
      throw Error(ErrorCode::UnknownEmotion, "example label '" +
                                                 ex.gold_emotion + "' not in " +
                                                 emoset.braced());
    }
    b.text("Example " + std::to_string(k + 1) + ":\nDialogue:\n");
    b.text(without_trailing_newlines(ex.dialogue_text));
    b.text("\nEmotion: " + ex.gold_emotion + "\n");
  }
  b.text(kDialogueHeader);
  b.dialogue(history);
  b.text(kEmotionTail);
  return std::move(b).finish();
}

RenderedPrompt render_response_prompt(
    std::span<const Turn> history, std::span<const FewShotExample> examples) {
  check_history(history);
  PromptBuilder b;
  b.text(kResponseInstruction);
  for (std::size_t k = 0; k < examples.size(); ++k) {
    const auto& ex = examples[k];
    b.text("Example " + std::to_string(k + 1) + ":\nDialogue:\n");
    b.text(without_trailing_newlines(ex.dialogue_text));
    b.text("\nResponse: " + ex.gold_response + "\n");
  }
  b.text(kDialogueHeader);
  b.dialogue(history);
  b.text(kResponseTail);
  return std::move(b).finish();
}

std::vector<FewShotExample> sample_few_shot(
    std::span<const FewShotExample> pool, std::size_t n, std::uint64_t seed) {
  if (n > pool.size()) {
    throw Error(ErrorCode::PoolTooSmall,
                "asked for " + std::to_string(n) + " examples from a pool of " +
                    std::to_string(pool.size()));
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::vector<FewShotExample> picked;
  picked.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Modulo reduction keeps the draw independent of the standard library's
    // distribution implementation.
    const std::size_t remaining = order.size() - i;
    const std::size_t j = i + static_cast<std::size_t>(rng() % remaining);
    std::swap(order[i], order[j]);
    picked.push_back(pool[order[i]]);
  }
  return picked;
}

std::string render_dialogue_lines(std::span<const Turn> turns) {
  PromptBuilder b;
  b.dialogue(turns);
  return std::move(b).finish().plain_text;
}

std::vector<FewShotExample> few_shot_pool_from_dialogues(
    std::span<const Dialogue> dialogues) {
  std::vector<FewShotExample> pool;
  for (const auto& d : dialogues) {
    std::optional<std::size_t> anchor;
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
      if (d.turns[i].role == Role::speaker && d.turns[i].gold_emotion) {
        anchor = i;
      }
    }
    if (!anchor) continue;
    FewShotExample ex;
    ex.dialogue_text = render_dialogue_lines(
        std::span<const Turn>(d.turns).first(*anchor + 1));
    ex.gold_emotion = *d.turns[*anchor].gold_emotion;
    if (*anchor + 1 < d.turns.size() &&
        d.turns[*anchor + 1].role == Role::listener) {
      ex.gold_response = d.turns[*anchor + 1].utterance.text;
    }
    pool.push_back(std::move(ex));
  }
  return pool;
}

std::vector<FewShotExample> load_few_shot_pool(
    const std::filesystem::path& path, const EmotionSet& emoset) {
  std::vector<FewShotExample> pool;
  int line_no = 0;
  for (const auto& line : util::split(util::read_file(path), '\n')) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    const std::string where =
        path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorCode::SchemaError, where + ": malformed JSON");
    }
    if (!j.is_object() || !j.contains("dialogue_text") ||
        !j.contains("emotion") || !j["dialogue_text"].is_string() ||
        !j["emotion"].is_string()) {
      throw Error(ErrorCode::SchemaError,
                  where + ": needs string fields dialogue_text and emotion");
    }
    FewShotExample ex;
    ex.dialogue_text = j["dialogue_text"].get<std::string>();
    ex.gold_emotion = util::to_lower(j["emotion"].get<std::string>());
    if (!emoset.contains(ex.gold_emotion)) {
      throw Error(ErrorCode::UnknownEmotion,
                  where + ": '" + ex.gold_emotion + "' not in " +
                      emoset.braced());
    }
    ex.gold_response = j.value("response", std::string{});
    pool.push_back(std::move(ex));
  }
  return pool;
}

}  // namespace merg
