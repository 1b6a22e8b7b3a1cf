#pragma once

#include "merg/dialogue.hpp"
#include "merg/emotion.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace merg {

enum class SegmentKind { text, audio_slot, video_slot };

/// A run of prompt text, or a placeholder that a multimodal backend fills
/// with the referenced media.
struct PromptSegment {
  SegmentKind kind = SegmentKind::text;
  std::string text;
  std::optional<ModalityRef> media;

  friend bool operator==(const PromptSegment&, const PromptSegment&) = default;
};

inline constexpr std::string_view kAudioToken = "<Aud>";
inline constexpr std::string_view kVideoToken = "<Vid>";

struct RenderedPrompt {
  std::vector<PromptSegment> segments;
  /// Segments flattened, with slots written as <Aud> / <Vid>.
  std::string plain_text;
};

struct FewShotExample {
  std::string dialogue_text;
  EmotionLabel gold_emotion;
  std::string gold_response;
};

/// Emotion-classification prompt over `history`, which must end with a
/// speaker turn. Examples go between the instruction and the dialogue.
RenderedPrompt render_emotion_prompt(std::span<const Turn> history,
                                     const EmotionSet& emoset,
                                     std::span<const FewShotExample> examples);

/// Empathetic-response prompt over `history`.
RenderedPrompt render_response_prompt(std::span<const Turn> history,
                                      std::span<const FewShotExample> examples);

/// `n` distinct examples chosen by a seeded partial Fisher-Yates shuffle
/// driven by std::mt19937_64, so the choice is identical on every platform.
std::vector<FewShotExample> sample_few_shot(
    std::span<const FewShotExample> pool, std::size_t n, std::uint64_t seed);

/// Dialogue lines in prompt form (`Speaker: "..." <Aud> <Vid>` per turn).
std::string render_dialogue_lines(std::span<const Turn> turns);

/// One example per dialogue: turns up to and including the last gold-labelled
/// speaker turn, with the following listener turn (if any) as the response.
/// Dialogues without a gold-labelled speaker turn contribute nothing.
std::vector<FewShotExample> few_shot_pool_from_dialogues(
    std::span<const Dialogue> dialogues);

/// Pool file: one JSON object per line with `dialogue_text`, `emotion` and
/// `response`.
std::vector<FewShotExample> load_few_shot_pool(
    const std::filesystem::path& path, const EmotionSet& emoset);

}  // namespace merg
