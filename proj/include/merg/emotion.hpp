#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace merg {

/// A label drawn from an EmotionSet. Always lowercase.
using EmotionLabel = std::string;

/// Closed, ordered candidate label set. Order drives vote tie-breaking.
class EmotionSet {
 public:
  /// Labels are lowercased; throws InvalidConfig on empty input or duplicates.
  explicit EmotionSet(std::vector<std::string> labels);

  /// {neutral, happy, surprised, angry, fear, sad, disgusted, contempt}
  static EmotionSet default_set();

  /// Comma-separated list, whitespace around items ignored.
  static EmotionSet parse_list(std::string_view csv);

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool contains(std::string_view label) const noexcept;
  std::optional<std::size_t> index_of(std::string_view label) const noexcept;

  /// "{a, b, c}"
  std::string braced() const;

  friend bool operator==(const EmotionSet&, const EmotionSet&) = default;

 private:
  std::vector<std::string> labels_;
};

inline constexpr std::array<std::string_view, 8> kSpeakingStyleBank{
    "friendly", "cheerful", "excited",  "sad",
    "angry",    "terrified", "shouting", "whispering"};

inline constexpr std::array<std::string_view, 8> kFacialEmotionBank{
    "angry", "contempt", "disgusted", "fear",
    "happy", "sad",      "surprised", "neutral"};

bool is_speaking_style(std::string_view token) noexcept;
bool is_facial_emotion(std::string_view token) noexcept;

/// Tokens handed to the speech and talking-head generators for one emotion.
struct EmotionTokens {
  std::string speaking_style;
  std::string facial_emotion;

  friend bool operator==(const EmotionTokens&, const EmotionTokens&) = default;
};

/// Wheel-style table from fine-grained labels onto the two generator banks.
///
/// Text form is CSV with the header `fine_label,speaking_style,facial_emotion`.
/// Blank lines and lines starting with '#' are ignored. A row whose label is
/// `*` declares the fallback pair used for labels missing from the table.
class EmotionMapping {
 public:
  EmotionMapping() = default;

  static EmotionMapping default_table();
  static EmotionMapping parse_csv(std::string_view text);
  static EmotionMapping load(const std::filesystem::path& path);
  std::string to_csv() const;

  /// Throws InvalidConfig if either token is outside its bank.
  void set(std::string_view label, EmotionTokens tokens);
  void set_fallback(std::optional<EmotionTokens> tokens);

  const std::map<std::string, EmotionTokens>& table() const noexcept {
    return table_;
  }
  const std::optional<EmotionTokens>& fallback() const noexcept {
    return fallback_;
  }

  /// Labels of `emoset` that map_emotion would reject.
  std::vector<std::string> uncovered(const EmotionSet& emoset) const;

 private:
  std::map<std::string, EmotionTokens> table_;
  std::optional<EmotionTokens> fallback_;
};

/// Table lookup, then fallback; throws UnmappedEmotion otherwise.
EmotionTokens map_emotion(std::string_view label, const EmotionMapping& mapping);

/// Turns free-form model output into a member of `emoset`.
///
/// The text is lowercased and stripped of surrounding whitespace and
/// punctuation. An exact label match wins. Otherwise the label is accepted
/// only if exactly one distinct label of the set appears as a whole word.
/// Throws Unparseable when zero or several labels are found.
EmotionLabel normalize_emotion_output(std::string_view raw,
                                      const EmotionSet& emoset);

enum class VotingStrategy { single, majority, weighted };

std::string_view to_string(VotingStrategy strategy);
std::optional<VotingStrategy> parse_voting_strategy(std::string_view text);

struct VotingBallot {
  std::string backend_name;
  std::size_t backend_index = 0;
  EmotionLabel emotion;
  std::string response_text;
};

struct VotingResult {
  EmotionLabel winner;
  std::string response;
  std::string winner_backend;
  std::size_t winner_backend_index = 0;
  /// Only labels that received at least one ballot appear.
  std::map<std::string, double> tally;
  VotingStrategy strategy = VotingStrategy::majority;
};

/// One vote per ballot. Ties go to the label earliest in `emoset`; the
/// response comes from the lowest backend_index ballot for the winner.
VotingResult majority_vote(std::span<const VotingBallot> ballots,
                           const EmotionSet& emoset);

/// Sum of per-backend weights per label, same tie-break and response rule as
/// majority_vote. Scores within a relative 1e-9 of each other are ties, so
/// decimal weights such as 0.1 + 0.2 vs 0.3 compare as they would exactly.
VotingResult weighted_vote(std::span<const VotingBallot> ballots,
                           const std::map<std::string, double>& weights,
                           const EmotionSet& emoset);

}  // namespace merg
