#include "merg/emotion.hpp"

#include "merg/error.hpp"
#include "merg/util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

namespace merg {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

bool is_strippable(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isspace(u) != 0 || std::ispunct(u) != 0;
}

std::string_view strip_edges(std::string_view text) {
  while (!text.empty() && is_strippable(text.front())) text.remove_prefix(1);
  while (!text.empty() && is_strippable(text.back())) text.remove_suffix(1);
  return text;
}

bool occurs_as_word(std::string_view haystack, std::string_view word) {
  if (word.empty()) return false;
  std::size_t pos = 0;
  while ((pos = haystack.find(word, pos)) != std::string_view::npos) {
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const std::size_t end = pos + word.size();
    const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

template <typename WeightFn>
VotingResult tally_vote(std::span<const VotingBallot> ballots,
                        const EmotionSet& emoset, VotingStrategy strategy,
                        WeightFn weight_of) {
  if (ballots.empty()) {
    throw Error(ErrorCode::EmptyBallots, "no ballots to count");
  }
  std::vector<double> scores(emoset.size(), 0.0);
  std::vector<bool> voted(emoset.size(), false);
  std::set<std::size_t> seen_index;
  for (const auto& ballot : ballots) {
    if (!seen_index.insert(ballot.backend_index).second) {
      throw Error(ErrorCode::InvalidRequest,
                  "duplicate backend_index " +
                      std::to_string(ballot.backend_index));
    }
    const auto idx = emoset.index_of(ballot.emotion);
    if (!idx) {
      throw Error(ErrorCode::UnknownEmotion,
                  "ballot from '" + ballot.backend_name + "' votes '" +
                      ballot.emotion + "'");
    }
    scores[*idx] += weight_of(ballot);
    voted[*idx] = true;
  }

  double best = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (voted[i]) best = std::max(best, scores[i]);
  }
  const double tolerance = 1e-9 * best;
  std::size_t winner = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (voted[i] && scores[i] >= best - tolerance) {
      winner = i;
      break;
    }
  }

  VotingResult result;
  result.strategy = strategy;
  result.winner = emoset.labels()[winner];
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (voted[i]) result.tally[emoset.labels()[i]] = scores[i];
  }
  const VotingBallot* chosen = nullptr;
  for (const auto& ballot : ballots) {
    if (ballot.emotion == result.winner &&
        (chosen == nullptr || ballot.backend_index < chosen->backend_index)) {
      chosen = &ballot;
    }
  }
  result.response = chosen->response_text;
  result.winner_backend = chosen->backend_name;
  result.winner_backend_index = chosen->backend_index;
  return result;
}

}  // namespace

EmotionSet::EmotionSet(std::vector<std::string> labels) {
  if (labels.empty()) {
    throw Error(ErrorCode::InvalidConfig, "emotion set is empty");
  }
  for (auto& raw : labels) {
    auto label = util::to_lower(util::trim(raw));
    if (label.empty()) {
      throw Error(ErrorCode::InvalidConfig, "emotion set has an empty label");
    }
    if (contains(label)) {
      throw Error(ErrorCode::InvalidConfig, "duplicate emotion label " + label);
    }
    labels_.push_back(std::move(label));
  }
}

EmotionSet EmotionSet::default_set() {
  return EmotionSet({"neutral", "happy", "surprised", "angry", "fear", "sad",
                     "disgusted", "contempt"});
}

EmotionSet EmotionSet::parse_list(std::string_view csv) {
  return EmotionSet(util::split(csv, ','));
}

bool EmotionSet::contains(std::string_view label) const noexcept {
  return index_of(label).has_value();
}

std::optional<std::size_t> EmotionSet::index_of(
    std::string_view label) const noexcept {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels_.begin());
}

std::string EmotionSet::braced() const {
  std::string out = "{";
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (i > 0) out += ", ";
    out += labels_[i];
  }
  out += "}";
  return out;
}

bool is_speaking_style(std::string_view token) noexcept {
  return std::find(kSpeakingStyleBank.begin(), kSpeakingStyleBank.end(),
                   token) != kSpeakingStyleBank.end();
}

bool is_facial_emotion(std::string_view token) noexcept {
  return std::find(kFacialEmotionBank.begin(), kFacialEmotionBank.end(),
                   token) != kFacialEmotionBank.end();
}

EmotionMapping EmotionMapping::default_table() {
  EmotionMapping m;
  m.set("neutral", {"friendly", "neutral"});
  m.set("happy", {"cheerful", "happy"});
  m.set("surprised", {"excited", "surprised"});
  m.set("angry", {"angry", "angry"});
  m.set("fear", {"terrified", "fear"});
  m.set("sad", {"sad", "sad"});
  // No disgust/contempt speaking style; anger is the nearest wheel neighbour.
  m.set("disgusted", {"angry", "disgusted"});
  m.set("contempt", {"angry", "contempt"});
  return m;
}

EmotionMapping EmotionMapping::parse_csv(std::string_view text) {
  EmotionMapping m;
  bool header_seen = false;
  int line_no = 0;
  for (const auto& raw_line : util::split(text, '\n')) {
    ++line_no;
    const auto line = util::trim(raw_line);
    if (line.empty() || line.front() == '#') continue;
    const auto cells = util::split(line, ',');
    if (cells.size() != 3) {
      throw Error(ErrorCode::InvalidConfig,
                  "mapping line " + std::to_string(line_no) +
                      ": expected 3 columns");
    }
    const auto label = util::to_lower(util::trim(cells[0]));
    EmotionTokens tokens{util::to_lower(util::trim(cells[1])),
                         util::to_lower(util::trim(cells[2]))};
    if (!header_seen) {
      header_seen = true;
      if (label == "fine_label") continue;
    }
    if (label == "*") {
      m.set_fallback(tokens);
    } else {
      m.set(label, std::move(tokens));
    }
  }
  return m;
}

EmotionMapping EmotionMapping::load(const std::filesystem::path& path) {
  return parse_csv(util::read_file(path));
}

std::string EmotionMapping::to_csv() const {
  std::ostringstream out;
  out << "fine_label,speaking_style,facial_emotion\n";
  for (const auto& [label, tokens] : table_) {
    out << label << ',' << tokens.speaking_style << ','
        << tokens.facial_emotion << '\n';
  }
  if (fallback_) {
    out << "*," << fallback_->speaking_style << ','
        << fallback_->facial_emotion << '\n';
  }
  return out.str();
}

void EmotionMapping::set(std::string_view label, EmotionTokens tokens) {
  if (label.empty()) {
    throw Error(ErrorCode::InvalidConfig, "mapping row with empty label");
  }
  if (!is_speaking_style(tokens.speaking_style)) {
    throw Error(ErrorCode::InvalidConfig,
                "'" + tokens.speaking_style + "' is not a speaking style");
  }
  if (!is_facial_emotion(tokens.facial_emotion)) {
    throw Error(ErrorCode::InvalidConfig,
                "'" + tokens.facial_emotion + "' is not a facial emotion");
  }
  table_[std::string(label)] = std::move(tokens);
}

void EmotionMapping::set_fallback(std::optional<EmotionTokens> tokens) {
  if (tokens && (!is_speaking_style(tokens->speaking_style) ||
                 !is_facial_emotion(tokens->facial_emotion))) {
    throw Error(ErrorCode::InvalidConfig, "fallback tokens outside the banks");
  }
  fallback_ = std::move(tokens);
}

std::vector<std::string> EmotionMapping::uncovered(
    const EmotionSet& emoset) const {
  std::vector<std::string> missing;
  if (fallback_) return missing;
  for (const auto& label : emoset.labels()) {
    if (!table_.contains(label)) missing.push_back(label);
  }
  return missing;
}

EmotionTokens map_emotion(std::string_view label,
                          const EmotionMapping& mapping) {
  const auto it = mapping.table().find(std::string(label));
  if (it != mapping.table().end()) return it->second;
  if (mapping.fallback()) return *mapping.fallback();
  throw Error(ErrorCode::UnmappedEmotion,
              "no mapping for '" + std::string(label) + "'");
}

EmotionLabel normalize_emotion_output(std::string_view raw,
                                      const EmotionSet& emoset) {
  const std::string lowered = util::to_lower(raw);
  const auto core = strip_edges(lowered);
  if (emoset.contains(core)) return std::string(core);

  std::vector<std::string> hits;
  for (const auto& label : emoset.labels()) {
    if (occurs_as_word(lowered, label)) hits.push_back(label);
  }
  if (hits.size() == 1) return hits.front();
  if (hits.empty()) {
    throw Error(ErrorCode::Unparseable,
                "no candidate emotion in '" + std::string(raw) + "'");
  }
  std::string joined;
  for (const auto& h : hits) joined += (joined.empty() ? "" : ", ") + h;
  throw Error(ErrorCode::Unparseable, "ambiguous emotion output '" +
                                          std::string(raw) + "' (" + joined +
                                          ")");
}

std::string_view to_string(VotingStrategy strategy) {
  switch (strategy) {
    case VotingStrategy::single: return "single";
    case VotingStrategy::majority: return "majority";
    case VotingStrategy::weighted: return "weighted";
  }
  return "majority";
}

std::optional<VotingStrategy> parse_voting_strategy(std::string_view text) {
  if (text == "single") return VotingStrategy::single;
  if (text == "majority") return VotingStrategy::majority;
  if (text == "weighted") return VotingStrategy::weighted;
  return std::nullopt;
}

VotingResult majority_vote(std::span<const VotingBallot> ballots,
                           const EmotionSet& emoset) {
  return tally_vote(ballots, emoset, VotingStrategy::majority,
                    [](const VotingBallot&) { return 1.0; });
}

VotingResult weighted_vote(std::span<const VotingBallot> ballots,
                           const std::map<std::string, double>& weights,
                           const EmotionSet& emoset) {
  for (const auto& ballot : ballots) {
    const auto it = weights.find(ballot.backend_name);
    if (it == weights.end()) {
      throw Error(ErrorCode::MissingWeight,
                  "no weight for backend '" + ballot.backend_name + "'");
    }
    if (!(it->second > 0.0) || !std::isfinite(it->second)) {
      throw Error(ErrorCode::InvalidConfig,
                  "weight for '" + ballot.backend_name + "' must be positive");
    }
  }
  return tally_vote(ballots, emoset, VotingStrategy::weighted,
                    [&](const VotingBallot& b) {
                      return weights.at(b.backend_name);
                    });
}

}  // namespace merg
