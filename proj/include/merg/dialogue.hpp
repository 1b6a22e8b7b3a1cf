#pragma once

#include "merg/emotion.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace merg {

enum class ModalityKind { audio, video, image };

std::string_view to_string(ModalityKind kind);

/// Kind implied by a file extension, if the extension is a known media type.
std::optional<ModalityKind> kind_from_extension(std::string_view path);

/// Opaque reference to a media asset. Never decoded by the engine.
struct ModalityRef {
  std::string uri;
  ModalityKind kind = ModalityKind::audio;
  std::optional<std::uint64_t> duration_ms;

  friend bool operator==(const ModalityRef&, const ModalityRef&) = default;
};

/// Builds a ref whose kind is inferred from the extension, or `fallback`.
ModalityRef make_ref(std::string uri, ModalityKind fallback);

struct Utterance {
  std::string text;
  std::optional<ModalityRef> audio;
  std::optional<ModalityRef> video;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

enum class Role { speaker, listener };

std::string_view to_string(Role role);

struct Turn {
  Role role = Role::speaker;
  Utterance utterance;
  std::optional<EmotionLabel> gold_emotion;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
  std::string speaker_profile_id;
  std::string listener_profile_id;
  std::optional<std::string> topic;

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

enum class Violation {
  EmptyId,
  NoTurns,
  EmptyUtterance,
  EmptyMediaUri,
  MediaKindMismatch,
  UnknownGoldEmotion,
  LastTurnNotSpeaker,
};

std::string_view to_string(Violation v);

struct ViolationReport {
  Violation kind;
  /// Offending turn, when the violation is turn-local.
  std::optional<std::size_t> turn_index;

  friend bool operator==(const ViolationReport&,
                         const ViolationReport&) = default;
};

/// Checks the type invariants. Gold labels are checked only when `emoset`
/// is given.
std::vector<ViolationReport> validate_dialogue(
    const Dialogue& dialogue, bool require_speaker_last,
    const EmotionSet* emoset = nullptr);

/// The last min(upto_index, max_turns) turns strictly before `upto_index`.
/// Throws IndexOutOfRange when upto_index > turn count.
std::vector<Turn> history_window(const Dialogue& dialogue,
                                 std::size_t upto_index,
                                 std::size_t max_turns);

/// Dataset record (one JSON object per line). Field names are listed in
/// docs/dataset_schema.md. Throws SchemaError or UnknownEmotion.
Dialogue parse_dataset_record(const nlohmann::json& record,
                              const EmotionSet& emoset);
Dialogue parse_dataset_record(std::string_view line, const EmotionSet& emoset);

nlohmann::json serialize_dataset_record(const Dialogue& dialogue);

/// Newline-delimited records; blank lines skipped. Duplicate ids are a
/// SchemaError.
std::vector<Dialogue> parse_dataset(std::string_view text,
                                    const EmotionSet& emoset);
std::vector<Dialogue> load_dataset(const std::filesystem::path& path,
                                   const EmotionSet& emoset);
std::string serialize_dataset(const std::vector<Dialogue>& dialogues);

}  // namespace merg
