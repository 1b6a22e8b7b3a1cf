#include "merg/dialogue.hpp"

#include "merg/error.hpp"
#include "merg/util.hpp"

#include <algorithm>
#include <set>

namespace merg {

using nlohmann::json;

namespace {

std::string require_string(const json& obj, const char* field,
                           std::string_view where) {
  const auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) {
    throw Error(ErrorCode::SchemaError,
                std::string(where) + ": missing field '" + field + "'");
  }
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  if (!it->is_string()) {
    throw Error(ErrorCode::SchemaError,
                std::string(where) + ": field '" + field + "' must be a string");
  }
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& obj, const char* field,
                                           std::string_view where) {
  const auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw Error(ErrorCode::SchemaError,
                std::string(where) + ": field '" + field + "' must be a string");
  }
  auto value = it->get<std::string>();
  if (value.empty()) return std::nullopt;
  return value;
}

Role parse_role(const std::string& text, std::string_view where) {
  const auto lowered = util::to_lower(text);
  if (lowered == "speaker") return Role::speaker;
  if (lowered == "listener") return Role::listener;
  throw Error(ErrorCode::SchemaError,
              std::string(where) + ": role must be speaker or listener, got '" +
                  text + "'");
}

}  // namespace

std::string_view to_string(ModalityKind kind) {
  switch (kind) {
    case ModalityKind::audio: return "audio";
    case ModalityKind::video: return "video";
    case ModalityKind::image: return "image";
  }
  return "audio";
}

std::optional<ModalityKind> kind_from_extension(std::string_view path) {
  static const std::set<std::string, std::less<>> audio{
      "wav", "mp3", "flac", "ogg", "m4a", "aac", "opus"};
  static const std::set<std::string, std::less<>> video{
      "mp4", "avi", "mov", "mkv", "webm", "m4v"};
  static const std::set<std::string, std::less<>> image{
      "png", "jpg", "jpeg", "bmp", "webp", "gif"};
  const auto ext = util::extension_of(path);
  if (audio.contains(ext)) return ModalityKind::audio;
  if (video.contains(ext)) return ModalityKind::video;
  if (image.contains(ext)) return ModalityKind::image;
  return std::nullopt;
}

ModalityRef make_ref(std::string uri, ModalityKind fallback) {
  const auto kind = kind_from_extension(uri).value_or(fallback);
  return ModalityRef{std::move(uri), kind, std::nullopt};
}

std::string_view to_string(Role role) {
  return role == Role::speaker ? "speaker" : "listener";
}

std::string_view to_string(Violation v) {
  switch (v) {
    case Violation::EmptyId: return "EmptyId";
    case Violation::NoTurns: return "NoTurns";
    case Violation::EmptyUtterance: return "EmptyUtterance";
    case Violation::EmptyMediaUri: return "EmptyMediaUri";
    case Violation::MediaKindMismatch: return "MediaKindMismatch";
    case Violation::UnknownGoldEmotion: return "UnknownGoldEmotion";
    case Violation::LastTurnNotSpeaker: return "LastTurnNotSpeaker";
  }
  return "Unknown";
}

std::vector<ViolationReport> validate_dialogue(const Dialogue& dialogue,
                                               bool require_speaker_last,
                                               const EmotionSet* emoset) {
  std::vector<ViolationReport> out;
  if (dialogue.id.empty()) out.push_back({Violation::EmptyId, std::nullopt});
  if (dialogue.turns.empty()) {
    out.push_back({Violation::NoTurns, std::nullopt});
    return out;
  }

  const auto check_media = [&](const std::optional<ModalityRef>& ref,
                               ModalityKind expected, std::size_t i) {
    if (!ref) return;
    if (ref->uri.empty()) {
      out.push_back({Violation::EmptyMediaUri, i});
      return;
    }
    if (ref->kind != expected) {
      out.push_back({Violation::MediaKindMismatch, i});
      return;
    }
    if (!util::has_uri_scheme(ref->uri)) {
      const auto inferred = kind_from_extension(ref->uri);
      if (inferred && *inferred != expected) {
        out.push_back({Violation::MediaKindMismatch, i});
      }
    }
  };

  for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
    const auto& turn = dialogue.turns[i];
    const auto& u = turn.utterance;
    if (u.text.empty() && !u.audio && !u.video) {
      out.push_back({Violation::EmptyUtterance, i});
    }
    check_media(u.audio, ModalityKind::audio, i);
    check_media(u.video, ModalityKind::video, i);
    if (emoset != nullptr && turn.gold_emotion &&
        !emoset->contains(*turn.gold_emotion)) {
      out.push_back({Violation::UnknownGoldEmotion, i});
    }
  }
  if (require_speaker_last && dialogue.turns.back().role != Role::speaker) {
    out.push_back({Violation::LastTurnNotSpeaker, dialogue.turns.size() - 1});
  }
  return out;
}

std::vector<Turn> history_window(const Dialogue& dialogue,
                                 std::size_t upto_index,
                                 std::size_t max_turns) {
  if (upto_index > dialogue.turns.size()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "upto_index " + std::to_string(upto_index) + " exceeds " +
                    std::to_string(dialogue.turns.size()) + " turns");
  }
  const std::size_t count = std::min(upto_index, max_turns);
  const auto first = dialogue.turns.begin() +
                     static_cast<std::ptrdiff_t>(upto_index - count);
  return {first, first + static_cast<std::ptrdiff_t>(count)};
}

Dialogue parse_dataset_record(const json& record, const EmotionSet& emoset) {
  if (!record.is_object()) {
    throw Error(ErrorCode::SchemaError, "record is not an object");
  }
  Dialogue d;
  d.id = require_string(record, "id", "record");
  const std::string where = "record '" + d.id + "'";
  d.topic = optional_string(record, "topic", where);
  d.speaker_profile_id = require_string(record, "speaker_profile_id", where);
  d.listener_profile_id = require_string(record, "listener_profile_id", where);

  const auto turns = record.find("turns");
  if (turns == record.end() || !turns->is_array()) {
    throw Error(ErrorCode::SchemaError, where + ": missing array 'turns'");
  }
  if (turns->empty()) {
    throw Error(ErrorCode::SchemaError, where + ": 'turns' is empty");
  }
  for (std::size_t i = 0; i < turns->size(); ++i) {
    const auto& t = (*turns)[i];
    const std::string turn_where = where + " turn " + std::to_string(i);
    if (!t.is_object()) {
      throw Error(ErrorCode::SchemaError, turn_where + ": not an object");
    }
    Turn turn;
    turn.role = parse_role(require_string(t, "role", turn_where), turn_where);
    turn.utterance.text = require_string(t, "text", turn_where);
    if (auto p = optional_string(t, "audio_path", turn_where)) {
      turn.utterance.audio = ModalityRef{*p, ModalityKind::audio, std::nullopt};
    }
    if (auto p = optional_string(t, "video_path", turn_where)) {
      turn.utterance.video = ModalityRef{*p, ModalityKind::video, std::nullopt};
    }
    if (auto e = optional_string(t, "emotion", turn_where)) {
      auto label = util::to_lower(util::trim(*e));
      if (!emoset.contains(label)) {
        throw Error(ErrorCode::UnknownEmotion,
                    turn_where + ": '" + label + "' not in " + emoset.braced());
      }
      turn.gold_emotion = std::move(label);
    }
    d.turns.push_back(std::move(turn));
  }

  const auto violations = validate_dialogue(d, false, &emoset);
  if (!violations.empty()) {
    std::string msg = where + ":";
    for (const auto& v : violations) {
      msg += " ";
      msg += to_string(v.kind);
      if (v.turn_index) msg += "@" + std::to_string(*v.turn_index);
    }
    throw Error(ErrorCode::SchemaError, msg);
  }
  return d;
}

Dialogue parse_dataset_record(std::string_view line, const EmotionSet& emoset) {
  json record;
  try {
    record = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, std::string("malformed record: ") +
                                            e.what());
  }
  return parse_dataset_record(record, emoset);
}

json serialize_dataset_record(const Dialogue& d) {
  json record;
  record["id"] = d.id;
  if (d.topic) record["topic"] = *d.topic;
  record["speaker_profile_id"] = d.speaker_profile_id;
  record["listener_profile_id"] = d.listener_profile_id;
  json turns = json::array();
  for (const auto& turn : d.turns) {
    json t;
    t["role"] = to_string(turn.role);
    t["text"] = turn.utterance.text;
    if (turn.utterance.audio) t["audio_path"] = turn.utterance.audio->uri;
    if (turn.utterance.video) t["video_path"] = turn.utterance.video->uri;
    if (turn.gold_emotion) t["emotion"] = *turn.gold_emotion;
    turns.push_back(std::move(t));
  }
  record["turns"] = std::move(turns);
  return record;
}

std::vector<Dialogue> parse_dataset(std::string_view text,
                                    const EmotionSet& emoset) {
  std::vector<Dialogue> out;
  std::set<std::string> ids;
  int line_no = 0;
  for (const auto& line : util::split(text, '\n')) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    try {
      auto d = parse_dataset_record(std::string_view(line), emoset);
      if (!ids.insert(d.id).second) {
        throw Error(ErrorCode::SchemaError, "duplicate dialogue id '" + d.id +
                                                "'");
      }
      out.push_back(std::move(d));
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " +
                                e.what());
    }
  }
  return out;
}

std::vector<Dialogue> load_dataset(const std::filesystem::path& path,
                                   const EmotionSet& emoset) {
  return parse_dataset(util::read_file(path), emoset);
}

std::string serialize_dataset(const std::vector<Dialogue>& dialogues) {
  std::string out;
  for (const auto& d : dialogues) {
    out += serialize_dataset_record(d).dump();
    out += '\n';
  }
  return out;
}

}  // namespace merg
