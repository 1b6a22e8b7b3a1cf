#pragma once

#include "merg/dialogue.hpp"
#include "merg/emotion.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

namespace merg {

/// Persona anchor. Field names on the wire are ID, age, gender, timbre,
/// reference_utterance, reference_speech and reference_facial.
struct IdentityProfile {
  std::string id;
  std::string age;
  std::string gender;
  std::string timbre;
  std::string reference_utterance;
  std::string reference_speech;
  std::string reference_facial;

  friend bool operator==(const IdentityProfile&,
                         const IdentityProfile&) = default;
};

using ProfileMap = std::map<std::string, IdentityProfile>;

/// Accepts a single {"speaker_profile": {...}, "listener_profile": {...}}
/// document, an array of such documents, or {"profiles": [...]} holding
/// either wrapped or bare profile objects. Numeric IDs are read as strings.
/// Throws SchemaError or DuplicateId.
ProfileMap parse_profiles(const nlohmann::json& doc);
/// Also throws IoError.
ProfileMap load_profiles(const std::filesystem::path& path);
nlohmann::json profile_to_json(const IdentityProfile& profile);

enum class ReferenceKind { speech, facial, utterance };
enum class EmotionBank { tts, facial };

struct SpeechCacheEntry {
  std::string session_id;
  std::size_t turn_index = 0;
  ModalityRef asset;
  long long created_at_ms = 0;

  friend bool operator==(const SpeechCacheEntry&,
                         const SpeechCacheEntry&) = default;
};

/// Profiles plus the generated-speech cache.
///
/// Cached assets live at `<asset_root>/<session>/<turn>_speech.<ext>`. Every
/// mutation is appended to `<asset_root>/speech_cache.index`; the format is
/// described in docs/cache_index.md. Constructing a store over an existing
/// root replays that index.
class MemoryStore {
 public:
  explicit MemoryStore(std::filesystem::path asset_root, ProfileMap profiles = {});

  MemoryStore(const MemoryStore&) = delete;
  MemoryStore& operator=(const MemoryStore&) = delete;

  const std::filesystem::path& asset_root() const noexcept { return root_; }
  std::filesystem::path index_path() const;

  const ProfileMap& profiles() const noexcept { return profiles_; }
  bool has_profile(std::string_view id) const;
  /// Throws UnknownProfile.
  const IdentityProfile& profile(std::string_view id) const;

  /// speech -> audio, facial -> image or video by extension (image when
  /// unknown), utterance -> kind by extension (video when unknown).
  ModalityRef get_reference_media(std::string_view profile_id,
                                  ReferenceKind kind) const;

  /// Copies `asset` into the cache layout and records it. Local paths,
  /// file:// and http:// URIs are accepted. Replacing an existing entry is
  /// recorded as a `replace` line. Throws InvalidAsset, InvalidRequest (bad
  /// session id) or IoError.
  SpeechCacheEntry cache_put(const std::string& session_id,
                             std::size_t turn_index, const ModalityRef& asset);

  /// Throws CacheMiss.
  SpeechCacheEntry cache_get(const std::string& session_id,
                             std::size_t turn_index) const;

  /// Drops every entry of the session and its directory.
  void delete_session(const std::string& session_id);

  std::vector<SpeechCacheEntry> cache_entries() const;
  std::size_t replace_count() const;

 private:
  void replay_index();
  void append_index_line(const std::string& line);

  std::filesystem::path root_;
  ProfileMap profiles_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::size_t>, SpeechCacheEntry> cache_;
  std::size_t replaced_ = 0;
};

/// map_emotion, projected onto one bank.
std::string retrieve_emotion_token(EmotionBank bank, std::string_view label,
                                   const EmotionMapping& mapping);

}  // namespace merg
