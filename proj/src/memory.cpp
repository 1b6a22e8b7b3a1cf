#include "merg/memory.hpp"

#include "merg/error.hpp"
#include "merg/util.hpp"

#include <httplib.h>

#include <fstream>
#include <mutex>

namespace merg {

using nlohmann::json;

namespace {

constexpr std::string_view kIndexHeader = "# merg speech cache index v1";
constexpr const char* kIndexFile = "speech_cache.index";

const char* const kProfileFields[] = {"ID",
                                      "age",
                                      "gender",
                                      "timbre",
                                      "reference_utterance",
                                      "reference_speech",
                                      "reference_facial"};

IdentityProfile parse_one_profile(const json& obj, const std::string& where) {
  if (!obj.is_object()) {
    throw Error(ErrorCode::SchemaError, where + ": profile is not an object");
  }
  std::map<std::string, std::string> values;
  for (const char* field : kProfileFields) {
    const auto it = obj.find(field);
    if (it == obj.end() || it->is_null()) {
      throw Error(ErrorCode::SchemaError,
                  where + ": missing field '" + field + "'");
    }
    if (std::string_view(field) == "ID" && it->is_number_integer()) {
      values[field] = std::to_string(it->get<long long>());
      continue;
    }
    if (!it->is_string()) {
      throw Error(ErrorCode::SchemaError,
                  where + ": field '" + field + "' must be a string");
    }
    values[field] = it->get<std::string>();
  }
  IdentityProfile p{values["ID"],
                    values["age"],
                    values["gender"],
                    values["timbre"],
                    values["reference_utterance"],
                    values["reference_speech"],
                    values["reference_facial"]};
  if (p.id.empty()) {
    throw Error(ErrorCode::SchemaError, where + ": empty ID");
  }
  if (p.reference_utterance.empty() || p.reference_speech.empty() ||
      p.reference_facial.empty()) {
    throw Error(ErrorCode::SchemaError,
                where + ": reference paths must be non-empty");
  }
  return p;
}

void insert_profile(ProfileMap& out, IdentityProfile p) {
  const auto id = p.id;
  if (!out.emplace(id, std::move(p)).second) {
    throw Error(ErrorCode::DuplicateId, "profile ID '" + id + "' repeated");
  }
}

void collect_profiles(const json& node, ProfileMap& out, const std::string& where) {
  if (!node.is_object()) {
    throw Error(ErrorCode::SchemaError, where + ": expected an object");
  }
  const bool wrapped =
      node.contains("speaker_profile") || node.contains("listener_profile");
  if (!wrapped) {
    insert_profile(out, parse_one_profile(node, where));
    return;
  }
  for (const char* key : {"speaker_profile", "listener_profile"}) {
    if (node.contains(key)) {
      insert_profile(out, parse_one_profile(node[key], where + "." + key));
    }
  }
}

void validate_session_id(const std::string& session_id) {
  if (session_id.empty() || session_id == "." || session_id == ".." ||
      session_id.find_first_of("/\\\t\n\r") != std::string::npos) {
    throw Error(ErrorCode::InvalidRequest,
                "unusable session id '" + session_id + "'");
  }
}

void fetch_into(const std::string& uri, const std::filesystem::path& dest) {
  std::filesystem::path source;
  if (uri.rfind("file://", 0) == 0) {
    source = uri.substr(7);
  } else if (uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0) {
    const auto scheme_end = uri.find("://");
    const auto path_start = uri.find('/', scheme_end + 3);
    const std::string host = uri.substr(0, path_start);
    const std::string path =
        path_start == std::string::npos ? "/" : uri.substr(path_start);
    httplib::Client cli(host);
    cli.set_connection_timeout(std::chrono::seconds(10));
    cli.set_read_timeout(std::chrono::seconds(60));
    auto res = cli.Get(path);
    if (!res || res->status != 200) {
      throw Error(ErrorCode::IoError, "cannot fetch " + uri);
    }
    util::write_file(dest, res->body);
    return;
  } else if (util::has_uri_scheme(uri)) {
    throw Error(ErrorCode::IoError, "unsupported asset scheme in " + uri);
  } else {
    source = uri;
  }
  std::error_code ec;
  if (std::filesystem::exists(dest, ec) &&
      std::filesystem::equivalent(source, dest, ec)) {
    return;
  }
  std::filesystem::create_directories(dest.parent_path(), ec);
  std::filesystem::copy_file(source, dest,
                             std::filesystem::copy_options::overwrite_existing,
                             ec);
  if (ec) {
    throw Error(ErrorCode::IoError,
                "cannot copy " + source.string() + ": " + ec.message());
  }
}

}  // namespace

ProfileMap parse_profiles(const json& doc) {
  ProfileMap out;
  if (doc.is_array()) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      collect_profiles(doc[i], out, "profiles[" + std::to_string(i) + "]");
    }
  } else if (doc.is_object() && doc.contains("profiles")) {
    if (!doc["profiles"].is_array()) {
      throw Error(ErrorCode::SchemaError, "'profiles' must be an array");
    }
    for (std::size_t i = 0; i < doc["profiles"].size(); ++i) {
      collect_profiles(doc["profiles"][i], out,
                       "profiles[" + std::to_string(i) + "]");
    }
  } else {
    collect_profiles(doc, out, "document");
  }
  return out;
}

ProfileMap load_profiles(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(util::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
  return parse_profiles(doc);
}

json profile_to_json(const IdentityProfile& p) {
  return json{{"ID", p.id},
              {"age", p.age},
              {"gender", p.gender},
              {"timbre", p.timbre},
              {"reference_utterance", p.reference_utterance},
              {"reference_speech", p.reference_speech},
              {"reference_facial", p.reference_facial}};
}

MemoryStore::MemoryStore(std::filesystem::path asset_root, ProfileMap profiles)
    : root_(std::move(asset_root)), profiles_(std::move(profiles)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) {
    throw Error(ErrorCode::IoError,
                "cannot create asset root " + root_.string());
  }
  replay_index();
}

std::filesystem::path MemoryStore::index_path() const {
  return root_ / kIndexFile;
}

bool MemoryStore::has_profile(std::string_view id) const {
  return profiles_.contains(std::string(id));
}

const IdentityProfile& MemoryStore::profile(std::string_view id) const {
  const auto it = profiles_.find(std::string(id));
  if (it == profiles_.end()) {
    throw Error(ErrorCode::UnknownProfile,
                "no profile with ID '" + std::string(id) + "'");
  }
  return it->second;
}

ModalityRef MemoryStore::get_reference_media(std::string_view profile_id,
                                             ReferenceKind kind) const {
  const auto& p = profile(profile_id);
  switch (kind) {
    case ReferenceKind::speech:
      return ModalityRef{p.reference_speech, ModalityKind::audio, std::nullopt};
    case ReferenceKind::facial: {
      const auto inferred = kind_from_extension(p.reference_facial);
      const auto k = inferred == ModalityKind::video ? ModalityKind::video
                                                     : ModalityKind::image;
      return ModalityRef{p.reference_facial, k, std::nullopt};
    }
    case ReferenceKind::utterance:
      return make_ref(p.reference_utterance, ModalityKind::video);
  }
  throw Error(ErrorCode::InvalidRequest, "unknown reference kind");
}

SpeechCacheEntry MemoryStore::cache_put(const std::string& session_id,
                                        std::size_t turn_index,
                                        const ModalityRef& asset) {
  if (asset.kind != ModalityKind::audio) {
    throw Error(ErrorCode::InvalidAsset,
                "speech cache only holds audio, got " +
                    std::string(to_string(asset.kind)));
  }
  if (asset.uri.empty()) {
    throw Error(ErrorCode::InvalidAsset, "asset uri is empty");
  }
  validate_session_id(session_id);

  auto ext = util::extension_of(asset.uri);
  if (ext.empty()) ext = "wav";
  const auto dest =
      root_ / session_id / (std::to_string(turn_index) + "_speech." + ext);
  fetch_into(asset.uri, dest);

  SpeechCacheEntry entry{session_id, turn_index,
                         ModalityRef{dest.string(), ModalityKind::audio,
                                     std::nullopt},
                         util::now_unix_ms()};

  std::unique_lock lock(mutex_);
  const auto key = std::make_pair(session_id, turn_index);
  const bool replacing = cache_.contains(key);
  append_index_line(std::string(replacing ? "replace" : "put") + "\t" +
                    session_id + "\t" + std::to_string(turn_index) + "\t" +
                    std::to_string(entry.created_at_ms) + "\t" +
                    entry.asset.uri);
  if (replacing) ++replaced_;
  cache_[key] = entry;
  return entry;
}

SpeechCacheEntry MemoryStore::cache_get(const std::string& session_id,
                                        std::size_t turn_index) const {
  std::shared_lock lock(mutex_);
  const auto it = cache_.find({session_id, turn_index});
  if (it == cache_.end()) {
    throw Error(ErrorCode::CacheMiss,
                "no cached speech for " + session_id + "/" +
                    std::to_string(turn_index));
  }
  return it->second;
}

void MemoryStore::delete_session(const std::string& session_id) {
  validate_session_id(session_id);
  {
    std::unique_lock lock(mutex_);
    std::erase_if(cache_, [&](const auto& kv) {
      return kv.first.first == session_id;
    });
    append_index_line("purge\t" + session_id + "\t-\t" +
                      std::to_string(util::now_unix_ms()) + "\t-");
  }
  std::error_code ec;
  std::filesystem::remove_all(root_ / session_id, ec);
}

std::vector<SpeechCacheEntry> MemoryStore::cache_entries() const {
  std::shared_lock lock(mutex_);
  std::vector<SpeechCacheEntry> out;
  out.reserve(cache_.size());
  for (const auto& [key, entry] : cache_) out.push_back(entry);
  return out;
}

std::size_t MemoryStore::replace_count() const {
  std::shared_lock lock(mutex_);
  return replaced_;
}

void MemoryStore::append_index_line(const std::string& line) {
  const auto path = index_path();
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot append to " + path.string());
  }
  if (fresh) out << kIndexHeader << '\n';
  out << line << '\n';
  out.flush();
  if (!out) {
    throw Error(ErrorCode::IoError, "short write to " + path.string());
  }
}

void MemoryStore::replay_index() {
  const auto path = index_path();
  if (!std::filesystem::exists(path)) return;
  const auto text = util::read_file(path);
  int line_no = 0;
  for (const auto& line : util::split(text, '\n')) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto cols = util::split(line, '\t');
    const auto bad = [&] {
      return Error(ErrorCode::IoError, path.string() + ":" +
                                           std::to_string(line_no) +
                                           ": malformed index line");
    };
    if (cols.size() != 5) throw bad();
    const auto& op = cols[0];
    if (op == "purge") {
      std::erase_if(cache_,
                    [&](const auto& kv) { return kv.first.first == cols[1]; });
      continue;
    }
    if (op != "put" && op != "replace") throw bad();
    try {
      const std::size_t turn = std::stoull(cols[2]);
      const long long created = std::stoll(cols[3]);
      auto key = std::make_pair(cols[1], turn);
      if (op == "replace") ++replaced_;
      cache_[key] = SpeechCacheEntry{
          cols[1], turn, ModalityRef{cols[4], ModalityKind::audio, std::nullopt},
          created};
    } catch (const std::logic_error&) {
      throw bad();
    }
  }
}

std::string retrieve_emotion_token(EmotionBank bank, std::string_view label,
                                   const EmotionMapping& mapping) {
  const auto tokens = map_emotion(label, mapping);
  return bank == EmotionBank::tts ? tokens.speaking_style
                                  : tokens.facial_emotion;
}

}  // namespace merg
