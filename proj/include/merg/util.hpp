#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace merg::util {

std::string to_lower(std::string_view text);
std::string_view trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

/// Lowercased extension without the dot, "" if none.
std::string extension_of(std::string_view path);

/// True for "scheme://..." URIs.
bool has_uri_scheme(std::string_view uri);

/// Throws IoError.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// Milliseconds since the Unix epoch.
long long now_unix_ms();

/// ISO-8601 UTC with millisecond precision, e.g. 2026-01-02T03:04:05.006Z.
std::string format_utc(long long unix_ms);

/// 16 random lowercase hex characters.
std::string random_hex_id();

}  // namespace merg::util
