#pragma once

#include "merg/emotion.hpp"
#include "merg/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace merg {

struct EvalRecord {
  EmotionLabel gold;
  /// Absent for failed items, which count as misses.
  std::optional<EmotionLabel> predicted;
  std::string response_text;
};

enum class DistLevel { per_response_mean, corpus };

std::string_view to_string(DistLevel level);
std::optional<DistLevel> parse_dist_level(std::string_view s);

/// Lowercase, drop ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

/// Distinct-n ratio. Responses with fewer than n tokens contribute no n-grams
/// and are skipped. Throws EmptyInput or AllTooShort.
double dist_n(std::span<const std::string> responses, std::size_t n,
              DistLevel level = DistLevel::per_response_mean);

/// Percentage of records whose prediction equals the gold label. Throws
/// EmptyRecords.
double hit_rate(std::span<const EvalRecord> records);

struct ReportOptions {
  std::string label = "mock-backend";
  DistLevel level = DistLevel::per_response_mean;
};

struct EvalReport {
  std::string label;
  DistLevel level = DistLevel::per_response_mean;
  double hit_percent = 0.0;
  /// Absent when no response had a single token.
  std::optional<double> dist1;
  std::optional<double> dist2;
  std::size_t n_items = 0;
  std::size_t n_failed = 0;
  std::map<std::pair<EmotionLabel, EmotionLabel>, std::size_t> confusion;
  /// gold label -> hit percent over items with that gold label.
  std::map<EmotionLabel, double> per_emotion_hit;
};

/// Throws EmptyRecords.
EvalReport build_report(std::span<const EvalRecord> records,
                        const ReportOptions& options = {});

nlohmann::json report_to_json(const EvalReport& report);

/// Aligned plain-text table, one row per report: Model, HIT, Dist-1, Dist-2.
std::string render_table(std::span<const EvalReport> reports);

/// Items without a gold label are dropped.
std::vector<EvalRecord> records_from_batch(std::span<const BatchItem> items);

}  // namespace merg
