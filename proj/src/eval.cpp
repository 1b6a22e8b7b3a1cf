#include "merg/eval.hpp"

#include "merg/error.hpp"
#include "merg/util.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <set>

namespace merg {

using nlohmann::json;

namespace {

struct NgramCounts {
  std::size_t distinct = 0;
  std::size_t total = 0;
};

using Ngram = std::vector<std::string>;

void collect(const std::vector<std::string>& tokens, std::size_t n,
             std::set<Ngram>& seen, std::size_t& total) {
  if (tokens.size() < n) return;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    seen.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                 tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++total;
  }
}

std::string fixed(std::optional<double> v, int decimals) {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, *v);
  return buf;
}

}  // namespace

std::string_view to_string(DistLevel level) {
  return level == DistLevel::corpus ? "corpus" : "per_response_mean";
}

std::optional<DistLevel> parse_dist_level(std::string_view s) {
  const auto v = util::to_lower(s);
  if (v == "per_response_mean" || v == "per_response" || v == "response") {
    return DistLevel::per_response_mean;
  }
  if (v == "corpus") return DistLevel::corpus;
  return std::nullopt;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double dist_n(std::span<const std::string> responses, std::size_t n,
              DistLevel level) {
  if (n == 0) throw Error(ErrorCode::InvalidRequest, "n must be positive");
  if (responses.empty()) {
    throw Error(ErrorCode::EmptyInput, "dist_n needs at least one response");
  }
  if (level == DistLevel::corpus) {
    std::set<Ngram> seen;
    std::size_t total = 0;
    for (const auto& r : responses) collect(tokenize(r), n, seen, total);
    if (total == 0) {
      throw Error(ErrorCode::AllTooShort,
                  "no response has " + std::to_string(n) + " tokens");
    }
    return static_cast<double>(seen.size()) / static_cast<double>(total);
  }
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& r : responses) {
    std::set<Ngram> seen;
    std::size_t total = 0;
    collect(tokenize(r), n, seen, total);
    if (total == 0) continue;
    sum += static_cast<double>(seen.size()) / static_cast<double>(total);
    ++counted;
  }
  if (counted == 0) {
    throw Error(ErrorCode::AllTooShort,
                "no response has " + std::to_string(n) + " tokens");
  }
  return sum / static_cast<double>(counted);
}

double hit_rate(std::span<const EvalRecord> records) {
  if (records.empty()) throw Error(ErrorCode::EmptyRecords, "no records");
  const auto hits = std::count_if(records.begin(), records.end(), [](const auto& r) {
    return r.predicted && *r.predicted == r.gold;
  });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
}

EvalReport build_report(std::span<const EvalRecord> records,
                        const ReportOptions& options) {
  EvalReport report;
  report.label = options.label;
  report.level = options.level;
  report.hit_percent = hit_rate(records);
  report.n_items = records.size();

  std::vector<std::string> responses;
  std::map<EmotionLabel, std::pair<std::size_t, std::size_t>> by_gold;
  for (const auto& r : records) {
    auto& [hits, seen] = by_gold[r.gold];
    ++seen;
    if (!r.predicted) {
      ++report.n_failed;
      continue;
    }
    ++report.confusion[{r.gold, *r.predicted}];
    if (*r.predicted == r.gold) ++hits;
    responses.push_back(r.response_text);
  }
  for (const auto& [label, counts] : by_gold) {
    report.per_emotion_hit[label] =
        100.0 * static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  const auto safe_dist = [&](std::size_t n) -> std::optional<double> {
    try {
      return dist_n(responses, n, options.level);
    } catch (const Error&) {
      return std::nullopt;
    }
  };
  report.dist1 = safe_dist(1);
  report.dist2 = safe_dist(2);
  return report;
}

json report_to_json(const EvalReport& r) {
  json confusion = json::array();
  for (const auto& [cell, count] : r.confusion) {
    confusion.push_back({{"gold", cell.first}, {"predicted", cell.second}, {"count", count}});
  }
  return json{{"label", r.label},
              {"hit_percent", r.hit_percent},
              {"dist1", r.dist1 ? json(*r.dist1) : json(nullptr)},
              {"dist2", r.dist2 ? json(*r.dist2) : json(nullptr)},
              {"dist_level", to_string(r.level)},
              {"tokenizer", "lowercase, strip ASCII punctuation, split on whitespace"},
              {"n_items", r.n_items},
              {"n_failed", r.n_failed},
              {"confusion", confusion},
              {"per_emotion_hit", r.per_emotion_hit}};
}

std::string render_table(std::span<const EvalReport> reports) {
  std::vector<std::array<std::string, 4>> rows{{"Model", "HIT", "Dist-1", "Dist-2"}};
  for (const auto& r : reports) {
    rows.push_back({r.label, fixed(r.hit_percent, 1), fixed(r.dist1, 3),
                    fixed(r.dist2, 3)});
  }
  std::array<std::size_t, 4> width{};
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : rows) {
    std::string line = row[0] + std::string(width[0] - row[0].size(), ' ');
    for (std::size_t c = 1; c < 4; ++c) {
      line += "  " + std::string(width[c] - row[c].size(), ' ') + row[c];
    }
    out += line + "\n";
  }
  if (!reports.empty()) {
    out += "(Dist-n level: " + std::string(to_string(reports.front().level)) + ")\n";
  }
  return out;
}

std::vector<EvalRecord> records_from_batch(std::span<const BatchItem> items) {
  std::vector<EvalRecord> out;
  for (const auto& item : items) {
    if (!item.gold) continue;
    EvalRecord r{*item.gold, std::nullopt, {}};
    if (item.result) {
      r.predicted = item.result->predicted_emotion;
      r.response_text = item.result->response_text;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace merg
