#include "oracles.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace oracle {

std::vector<std::string> words(const std::string& text) {
  std::string cleaned;
  for (char c : text) {
    const bool punct = (c >= '!' && c <= '/') || (c >= ':' && c <= '@') ||
                       (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
    if (punct) continue;
    cleaned += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
  }
  std::istringstream in(cleaned);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

namespace {

std::vector<std::string> grams(const std::vector<std::string>& toks, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (std::size_t j = i; j < i + n; ++j) key += toks[j] + '\x1f';
    out.push_back(key);
  }
  return out;
}

}  // namespace

double distinct_n(const std::vector<std::string>& responses, std::size_t n,
                  bool corpus) {
  if (corpus) {
    std::unordered_set<std::string> seen;
    std::size_t total = 0;
    for (const auto& r : responses) {
      for (auto& g : grams(words(r), n)) {
        seen.insert(g);
        ++total;
      }
    }
    return static_cast<double>(seen.size()) / static_cast<double>(total);
  }
  double sum = 0;
  std::size_t used = 0;
  for (const auto& r : responses) {
    const auto g = grams(words(r), n);
    if (g.empty()) continue;
    const std::unordered_set<std::string> uniq(g.begin(), g.end());
    sum += static_cast<double>(uniq.size()) / static_cast<double>(g.size());
    ++used;
  }
  return sum / static_cast<double>(used);
}

VoteOutcome count_sort_vote(const std::vector<Vote>& votes,
                            const std::vector<std::string>& emoset) {
  std::vector<std::pair<std::size_t, std::size_t>> counts;  // (count, position)
  for (std::size_t p = 0; p < emoset.size(); ++p) {
    std::size_t c = 0;
    for (const auto& v : votes) c += v.label == emoset[p];
    counts.emplace_back(c, p);
  }
  std::sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  VoteOutcome out{emoset[counts.front().second], {}, SIZE_MAX};
  for (const auto& v : votes) {
    if (v.label == out.winner && v.backend_index < out.backend_index) {
      out.backend_index = v.backend_index;
      out.response = v.response;
    }
  }
  return out;
}

double hit_percent(const std::vector<std::pair<std::string, std::optional<std::string>>>&
                       gold_predicted) {
  std::size_t hits = 0;
  for (const auto& [g, p] : gold_predicted) hits += p.has_value() && *p == g;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gold_predicted.size());
}

}  // namespace oracle
