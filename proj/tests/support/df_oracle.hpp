#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace testsupport {

/// Brute-force word-importance oracle, written as plain nested loops over
/// count maps. Intentionally shares no code with the library path.
struct OracleValues {
  double f = 0.0;
  double df = 0.0;
  double DF = 0.0;
};

using CountMap = std::map<std::string, std::size_t>;

inline std::vector<std::map<std::string, OracleValues>> oracle_df(
    const std::vector<CountMap>& corpora) {
  const std::size_t num = corpora.size();

  std::vector<double> totals(num, 0.0);
  for (std::size_t d = 0; d < num; ++d)
    for (const auto& [w, c] : corpora[d]) totals[d] += static_cast<double>(c);

  std::set<std::string> all_words;
  for (const auto& corpus : corpora)
    for (const auto& [w, c] : corpus) all_words.insert(w);

  auto freq = [&](const std::string& w, std::size_t d) {
    auto it = corpora[d].find(w);
    if (it == corpora[d].end()) return 0.0;
    return static_cast<double>(it->second) / totals[d];
  };

  std::vector<double> min_freq(num, 0.0);
  for (std::size_t d = 0; d < num; ++d) {
    double lowest = 2.0;
    for (const auto& [w, c] : corpora[d])
      lowest = std::min(lowest, freq(w, d));
    min_freq[d] = lowest;
  }

  std::vector<std::map<std::string, OracleValues>> out(num);
  for (const auto& w : all_words) {
    double sum_f = 0.0;
    for (std::size_t d = 0; d < num; ++d) {
      double f = freq(w, d) - min_freq[d];
      if (f < 0.0) f = 0.0;
      out[d][w].f = f;
      sum_f += f;
    }
    for (std::size_t d = 0; d < num; ++d) {
      const double f = out[d][w].f;
      out[d][w].df = f == 0.0 ? 0.0 : f / sum_f;
    }
  }
  for (std::size_t d = 0; d < num; ++d) {
    double peak = 0.0;
    for (const auto& [w, v] : out[d]) peak = std::max(peak, v.df);
    if (peak > 0.0)
      for (auto& [w, v] : out[d]) v.DF = v.df / peak;
  }
  return out;
}

}  // namespace testsupport
