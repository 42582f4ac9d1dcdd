#pragma once

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dfmix/common.hpp"

namespace dfmix {

enum class MixMode { kConcatenated, kInterleaved };

inline const char* to_string(MixMode m) {
  return m == MixMode::kConcatenated ? "concatenated" : "interleaved";
}

/// A training order over corpora, as (corpus index, pair index) references.
struct MixedDataset {
  struct Ref {
    int corpus;
    std::size_t pair;
    bool operator==(const Ref&) const = default;
  };
  std::vector<Ref> order;
  MixMode mode = MixMode::kConcatenated;
  std::uint64_t seed = 0;
};

/// All pairs of the first corpus in `corpus_order`, then the second, etc.
inline MixedDataset concatenate(const std::vector<std::size_t>& corpus_sizes,
                                const std::vector<int>& corpus_order) {
  if (corpus_sizes.empty()) throw ValidationError("concatenate: no corpora");
  if (corpus_order.size() != corpus_sizes.size())
    throw ValidationError("concatenate: order must list every corpus exactly once");
  std::vector<bool> seen(corpus_sizes.size(), false);
  MixedDataset ds;
  ds.mode = MixMode::kConcatenated;
  for (int c : corpus_order) {
    if (c < 0 || static_cast<std::size_t>(c) >= corpus_sizes.size() || seen[static_cast<std::size_t>(c)])
      throw ValidationError("concatenate: bad corpus order");
    seen[static_cast<std::size_t>(c)] = true;
    for (std::size_t p = 0; p < corpus_sizes[static_cast<std::size_t>(c)]; ++p)
      ds.order.push_back({c, p});
  }
  return ds;
}

inline MixedDataset concatenate(const std::vector<std::size_t>& corpus_sizes) {
  std::vector<int> order;
  for (std::size_t i = 0; i < corpus_sizes.size(); ++i) order.push_back(static_cast<int>(i));
  return concatenate(corpus_sizes, order);
}

/// Rounds of one pair per corpus, each round shuffled with the seeded RNG.
/// Rounds are emitted in order, so pair k of every corpus lands in round k.
/// By default corpora are truncated to the shortest; with `cycle`, shorter
/// corpora wrap around until the longest is exhausted.
inline MixedDataset interleave(const std::vector<std::size_t>& corpus_sizes,
                               std::uint64_t seed, bool cycle = false) {
  if (corpus_sizes.size() < 2)
    throw ValidationError("interleave: need at least 2 corpora");
  std::size_t shortest = corpus_sizes[0], longest = corpus_sizes[0];
  for (std::size_t s : corpus_sizes) {
    if (s == 0) throw ValidationError("interleave: empty corpus");
    shortest = std::min(shortest, s);
    longest = std::max(longest, s);
  }
  const std::size_t rounds = cycle ? longest : shortest;
  Rng rng(seed);
  MixedDataset ds;
  ds.mode = MixMode::kInterleaved;
  ds.seed = seed;
  std::vector<MixedDataset::Ref> round(corpus_sizes.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t c = 0; c < corpus_sizes.size(); ++c)
      round[c] = {static_cast<int>(c), r % corpus_sizes[c]};
    rng.shuffle(round);
    ds.order.insert(ds.order.end(), round.begin(), round.end());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Order-file serialization: '#'-prefixed metadata, then one
// corpus_index<TAB>pair_index line per entry.
// ---------------------------------------------------------------------------

inline void save_order(const std::string& path, const MixedDataset& ds,
                       const std::string& vocab_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write order file: " + path);
  out << "# format_version " << kFormatVersion << '\n';
  out << "# mode " << to_string(ds.mode) << '\n';
  out << "# seed " << ds.seed << '\n';
  out << "# vocab_hash " << vocab_hash << '\n';
  for (const auto& ref : ds.order) out << ref.corpus << '\t' << ref.pair << '\n';
  if (!out) throw IoError("failed writing order file: " + path);
}

struct OrderFile {
  MixedDataset dataset;
  std::string vocab_hash;
};

inline OrderFile load_order(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open order file: " + path);
  OrderFile of;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string key;
      ss >> key;
      if (key == "mode") {
        std::string v;
        ss >> v;
        of.dataset.mode = v == "interleaved" ? MixMode::kInterleaved : MixMode::kConcatenated;
      } else if (key == "seed") {
        ss >> of.dataset.seed;
      } else if (key == "vocab_hash") {
        ss >> of.vocab_hash;
      }
      continue;
    }
    std::istringstream ss(line);
    MixedDataset::Ref ref{};
    if (!(ss >> ref.corpus >> ref.pair))
      throw ValidationError("order file has a malformed line: " + path);
    of.dataset.order.push_back(ref);
  }
  return of;
}

}  // namespace dfmix
