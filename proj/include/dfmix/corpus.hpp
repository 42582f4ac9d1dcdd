#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfmix/common.hpp"

namespace dfmix {

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

struct TokenizerConfig {
  bool lowercase = true;
  bool strip_punctuation = true;
};

namespace detail {
inline bool is_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}
}  // namespace detail

/// Lowercases (ASCII), splits on whitespace, and strips punctuation from
/// token boundaries. Intra-word punctuation ("can't", "u.s") survives;
/// tokens that are punctuation-only disappear. Non-ASCII bytes pass
/// through untouched.
inline std::vector<std::string> tokenize(const std::string& raw,
                                         const TokenizerConfig& config = {}) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = raw.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    std::size_t start = i;
    while (i < n && !std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    if (i == start) continue;
    std::size_t lo = start, hi = i;
    if (config.strip_punctuation) {
      while (lo < hi && detail::is_punct(raw[lo])) ++lo;
      while (hi > lo && detail::is_punct(raw[hi - 1])) --hi;
    }
    if (lo == hi) continue;
    std::string tok = raw.substr(lo, hi - lo);
    if (config.lowercase) {
      for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    out.push_back(std::move(tok));
  }
  return out;
}

/// Order-preserving stop-word removal.
inline std::vector<std::string> strip_stopwords(
    const std::vector<std::string>& tokens, const std::set<std::string>& stopwords) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (!stopwords.count(t)) out.push_back(t);
  }
  return out;
}

/// Stop-word file: one token per line, '#' starts a comment, blank lines
/// ignored.
inline std::set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stop-word file: " + path);
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string w;
    while (ss >> w) words.insert(w);
  }
  return words;
}

// ---------------------------------------------------------------------------
// Corpora and vocabulary
// ---------------------------------------------------------------------------

struct CorpusId {
  int index = -1;
  std::string name;
};

/// One dialogue turn. Tokens are vocabulary ids; out-of-vocabulary words
/// were mapped to the unknown id at load time.
struct ContextResponsePair {
  std::vector<int> context;
  std::vector<int> response;
  int corpus = -1;
};

/// Token <-> id bijection with the four reserved slots at the front.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kSosToken = "<s>";
  static constexpr const char* kEosToken = "</s>";

  Vocabulary() {
    for (const char* t : {kPadToken, kUnkToken, kSosToken, kEosToken}) add(t);
  }

  int add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  /// Lookup that never fails: unseen tokens resolve to the unknown id.
  int id_or_unk(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  std::optional<int> id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size()))
      throw ValidationError("vocabulary id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_reserved(int id) { return id >= 0 && id <= kEos; }

  /// Content hash used to detect artifacts built against a different
  /// vocabulary.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : tokens_) h = fnv1a(t + "\n", h);
    return to_hex(h);
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Immutable once built; shareable across threads.
struct CorpusRegistry {
  std::vector<CorpusId> corpora;
  std::vector<std::size_t> pair_counts;  // parallel to corpora
  Vocabulary vocab;
  TokenizerConfig tokenizer;
  std::uint64_t seed = 0;

  int corpus_index(const std::string& name) const {
    for (const auto& c : corpora) {
      if (c.name == name) return c.index;
    }
    throw ValidationError("unknown corpus: " + name);
  }

  CorpusId add_corpus(const std::string& name) {
    for (const auto& c : corpora) {
      if (c.name == name) throw ValidationError("duplicate corpus name: " + name);
    }
    CorpusId id{static_cast<int>(corpora.size()), name};
    corpora.push_back(id);
    pair_counts.push_back(0);
    return id;
  }

  std::vector<int> to_ids(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.id_or_unk(t));
    return ids;
  }

  std::vector<std::string> to_tokens(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(vocab.token(id));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Pair files: one JSON object per line, keys "context", "response",
// optional "corpus".
// ---------------------------------------------------------------------------

struct LoadResult {
  std::vector<ContextResponsePair> pairs;
  std::size_t skipped = 0;
};

/// Reads a pair file, tokenizing with the registry's config and mapping
/// out-of-vocabulary words to the unknown token. Lines that are not valid
/// JSON objects, lack the required keys, or tokenize to an empty context
/// or response are counted and skipped. A file with zero usable lines is
/// an error.
inline LoadResult load_pairs(const std::string& path, const CorpusId& corpus,
                             const CorpusRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pair file: " + path);
  LoadResult result;
  std::string line;
  while (std::getline(in, line)) {
    auto reject = [&result]() { ++result.skipped; };
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      reject();
      continue;
    }
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("context") || !j.contains("response") ||
        !j["context"].is_string() || !j["response"].is_string()) {
      reject();
      continue;
    }
    auto ctx = tokenize(j["context"].get<std::string>(), registry.tokenizer);
    auto rsp = tokenize(j["response"].get<std::string>(), registry.tokenizer);
    if (ctx.empty() || rsp.empty()) {
      reject();
      continue;
    }
    ContextResponsePair pair;
    pair.context = registry.to_ids(ctx);
    pair.response = registry.to_ids(rsp);
    pair.corpus = corpus.index;
    result.pairs.push_back(std::move(pair));
  }
  if (result.pairs.empty())
    throw ValidationError("empty corpus: no valid pairs in " + path);
  return result;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

/// Writes pairs back out in the pair-file format. Loading the result
/// reproduces the same token sequences.
inline void save_pairs(const std::string& path,
                       const std::vector<ContextResponsePair>& pairs,
                       const CorpusRegistry& registry) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pair file: " + path);
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["context"] = join_tokens(registry.to_tokens(p.context));
    j["response"] = join_tokens(registry.to_tokens(p.response));
    j["corpus"] = registry.corpora[static_cast<std::size_t>(p.corpus)].name;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing pair file: " + path);
}

// ---------------------------------------------------------------------------
// Synthetic multi-domain corpora
// ---------------------------------------------------------------------------

/// Recipe for a reproducible multi-domain fixture. Every domain owns a set
/// of exclusive keywords; all domains share the function-word pool.
/// Responses mix the two at keyword_ratio; every context carries at least
/// one domain keyword so domains stay classifiable. The first two keyword
/// slots of a response echo the context's keyword, the way replies reuse
/// the words they answer, which leaves part of every response predictable.
struct SynthesisSpec {
  struct Domain {
    std::string name;
    std::vector<std::string> keywords;
  };
  std::vector<Domain> domains;
  std::vector<std::string> shared_words;
  std::size_t pairs_per_domain = 0;
  double keyword_ratio = 0.5;
  std::size_t min_response_len = 4;
  std::size_t max_response_len = 8;
  std::size_t min_context_len = 3;
  std::size_t max_context_len = 6;
  std::uint64_t seed = 0;

  /// Default fixture: `num_domains` domains with eight exclusive keywords
  /// each, over a pool of forty function words drawn with Zipf weights.
  /// Individually, the top function words are far likelier than any single
  /// keyword, while the keywords carry the domain identity.
  static SynthesisSpec standard(std::size_t num_domains, std::size_t pairs,
                                std::uint64_t seed) {
    SynthesisSpec spec;
    spec.seed = seed;
    spec.pairs_per_domain = pairs;
    static const char* kShared[] = {
        "the",  "a",    "to",   "is",   "i",    "you",  "it",   "and",
        "of",   "we",   "that", "on",   "in",   "for",  "my",   "me",
        "do",   "so",   "at",   "with", "are",  "be",   "have", "was",
        "not",  "this", "but",  "they", "he",   "she",  "or",   "as",
        "what", "all",  "can",  "will", "just", "like", "know", "good"};
    spec.shared_words.assign(std::begin(kShared), std::end(kShared));
    static const char* kThemes[] = {"river",  "engine", "garden", "castle",
                                    "market", "forest", "harbor", "temple"};
    for (std::size_t d = 0; d < num_domains; ++d) {
      Domain dom;
      const char* theme = kThemes[d % std::size(kThemes)];
      dom.name = std::string(theme) + (d < std::size(kThemes) ? "" : std::to_string(d));
      for (int k = 0; k < 8; ++k)
        dom.keywords.push_back(dom.name + "_" + std::to_string(k));
      spec.domains.push_back(std::move(dom));
    }
    return spec;
  }
};

struct RawPair {
  std::vector<std::string> context;
  std::vector<std::string> response;
};

/// Deterministic under `spec.seed`; each domain draws from its own derived
/// stream, so generation order is independent across domains.
inline std::vector<std::vector<RawPair>> synthesize_corpora(const SynthesisSpec& spec) {
  if (spec.pairs_per_domain == 0)
    throw ValidationError("synthesis: pair count must be >= 1");
  if (spec.keyword_ratio < 0.0 || spec.keyword_ratio > 1.0)
    throw ValidationError("synthesis: keyword ratio must lie in [0, 1]");
  std::set<std::string> seen;
  for (const auto& d : spec.domains) {
    if (d.keywords.empty())
      throw ValidationError("synthesis: domain '" + d.name + "' has no keywords");
    for (const auto& k : d.keywords) {
      if (!seen.insert(k).second)
        throw ValidationError("synthesis: keyword '" + k +
                              "' appears in two exclusive sets");
    }
  }
  if (spec.shared_words.empty())
    throw ValidationError("synthesis: shared word pool is empty");
  if (spec.min_response_len == 0 || spec.min_response_len > spec.max_response_len ||
      spec.min_context_len == 0 || spec.min_context_len > spec.max_context_len)
    throw ValidationError("synthesis: bad length range");

  // Function words follow a Zipf profile over the shared pool.
  std::vector<double> shared_cdf(spec.shared_words.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < shared_cdf.size(); ++i) {
    mass += 1.0 / static_cast<double>(i + 1);
    shared_cdf[i] = mass;
  }

  std::vector<std::vector<RawPair>> corpora;
  for (std::size_t d = 0; d < spec.domains.size(); ++d) {
    const auto& dom = spec.domains[d];
    Rng rng(derive_seed(spec.seed, d));
    std::vector<RawPair> pairs;
    pairs.reserve(spec.pairs_per_domain);
    auto keyword = [&]() { return dom.keywords[rng.below(dom.keywords.size())]; };
    auto shared = [&]() {
      const double u = rng.uniform(0.0, mass);
      const auto it = std::lower_bound(shared_cdf.begin(), shared_cdf.end(), u);
      return spec.shared_words[static_cast<std::size_t>(it - shared_cdf.begin())];
    };
    for (std::size_t p = 0; p < spec.pairs_per_domain; ++p) {
      RawPair pair;
      std::size_t clen = spec.min_context_len +
                         rng.below(spec.max_context_len - spec.min_context_len + 1);
      const std::string topic = keyword();
      pair.context.push_back(topic);  // guarantees classifiability
      while (pair.context.size() < clen) pair.context.push_back(shared());
      rng.shuffle(pair.context);

      std::size_t rlen = spec.min_response_len +
                         rng.below(spec.max_response_len - spec.min_response_len + 1);
      // Exact keyword allocation: round(ratio * len) keyword slots, the
      // first two of which echo the context's keyword at fixed positions.
      auto nkey = static_cast<std::size_t>(spec.keyword_ratio * static_cast<double>(rlen) + 0.5);
      const std::size_t echoes = std::min<std::size_t>(nkey, 2);
      std::vector<std::string> tail;
      for (std::size_t t = echoes; t < rlen; ++t)
        tail.push_back(t < nkey ? keyword() : shared());
      rng.shuffle(tail);
      pair.response.assign(echoes, topic);
      pair.response.insert(pair.response.end(), tail.begin(), tail.end());
      pairs.push_back(std::move(pair));
    }
    corpora.push_back(std::move(pairs));
  }
  return corpora;
}

// ---------------------------------------------------------------------------
// Registry serialization
// ---------------------------------------------------------------------------

struct RegistryFileEntry {
  std::string name;
  std::string train_file;
  std::string test_file;
  std::size_t train_pairs = 0;
  std::size_t test_pairs = 0;
};

/// On-disk registry: vocabulary, tokenizer config, corpus roster, and the
/// file layout the other subcommands consume.
struct RegistryFile {
  CorpusRegistry registry;
  std::vector<RegistryFileEntry> entries;

  void save(const std::string& path) const {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["seed"] = registry.seed;
    j["vocab_hash"] = registry.vocab.hash();
    j["tokenizer"] = {{"lowercase", registry.tokenizer.lowercase},
                      {"strip_punctuation", registry.tokenizer.strip_punctuation}};
    j["vocab"] = registry.vocab.tokens();
    nlohmann::json corpora = nlohmann::json::array();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      corpora.push_back({{"name", e.name},
                         {"train_file", e.train_file},
                         {"test_file", e.test_file},
                         {"train_pairs", e.train_pairs},
                         {"test_pairs", e.test_pairs}});
    }
    j["corpora"] = corpora;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write registry: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing registry: " + path);
  }

  static RegistryFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open registry: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ValidationError("registry is not valid JSON: " + path);
    if (j.value("format_version", 0u) != kFormatVersion)
      throw ValidationError("registry format version mismatch: " + path);
    RegistryFile rf;
    rf.registry.seed = j.value("seed", 0ull);
    rf.registry.tokenizer.lowercase = j["tokenizer"].value("lowercase", true);
    rf.registry.tokenizer.strip_punctuation =
        j["tokenizer"].value("strip_punctuation", true);
    const auto& vocab = j["vocab"];
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      const auto tok = vocab[i].get<std::string>();
      if (i < 4) {
        // Reserved slots are fixed; reject files that disagree.
        static const char* expect[] = {Vocabulary::kPadToken, Vocabulary::kUnkToken,
                                       Vocabulary::kSosToken, Vocabulary::kEosToken};
        if (tok != expect[i])
          throw ValidationError("registry reserved tokens corrupted: " + path);
      } else {
        rf.registry.vocab.add(tok);
      }
    }
    std::string stored_hash = j.value("vocab_hash", "");
    if (!stored_hash.empty() && stored_hash != rf.registry.vocab.hash())
      throw ValidationError("registry vocabulary hash mismatch: " + path);
    for (const auto& c : j["corpora"]) {
      RegistryFileEntry e;
      e.name = c["name"].get<std::string>();
      e.train_file = c.value("train_file", "");
      e.test_file = c.value("test_file", "");
      e.train_pairs = c.value("train_pairs", 0u);
      e.test_pairs = c.value("test_pairs", 0u);
      auto id = rf.registry.add_corpus(e.name);
      rf.registry.pair_counts[static_cast<std::size_t>(id.index)] = e.train_pairs;
      rf.entries.push_back(std::move(e));
    }
    return rf;
  }
};

}  // namespace dfmix
