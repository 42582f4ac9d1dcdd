#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfmix/common.hpp"
#include "dfmix/corpus.hpp"

namespace dfmix {

// ---------------------------------------------------------------------------
// Per-corpus relative word frequencies
// ---------------------------------------------------------------------------

/// Relative frequencies over one corpus, counted on context and response
/// tokens alike. Reserved tokens (padding, unknown, start, end) are not
/// words and never enter the table.
struct FreqTable {
  CorpusId corpus;
  std::map<std::string, double> freq;        // word -> count / total
  std::map<std::string, std::size_t> counts; // raw counts, kept for TF-IDF
  double min_freq = 0.0;                     // min over words present here
  std::size_t total_tokens = 0;
};

inline FreqTable build_freq(const std::vector<ContextResponsePair>& pairs,
                            const CorpusRegistry& registry, const CorpusId& corpus) {
  if (pairs.empty())
    throw ValidationError("build_freq: empty corpus '" + corpus.name + "'");
  FreqTable table;
  table.corpus = corpus;
  auto count_side = [&](const std::vector<int>& tokens) {
    for (int id : tokens) {
      if (Vocabulary::is_reserved(id)) continue;
      ++table.counts[registry.vocab.token(id)];
      ++table.total_tokens;
    }
  };
  for (const auto& p : pairs) {
    count_side(p.context);
    count_side(p.response);
  }
  if (table.total_tokens == 0)
    throw ValidationError("build_freq: corpus '" + corpus.name +
                          "' has no countable tokens");
  table.min_freq = 1.0;
  for (const auto& [word, count] : table.counts) {
    double f = static_cast<double>(count) / static_cast<double>(table.total_tokens);
    table.freq[word] = f;
    table.min_freq = std::min(table.min_freq, f);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Domain-specific frequency
// ---------------------------------------------------------------------------

/// Word-importance weights per corpus, with the intermediate stages kept
/// for inspection. Rows are the union vocabulary (sorted), columns the
/// corpora in index order.
///
/// Per word w and corpus d, with freq(w)_d = 0 when w is absent from d:
///   f(w)_d  = max(0, freq(w)_d - min_freq_d)
///   df(w)_d = 0 when f(w)_d = 0, else f(w)_d / sum over corpora of f(w)
///   DF(w)_d = df(w)_d / max over words of df(v)_d   (0 when the max is 0)
struct DfTable {
  std::vector<std::string> words;       // sorted
  std::vector<std::string> corpora;     // by corpus index
  Eigen::MatrixXd f;                    // |words| x |corpora|
  Eigen::MatrixXd df;
  Eigen::MatrixXd DF;

  int word_row(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? -1 : it->second;
  }

  /// DF(w)_d, zero for words outside the table.
  double df_weight(const std::string& w, int corpus) const {
    int r = word_row(w);
    return r < 0 ? 0.0 : DF(r, corpus);
  }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < words.size(); ++i)
      index_.emplace(words[i], static_cast<int>(i));
  }

 private:
  std::unordered_map<std::string, int> index_;
};

inline DfTable compute_df(const std::vector<FreqTable>& tables) {
  if (tables.size() < 2)
    throw ValidationError("compute_df: need at least 2 corpora");
  const auto ncorp = static_cast<Eigen::Index>(tables.size());
  std::vector<bool> seen(tables.size(), false);
  for (const auto& t : tables) {
    int c = t.corpus.index;
    if (c < 0 || c >= static_cast<int>(tables.size()) || seen[static_cast<std::size_t>(c)])
      throw ValidationError("compute_df: corpus indices must be dense and distinct");
    seen[static_cast<std::size_t>(c)] = true;
  }

  DfTable out;
  std::set<std::string> vocab;
  out.corpora.resize(tables.size());
  for (const auto& t : tables) {
    out.corpora[static_cast<std::size_t>(t.corpus.index)] = t.corpus.name;
    for (const auto& [word, _] : t.freq) vocab.insert(word);
  }
  out.words.assign(vocab.begin(), vocab.end());
  out.rebuild_index();

  const auto nwords = static_cast<Eigen::Index>(out.words.size());
  out.f = Eigen::MatrixXd::Zero(nwords, ncorp);
  out.df = Eigen::MatrixXd::Zero(nwords, ncorp);
  out.DF = Eigen::MatrixXd::Zero(nwords, ncorp);

  for (const auto& t : tables) {
    const auto c = static_cast<Eigen::Index>(t.corpus.index);
    for (const auto& [word, freq] : t.freq) {
      const auto r = static_cast<Eigen::Index>(out.word_row(word));
      out.f(r, c) = std::max(0.0, freq - t.min_freq);
    }
  }
  for (Eigen::Index r = 0; r < nwords; ++r) {
    const double total = out.f.row(r).sum();
    if (total <= 0.0) continue;
    for (Eigen::Index c = 0; c < ncorp; ++c)
      if (out.f(r, c) != 0.0) out.df(r, c) = out.f(r, c) / total;
  }
  for (Eigen::Index c = 0; c < ncorp; ++c) {
    const double peak = out.df.col(c).maxCoeff();
    if (peak > 0.0) out.DF.col(c) = out.df.col(c) / peak;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exponentially rescaled DF
// ---------------------------------------------------------------------------

/// alpha^DF with the zero branch preserved; values land in {0} u (1, alpha].
struct AlphaDfTable {
  double alpha = 100.0;
  std::vector<std::string> words;
  std::vector<std::string> corpora;
  Eigen::MatrixXd scores;

  int word_row(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? -1 : it->second;
  }

  double score(const std::string& w, int corpus) const {
    int r = word_row(w);
    return r < 0 ? 0.0 : scores(r, corpus);
  }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < words.size(); ++i)
      index_.emplace(words[i], static_cast<int>(i));
  }

 private:
  std::unordered_map<std::string, int> index_;
};

inline AlphaDfTable compute_alpha_df(const DfTable& df, double alpha = 100.0) {
  if (!(alpha > 1.0))
    throw ValidationError("compute_alpha_df: alpha must be > 1");
  AlphaDfTable out;
  out.alpha = alpha;
  out.words = df.words;
  out.corpora = df.corpora;
  out.rebuild_index();
  out.scores = Eigen::MatrixXd::Zero(df.DF.rows(), df.DF.cols());
  for (Eigen::Index r = 0; r < df.DF.rows(); ++r)
    for (Eigen::Index c = 0; c < df.DF.cols(); ++c)
      if (df.DF(r, c) != 0.0) out.scores(r, c) = std::pow(alpha, df.DF(r, c));
  return out;
}

// ---------------------------------------------------------------------------
// TF-IDF comparison table
// ---------------------------------------------------------------------------

/// Log-normalized TF-IDF, scaled per corpus so the top word reads 100%.
/// tf = 1 + ln(count) for positive counts; idf = ln(|D| / corpora containing
/// the word), so words present everywhere score zero.
inline std::vector<std::map<std::string, double>> compute_tfidf(
    const std::vector<FreqTable>& tables) {
  if (tables.size() < 2)
    throw ValidationError("compute_tfidf: need at least 2 corpora");
  std::map<std::string, int> containing;
  for (const auto& t : tables)
    for (const auto& [word, _] : t.counts) ++containing[word];

  const double num_corpora = static_cast<double>(tables.size());
  std::vector<std::map<std::string, double>> out(tables.size());
  for (const auto& t : tables) {
    auto& scores = out[static_cast<std::size_t>(t.corpus.index)];
    double peak = 0.0;
    for (const auto& [word, count] : t.counts) {
      const double tf = 1.0 + std::log(static_cast<double>(count));
      const double idf = std::log(num_corpora / containing[word]);
      scores[word] = tf * idf;
      peak = std::max(peak, scores[word]);
    }
    if (peak > 0.0)
      for (auto& [_, s] : scores) s = 100.0 * s / peak;
  }
  return out;
}

/// DF weights arranged by vocabulary id, one column per corpus, for the
/// weighted trainer. Reserved ids and words outside the table weigh 0.
inline Eigen::MatrixXd df_weight_matrix(const DfTable& df, const Vocabulary& vocab) {
  Eigen::MatrixXd weights =
      Eigen::MatrixXd::Zero(vocab.size(), static_cast<Eigen::Index>(df.corpora.size()));
  for (int id = 0; id < vocab.size(); ++id) {
    if (Vocabulary::is_reserved(id)) continue;
    const int row = df.word_row(vocab.token(id));
    if (row >= 0) weights.row(id) = df.DF.row(row);
  }
  return weights;
}

// ---------------------------------------------------------------------------
// DF table file: '#'-prefixed metadata, a header row, then one row per
// (word, corpus) sorted by corpus, descending DF, then word.
// ---------------------------------------------------------------------------

struct DfTableFile {
  DfTable df;
  AlphaDfTable alpha_df;
  std::string vocab_hash;
  std::uint64_t seed = 0;
};

inline void save_df_table(const std::string& path, const DfTable& df,
                          const AlphaDfTable& alpha_df, const std::string& vocab_hash,
                          std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write DF table: " + path);
  out << "# format_version " << kFormatVersion << '\n';
  out << "# seed " << seed << '\n';
  out << "# vocab_hash " << vocab_hash << '\n';
  out << "# alpha " << format_g12(alpha_df.alpha) << '\n';
  out << "word\tcorpus\tf\tdf\tDF\talphaDF\n";

  struct Row {
    Eigen::Index word, corpus;
    double df_quantized;
  };
  std::vector<Row> rows;
  rows.reserve(static_cast<std::size_t>(df.DF.size()));
  for (Eigen::Index c = 0; c < df.DF.cols(); ++c)
    for (Eigen::Index r = 0; r < df.DF.rows(); ++r)
      // Sort on the rendered value so a parsed-and-resaved table keeps
      // byte-identical row order.
      rows.push_back({r, c, std::stod(format_g12(df.DF(r, c)))});
  std::stable_sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
    if (a.corpus != b.corpus) return a.corpus < b.corpus;
    if (a.df_quantized != b.df_quantized) return a.df_quantized > b.df_quantized;
    return df.words[static_cast<std::size_t>(a.word)] <
           df.words[static_cast<std::size_t>(b.word)];
  });
  for (const auto& row : rows) {
    out << df.words[static_cast<std::size_t>(row.word)] << '\t'
        << df.corpora[static_cast<std::size_t>(row.corpus)] << '\t'
        << format_g12(df.f(row.word, row.corpus)) << '\t'
        << format_g12(df.df(row.word, row.corpus)) << '\t'
        << format_g12(df.DF(row.word, row.corpus)) << '\t'
        << format_g12(alpha_df.scores(row.word, row.corpus)) << '\n';
  }
  if (!out) throw IoError("failed writing DF table: " + path);
}

inline DfTableFile load_df_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open DF table: " + path);
  DfTableFile file;
  file.alpha_df.alpha = 0.0;
  std::string line;
  bool header_seen = false;
  struct Entry {
    std::string word, corpus;
    double f, df, DF, alphaDF;
  };
  std::vector<Entry> entries;
  std::set<std::string> words;
  std::vector<std::string> corpora;  // in first-seen order = index order
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string key;
      ss >> key;
      if (key == "seed") ss >> file.seed;
      else if (key == "vocab_hash") ss >> file.vocab_hash;
      else if (key == "alpha") ss >> file.alpha_df.alpha;
      continue;
    }
    if (!header_seen) {
      header_seen = true;  // column header row
      continue;
    }
    std::istringstream ss(line);
    Entry e;
    if (!(ss >> e.word >> e.corpus >> e.f >> e.df >> e.DF >> e.alphaDF))
      throw ValidationError("DF table has a malformed row: " + path);
    if (corpora.empty() || corpora.back() != e.corpus) {
      if (std::find(corpora.begin(), corpora.end(), e.corpus) != corpora.end())
        throw ValidationError("DF table rows are not grouped by corpus: " + path);
      corpora.push_back(e.corpus);
    }
    words.insert(e.word);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw ValidationError("DF table is empty: " + path);

  file.df.words.assign(words.begin(), words.end());
  file.df.corpora = corpora;
  file.df.rebuild_index();
  const auto nwords = static_cast<Eigen::Index>(file.df.words.size());
  const auto ncorp = static_cast<Eigen::Index>(corpora.size());
  file.df.f = Eigen::MatrixXd::Zero(nwords, ncorp);
  file.df.df = Eigen::MatrixXd::Zero(nwords, ncorp);
  file.df.DF = Eigen::MatrixXd::Zero(nwords, ncorp);
  file.alpha_df.words = file.df.words;
  file.alpha_df.corpora = corpora;
  file.alpha_df.rebuild_index();
  file.alpha_df.scores = Eigen::MatrixXd::Zero(nwords, ncorp);
  std::map<std::string, Eigen::Index> corpus_col;
  for (std::size_t i = 0; i < corpora.size(); ++i)
    corpus_col[corpora[i]] = static_cast<Eigen::Index>(i);
  for (const auto& e : entries) {
    const auto r = static_cast<Eigen::Index>(file.df.word_row(e.word));
    const auto c = corpus_col[e.corpus];
    file.df.f(r, c) = e.f;
    file.df.df(r, c) = e.df;
    file.df.DF(r, c) = e.DF;
    file.alpha_df.scores(r, c) = e.alphaDF;
  }
  return file;
}

}  // namespace dfmix
