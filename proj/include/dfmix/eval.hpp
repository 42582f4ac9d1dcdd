#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfmix/common.hpp"
#include "dfmix/corpus.hpp"
#include "dfmix/model.hpp"
#include "dfmix/stats.hpp"

namespace dfmix {

// ---------------------------------------------------------------------------
// ROUGE-1 after stop-word removal
// ---------------------------------------------------------------------------

struct RougeScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Unigram overlap with multiplicity clipping: a candidate token matches a
/// reference token at most count-in-reference times. Stop words and the
/// unknown token are removed first; a side that ends up empty scores zero.
inline RougeScores rouge1(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference,
                          const std::set<std::string>& stopwords) {
  auto filter = [&](const std::vector<std::string>& tokens) {
    std::unordered_map<std::string, int> counts;
    int total = 0;
    for (const auto& t : tokens) {
      if (stopwords.count(t) || t == Vocabulary::kUnkToken) continue;
      ++counts[t];
      ++total;
    }
    return std::pair(std::move(counts), total);
  };
  auto [cand, cand_total] = filter(candidate);
  auto [ref, ref_total] = filter(reference);
  if (cand_total == 0 || ref_total == 0) return {};

  int overlap = 0;
  for (const auto& [token, count] : cand) {
    auto it = ref.find(token);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  RougeScores s;
  s.precision = static_cast<double>(overlap) / cand_total;
  s.recall = static_cast<double>(overlap) / ref_total;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Corpus-relevance scoring
// ---------------------------------------------------------------------------

enum class AdfAveraging {
  kOccurrences,  // every token occurrence counts
  kUniqueWords,  // each distinct word counts once per response
};

/// Mean table score of the response tokens against scoring corpus d.
/// Words outside the table score 0. Stop words are not removed here; the
/// exponential rescaling already suppresses them.
inline double alpha_df_score(const std::vector<std::vector<std::string>>& responses,
                             const AlphaDfTable& table, int corpus,
                             AdfAveraging averaging = AdfAveraging::kOccurrences) {
  if (responses.empty()) throw ValidationError("alpha_df_score: empty response set");
  if (corpus < 0 || corpus >= static_cast<int>(table.corpora.size()))
    throw ValidationError("alpha_df_score: scoring corpus out of range");
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& response : responses) {
    if (averaging == AdfAveraging::kOccurrences) {
      for (const auto& w : response) {
        total += table.score(w, corpus);
        ++n;
      }
    } else {
      std::set<std::string> distinct(response.begin(), response.end());
      for (const auto& w : distinct) {
        total += table.score(w, corpus);
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

/// exp(mean per-token negative log-likelihood) of the reference responses,
/// end token included, natural log. Labels follow the generation contract:
/// labeled mode reads each pair's gold corpus, multitask predicts its own,
/// the rest run unlabeled.
template <class Cell>
double perplexity(const ModelParams<Cell>& params,
                  const std::vector<ContextResponsePair>& pairs, Method method) {
  if (pairs.empty()) throw ValidationError("perplexity: empty pair list");
  double total_nll = 0.0;
  std::size_t total_tokens = 0;
  for (const auto& pair : pairs) {
    const int gold = method == Method::kLabeled ? pair.corpus : -1;
    const auto trace = forward_pair(params, pair, method, gold);
    for (Eigen::Index t = 0; t < trace.logits.cols(); ++t) {
      const Eigen::VectorXd logits = trace.logits.col(t);
      total_nll += logsumexp(logits) - logits(trace.targets[static_cast<std::size_t>(t)]);
    }
    total_tokens += trace.targets.size();
  }
  if (!std::isfinite(total_nll))
    throw NumericError("perplexity: non-finite log-likelihood");
  return std::exp(total_nll / static_cast<double>(total_tokens));
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

struct CorpusEval {
  RougeScores rouge;
  double perplexity = 0.0;
  // scoring corpus name -> score, per DF provenance
  std::map<std::string, double> adf_train;
  std::map<std::string, double> adf_test;
};

struct MethodEval {
  std::string method;
  std::map<std::string, CorpusEval> per_corpus;  // test corpus name -> scores
};

struct EvalReport {
  std::uint64_t seed = 0;
  std::string vocab_hash;
  double alpha = 0.0;
  std::vector<std::string> test_corpora;     // row order within a method
  std::vector<std::string> scoring_corpora;  // column order
  std::vector<MethodEval> methods;           // row blocks
  // References scored against their own tables, one entry per
  // (test corpus, scoring corpus, provenance); the yardstick rows.
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> standard_adf;
};

/// Scores every method on every test corpus: ROUGE-1 of responses against
/// references, perplexity from the checkpoint, and the mean alpha-DF of the
/// responses against every scoring corpus under both DF provenances.
/// Everything is cross-checked against one vocabulary hash first.
template <class Cell>
EvalReport build_report(
    const CorpusRegistry& registry, const std::vector<std::string>& test_corpora,
    const std::map<std::string, std::vector<ContextResponsePair>>& test_pairs,
    const std::map<std::string, Checkpoint<Cell>>& models,
    const std::map<std::string, std::map<std::string, std::vector<std::vector<std::string>>>>&
        responses,
    const AlphaDfTable& adf_train, const AlphaDfTable& adf_test,
    const std::set<std::string>& stopwords, std::uint64_t seed,
    AdfAveraging averaging = AdfAveraging::kOccurrences) {
  EvalReport report;
  report.seed = seed;
  report.vocab_hash = registry.vocab.hash();
  report.alpha = adf_train.alpha;
  report.test_corpora = test_corpora;
  report.scoring_corpora = adf_train.corpora;
  if (adf_test.corpora != adf_train.corpora)
    throw ValidationError("build_report: train and test DF tables disagree on corpora");
  if (adf_test.alpha != adf_train.alpha)
    throw ValidationError("build_report: train and test DF tables disagree on alpha");

  for (const auto& [method_name, ck] : models) {
    if (ck.vocab_hash != report.vocab_hash)
      throw ValidationError("build_report: checkpoint '" + method_name +
                            "' was built against a different vocabulary");
    if (!responses.count(method_name))
      throw ValidationError("build_report: no responses for method " + method_name);
  }
  for (const auto& [method_name, _] : responses)
    if (!models.count(method_name))
      throw ValidationError("build_report: no checkpoint for method " + method_name);

  auto scoring_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < adf_train.corpora.size(); ++i)
      if (adf_train.corpora[i] == name) return static_cast<int>(i);
    throw ValidationError("build_report: corpus missing from DF tables: " + name);
  };

  // Standard scores: the references themselves.
  for (const auto& corpus : test_corpora) {
    auto it = test_pairs.find(corpus);
    if (it == test_pairs.end())
      throw ValidationError("build_report: missing test pairs for " + corpus);
    std::vector<std::vector<std::string>> refs;
    refs.reserve(it->second.size());
    for (const auto& pair : it->second) refs.push_back(registry.to_tokens(pair.response));
    for (const auto& scoring : report.scoring_corpora) {
      const int d = scoring_index(scoring);
      report.standard_adf[corpus][scoring]["train"] =
          alpha_df_score(refs, adf_train, d, averaging);
      report.standard_adf[corpus][scoring]["test"] =
          alpha_df_score(refs, adf_test, d, averaging);
    }
  }

  for (const auto& [method_name, ck] : models) {
    MethodEval me;
    me.method = method_name;
    const auto& method_responses = responses.at(method_name);
    for (const auto& corpus : test_corpora) {
      const auto& pairs = test_pairs.at(corpus);
      auto rit = method_responses.find(corpus);
      if (rit == method_responses.end())
        throw ValidationError("build_report: method " + method_name +
                              " has no responses for " + corpus);
      const auto& cand = rit->second;
      if (cand.size() != pairs.size())
        throw ValidationError("build_report: response count != pair count for " +
                              method_name + "/" + corpus);

      CorpusEval ce;
      double p = 0, r = 0, f = 0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto ref = registry.to_tokens(pairs[i].response);
        const RougeScores s = rouge1(cand[i], ref, stopwords);
        p += s.precision;
        r += s.recall;
        f += s.f1;
      }
      const double n = static_cast<double>(pairs.size());
      ce.rouge = {p / n, r / n, f / n};
      ce.perplexity = perplexity(ck.params, pairs, ck.method);
      for (const auto& scoring : report.scoring_corpora) {
        const int d = scoring_index(scoring);
        ce.adf_train[scoring] = alpha_df_score(cand, adf_train, d, averaging);
        ce.adf_test[scoring] = alpha_df_score(cand, adf_test, d, averaging);
      }
      me.per_corpus[corpus] = std::move(ce);
    }
    report.methods.push_back(std::move(me));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report file: '#'-prefixed metadata and standard scores, a header row,
// then one row per (method, test corpus).
// ---------------------------------------------------------------------------

inline void save_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << "# format_version " << kFormatVersion << '\n';
  out << "# seed " << report.seed << '\n';
  out << "# vocab_hash " << report.vocab_hash << '\n';
  out << "# alpha " << format_g12(report.alpha) << '\n';
  for (const auto& [corpus, per_scoring] : report.standard_adf)
    for (const auto& [scoring, per_prov] : per_scoring)
      for (const auto& [prov, score] : per_prov)
        out << "# standard_adf " << corpus << ' ' << scoring << ' ' << prov << ' '
            << format_g12(score) << '\n';

  out << "method\ttest_set\trouge_p\trouge_r\trouge_f1\tperplexity";
  for (const auto& scoring : report.scoring_corpora) out << "\tadf_train_" << scoring;
  for (const auto& scoring : report.scoring_corpora) out << "\tadf_test_" << scoring;
  out << '\n';
  for (const auto& me : report.methods) {
    for (const auto& corpus : report.test_corpora) {
      const auto& ce = me.per_corpus.at(corpus);
      out << me.method << '\t' << corpus << '\t' << format_g12(ce.rouge.precision)
          << '\t' << format_g12(ce.rouge.recall) << '\t' << format_g12(ce.rouge.f1)
          << '\t' << format_g12(ce.perplexity);
      for (const auto& scoring : report.scoring_corpora)
        out << '\t' << format_g12(ce.adf_train.at(scoring));
      for (const auto& scoring : report.scoring_corpora)
        out << '\t' << format_g12(ce.adf_test.at(scoring));
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing report: " + path);
}

}  // namespace dfmix
