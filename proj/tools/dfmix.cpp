// Command-line front end: ingest/synthesize corpora, build training orders,
// compute DF tables, train the five methods, generate responses, and score
// them into a report. Every artifact embeds the seed and vocabulary hash it
// was built from, and every consumer cross-checks that hash.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dfmix/dfmix.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct IngestArgs {
  std::string out_dir;
  std::string synthetic;  // "NxM"
  std::vector<std::string> train_sources;  // name=path
  std::vector<std::string> test_sources;   // name=path
  std::uint64_t seed = 0;
  std::size_t test_pairs = 0;  // synthetic; 0 = pairs/10
  double keyword_ratio = 0.5;
  int max_vocab = 0;  // 0 = unlimited
  bool no_lowercase = false;
  bool keep_punctuation = false;
};

struct MixArgs {
  std::string registry;
  std::string mode = "interleaved";
  std::string out;
  std::uint64_t seed = 0;
  bool cycle = false;
};

struct DfArgs {
  std::string registry;
  std::string scope = "train";
  std::string out;
  double alpha = 100.0;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string registry;
  std::string order;
  std::string method;
  std::string df_table;
  std::string out;
  std::string loss_log;
  int epochs = 10;
  int dim = 32;
  int corpus_dim = 0;
  double learning_rate = 0.5;
  double clip = 5.0;
  std::uint64_t seed = 0;
  bool reshuffle = false;
};

struct GenerateArgs {
  std::string registry;
  std::string checkpoint;
  std::string test_corpus;
  std::string out;
  std::size_t max_len = 16;
  bool labels = false;
};

struct EvalArgs {
  std::string registry;
  std::string df_train;
  std::string df_test;
  std::string stopwords;
  std::string out;
  std::vector<std::string> responses;    // method:corpus=path
  std::vector<std::string> checkpoints;  // method=path
  bool adf_unique_words = false;
};

std::string resolve(const std::string& anchor_file, const std::string& relative) {
  fs::path p(relative);
  if (p.is_absolute()) return relative;
  return (fs::path(anchor_file).parent_path() / p).string();
}

std::pair<std::string, std::string> split_once(const std::string& s, char sep,
                                               const std::string& what) {
  const auto pos = s.find(sep);
  if (pos == std::string::npos || pos == 0 || pos + 1 == s.size())
    throw dfmix::ValidationError("expected " + what + ", got '" + s + "'");
  return {s.substr(0, pos), s.substr(pos + 1)};
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct CorpusDraft {
  std::string name;
  std::vector<dfmix::RawPair> train;
  std::vector<dfmix::RawPair> test;
};

std::vector<dfmix::RawPair> read_raw_pairs(const std::string& path,
                                           const dfmix::TokenizerConfig& tok,
                                           std::size_t* skipped) {
  std::ifstream in(path);
  if (!in) throw dfmix::IoError("cannot open pair file: " + path);
  std::vector<dfmix::RawPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      ++*skipped;
      continue;
    }
    json j = json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("context") || !j.contains("response") ||
        !j["context"].is_string() || !j["response"].is_string()) {
      ++*skipped;
      continue;
    }
    dfmix::RawPair pair;
    pair.context = dfmix::tokenize(j["context"].get<std::string>(), tok);
    pair.response = dfmix::tokenize(j["response"].get<std::string>(), tok);
    if (pair.context.empty() || pair.response.empty()) {
      ++*skipped;
      continue;
    }
    out.push_back(std::move(pair));
  }
  if (out.empty()) throw dfmix::ValidationError("empty corpus: " + path);
  return out;
}

void write_raw_pairs(const std::string& path, const std::vector<dfmix::RawPair>& pairs,
                     const std::string& corpus) {
  std::ofstream out(path);
  if (!out) throw dfmix::IoError("cannot write pair file: " + path);
  for (const auto& p : pairs) {
    json j;
    j["context"] = dfmix::join_tokens(p.context);
    j["response"] = dfmix::join_tokens(p.response);
    j["corpus"] = corpus;
    out << j.dump() << '\n';
  }
  if (!out) throw dfmix::IoError("failed writing pair file: " + path);
}

int cmd_ingest(const IngestArgs& args) {
  if (args.synthetic.empty() == args.train_sources.empty())
    throw dfmix::ValidationError("ingest needs exactly one of --synthetic or --pairs");
  dfmix::TokenizerConfig tok;
  tok.lowercase = !args.no_lowercase;
  tok.strip_punctuation = !args.keep_punctuation;

  std::vector<CorpusDraft> drafts;
  if (!args.synthetic.empty()) {
    const auto [n_str, m_str] = split_once(args.synthetic, 'x', "DOMAINSxPAIRS");
    const auto domains = std::stoul(n_str);
    const auto pairs = std::stoul(m_str);
    if (domains < 1 || pairs < 1)
      throw dfmix::ValidationError("--synthetic needs at least 1 domain and 1 pair");
    auto spec = dfmix::SynthesisSpec::standard(domains, pairs, args.seed);
    spec.keyword_ratio = args.keyword_ratio;
    const auto train = dfmix::synthesize_corpora(spec);
    auto test_spec = spec;
    test_spec.pairs_per_domain = args.test_pairs ? args.test_pairs
                                                 : std::max<std::size_t>(1, pairs / 10);
    test_spec.seed = dfmix::derive_seed(args.seed, 0x7e57);  // independent test stream
    const auto test = dfmix::synthesize_corpora(test_spec);
    for (std::size_t d = 0; d < spec.domains.size(); ++d)
      drafts.push_back({spec.domains[d].name, train[d], test[d]});
  } else {
    std::map<std::string, std::string> test_paths;
    for (const auto& s : args.test_sources) {
      auto [name, path] = split_once(s, '=', "NAME=PATH");
      test_paths[name] = path;
    }
    for (const auto& s : args.train_sources) {
      auto [name, path] = split_once(s, '=', "NAME=PATH");
      CorpusDraft draft;
      draft.name = name;
      std::size_t skipped = 0;
      draft.train = read_raw_pairs(path, tok, &skipped);
      std::cout << "loaded " << draft.train.size() << " pairs (skipped " << skipped
                << ") from " << path << "\n";
      if (auto it = test_paths.find(name); it != test_paths.end()) {
        skipped = 0;
        draft.test = read_raw_pairs(it->second, tok, &skipped);
        std::cout << "loaded " << draft.test.size() << " test pairs (skipped " << skipped
                  << ") from " << it->second << "\n";
        test_paths.erase(it);
      }
      drafts.push_back(std::move(draft));
    }
    if (!test_paths.empty())
      throw dfmix::ValidationError("--test names a corpus not given to --pairs: " +
                                   test_paths.begin()->first);
  }

  // Vocabulary over everything registered, most frequent first under a cap.
  std::map<std::string, std::size_t> counts;
  for (const auto& d : drafts)
    for (const auto* side : {&d.train, &d.test})
      for (const auto& pair : *side) {
        for (const auto& t : pair.context) ++counts[t];
        for (const auto& t : pair.response) ++counts[t];
      }
  std::vector<std::pair<std::string, std::size_t>> by_freq(counts.begin(), counts.end());
  std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (args.max_vocab > 0 && by_freq.size() > static_cast<std::size_t>(args.max_vocab))
    by_freq.resize(static_cast<std::size_t>(args.max_vocab));
  std::vector<std::string> vocab_words;
  for (const auto& [w, _] : by_freq) vocab_words.push_back(w);
  std::sort(vocab_words.begin(), vocab_words.end());

  dfmix::RegistryFile rf;
  rf.registry.seed = args.seed;
  rf.registry.tokenizer = tok;
  for (const auto& w : vocab_words) rf.registry.vocab.add(w);

  fs::create_directories(args.out_dir);
  for (const auto& draft : drafts) {
    auto id = rf.registry.add_corpus(draft.name);
    rf.registry.pair_counts[static_cast<std::size_t>(id.index)] = draft.train.size();
    dfmix::RegistryFileEntry entry;
    entry.name = draft.name;
    entry.train_file = draft.name + ".train.jsonl";
    entry.train_pairs = draft.train.size();
    write_raw_pairs((fs::path(args.out_dir) / entry.train_file).string(), draft.train,
                    draft.name);
    if (!draft.test.empty()) {
      entry.test_file = draft.name + ".test.jsonl";
      entry.test_pairs = draft.test.size();
      write_raw_pairs((fs::path(args.out_dir) / entry.test_file).string(), draft.test,
                      draft.name);
    }
    rf.entries.push_back(std::move(entry));
  }
  const auto registry_path = (fs::path(args.out_dir) / "registry.json").string();
  rf.save(registry_path);
  std::cout << "registry " << registry_path << " vocab " << rf.registry.vocab.size()
            << " hash " << rf.registry.vocab.hash() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// loading helpers shared by the later stages
// ---------------------------------------------------------------------------

std::vector<dfmix::ContextResponsePair> load_scope(const dfmix::RegistryFile& rf,
                                                   const std::string& registry_path,
                                                   std::size_t corpus, bool test) {
  const auto& entry = rf.entries[corpus];
  const std::string& file = test ? entry.test_file : entry.train_file;
  if (file.empty())
    throw dfmix::ValidationError("corpus '" + entry.name + "' has no " +
                                 (test ? "test" : "train") + " pair file");
  auto result = dfmix::load_pairs(resolve(registry_path, file),
                                  rf.registry.corpora[corpus], rf.registry);
  return std::move(result.pairs);
}

std::vector<std::vector<dfmix::ContextResponsePair>> load_all(
    const dfmix::RegistryFile& rf, const std::string& registry_path, bool test) {
  std::vector<std::vector<dfmix::ContextResponsePair>> corpora;
  for (std::size_t c = 0; c < rf.entries.size(); ++c)
    corpora.push_back(load_scope(rf, registry_path, c, test));
  return corpora;
}

// ---------------------------------------------------------------------------
// mix
// ---------------------------------------------------------------------------

int cmd_mix(const MixArgs& args) {
  const auto rf = dfmix::RegistryFile::load(args.registry);
  std::vector<std::size_t> sizes;
  for (const auto& e : rf.entries) sizes.push_back(e.train_pairs);
  dfmix::MixedDataset ds;
  if (args.mode == "concatenated") {
    ds = dfmix::concatenate(sizes);
  } else if (args.mode == "interleaved") {
    ds = dfmix::interleave(sizes, args.seed, args.cycle);
  } else {
    throw dfmix::ValidationError("--mode must be concatenated or interleaved");
  }
  dfmix::save_order(args.out, ds, rf.registry.vocab.hash());
  std::cout << "order " << args.out << " entries " << ds.order.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// df
// ---------------------------------------------------------------------------

int cmd_df(const DfArgs& args) {
  if (args.scope != "train" && args.scope != "test")
    throw dfmix::ValidationError("--scope must be train or test");
  const auto rf = dfmix::RegistryFile::load(args.registry);
  const auto corpora = load_all(rf, args.registry, args.scope == "test");
  std::vector<dfmix::FreqTable> tables;
  for (std::size_t c = 0; c < corpora.size(); ++c)
    tables.push_back(dfmix::build_freq(corpora[c], rf.registry, rf.registry.corpora[c]));
  const auto df = dfmix::compute_df(tables);
  const auto adf = dfmix::compute_alpha_df(df, args.alpha);
  dfmix::save_df_table(args.out, df, adf, rf.registry.vocab.hash(), args.seed);
  std::cout << "df table " << args.out << " words " << df.words.size() << " corpora "
            << df.corpora.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const TrainArgs& args) {
  const auto method = dfmix::method_from_string(args.method);
  const auto rf = dfmix::RegistryFile::load(args.registry);
  const auto order_file = dfmix::load_order(args.order);
  if (order_file.vocab_hash != rf.registry.vocab.hash())
    throw dfmix::ValidationError("order file was built against a different vocabulary");

  const auto corpora = load_all(rf, args.registry, /*test=*/false);

  dfmix::ModelDims dims;
  dims.vocab_size = rf.registry.vocab.size();
  dims.num_corpora = static_cast<int>(rf.entries.size());
  dims.dim = args.dim;
  dims.corpus_dim = args.corpus_dim > 0 ? args.corpus_dim : std::max(1, args.dim / 2);

  dfmix::TrainConfig config;
  config.method = method;
  config.dim = dims.dim;
  config.corpus_dim = dims.corpus_dim;
  config.learning_rate = args.learning_rate;
  config.clip_norm = args.clip;
  config.epochs = args.epochs;
  config.seed = args.seed;
  config.reshuffle_each_epoch = args.reshuffle;

  std::optional<Eigen::MatrixXd> weights;
  if (method == dfmix::Method::kWeighted) {
    if (args.df_table.empty())
      throw dfmix::ValidationError("weighted training needs --df-table");
    const auto table = dfmix::load_df_table(args.df_table);
    if (table.vocab_hash != rf.registry.vocab.hash())
      throw dfmix::ValidationError("DF table was built against a different vocabulary");
    weights = dfmix::df_weight_matrix(table.df, rf.registry.vocab);
  } else if (!args.df_table.empty()) {
    throw dfmix::ValidationError("--df-table only applies to the weighted method");
  }

  dfmix::TrainLog log;
  auto params = dfmix::train(corpora, order_file.dataset, dims, config,
                             weights ? &*weights : nullptr, &log);
  dfmix::save_checkpoint(args.out, params, method, args.seed, rf.registry.vocab.hash());

  std::ofstream loss_out;
  if (!args.loss_log.empty()) {
    loss_out.open(args.loss_log);
    if (!loss_out) throw dfmix::IoError("cannot write loss log: " + args.loss_log);
  }
  std::cout << "initial loss " << dfmix::format_g12(log.initial_loss) << "\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    std::cout << "epoch " << e << " loss " << dfmix::format_g12(log.epoch_loss[e]) << "\n";
    if (loss_out) loss_out << e << '\t' << dfmix::format_g12(log.epoch_loss[e]) << '\n';
  }
  std::cout << "checkpoint " << args.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

int cmd_generate(const GenerateArgs& args) {
  const auto rf = dfmix::RegistryFile::load(args.registry);
  auto ck = dfmix::load_checkpoint(args.checkpoint);
  if (ck.vocab_hash != rf.registry.vocab.hash())
    throw dfmix::ValidationError("checkpoint was built against a different vocabulary");
  const int corpus = rf.registry.corpus_index(args.test_corpus);
  const auto pairs =
      load_scope(rf, args.registry, static_cast<std::size_t>(corpus), /*test=*/true);

  if (ck.method == dfmix::Method::kLabeled && !args.labels)
    throw dfmix::ValidationError("labeled checkpoints need --labels at generation");
  if (ck.method != dfmix::Method::kLabeled && args.labels)
    throw dfmix::ValidationError("--labels only applies to labeled checkpoints");
  const int gold = args.labels ? corpus : -1;

  std::ofstream out(args.out);
  if (!out) throw dfmix::IoError("cannot write response file: " + args.out);
  json meta;
  meta["format_version"] = dfmix::kFormatVersion;
  meta["seed"] = ck.seed;
  meta["vocab_hash"] = ck.vocab_hash;
  meta["method"] = dfmix::to_string(ck.method);
  meta["test_corpus"] = args.test_corpus;
  out << meta.dump() << '\n';
  for (const auto& pair : pairs) {
    const auto response =
        dfmix::generate(ck.params, pair.context, ck.method, gold, args.max_len);
    json j;
    j["context"] = dfmix::join_tokens(rf.registry.to_tokens(pair.context));
    j["response"] = dfmix::join_tokens(rf.registry.to_tokens(response));
    out << j.dump() << '\n';
  }
  if (!out) throw dfmix::IoError("failed writing response file: " + args.out);
  std::cout << "responses " << args.out << " count " << pairs.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct ResponseFile {
  std::string method;
  std::string test_corpus;
  std::string vocab_hash;
  std::vector<std::vector<std::string>> responses;
};

ResponseFile load_responses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dfmix::IoError("cannot open response file: " + path);
  ResponseFile rf;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw dfmix::ValidationError("response file has a malformed line: " + path);
    if (first) {
      first = false;
      if (!j.contains("format_version"))
        throw dfmix::ValidationError("response file lacks its metadata line: " + path);
      if (j.value("format_version", 0u) != dfmix::kFormatVersion)
        throw dfmix::ValidationError("response file format version mismatch: " + path);
      rf.method = j.value("method", "");
      rf.test_corpus = j.value("test_corpus", "");
      rf.vocab_hash = j.value("vocab_hash", "");
      continue;
    }
    std::istringstream ss(j.value("response", ""));
    std::vector<std::string> tokens;
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    rf.responses.push_back(std::move(tokens));
  }
  if (first) throw dfmix::ValidationError("response file is empty: " + path);
  return rf;
}

int cmd_eval(const EvalArgs& args) {
  const auto rf = dfmix::RegistryFile::load(args.registry);
  const auto stopwords = dfmix::load_stopwords(args.stopwords);
  const std::string vocab_hash = rf.registry.vocab.hash();

  const auto train_table = dfmix::load_df_table(args.df_train);
  const auto test_table = dfmix::load_df_table(args.df_test);
  for (const auto* table : {&train_table, &test_table})
    if (table->vocab_hash != vocab_hash)
      throw dfmix::ValidationError("DF table was built against a different vocabulary");

  std::map<std::string, dfmix::Checkpoint<dfmix::GruCell>> models;
  for (const auto& spec : args.checkpoints) {
    auto [method, path] = split_once(spec, '=', "METHOD=CHECKPOINT");
    models[method] = dfmix::load_checkpoint(path);
  }

  std::map<std::string, std::map<std::string, std::vector<std::vector<std::string>>>>
      responses;
  std::set<std::string> test_names;
  for (const auto& spec : args.responses) {
    auto [key, path] = split_once(spec, '=', "METHOD:CORPUS=FILE");
    auto [method, corpus] = split_once(key, ':', "METHOD:CORPUS");
    auto file = load_responses(path);
    if (file.vocab_hash != vocab_hash)
      throw dfmix::ValidationError("response file was built against a different vocabulary: " +
                                   path);
    if (!file.method.empty() && file.method != method)
      throw dfmix::ValidationError("response file " + path + " was generated by method " +
                                   file.method + ", not " + method);
    responses[method][corpus] = std::move(file.responses);
    test_names.insert(corpus);
  }

  std::vector<std::string> test_corpora;
  std::map<std::string, std::vector<dfmix::ContextResponsePair>> test_pairs;
  for (std::size_t c = 0; c < rf.entries.size(); ++c) {
    if (!test_names.count(rf.entries[c].name)) continue;
    test_corpora.push_back(rf.entries[c].name);
    test_pairs[rf.entries[c].name] = load_scope(rf, args.registry, c, /*test=*/true);
  }
  for (const auto& name : test_names)
    if (!test_pairs.count(name))
      throw dfmix::ValidationError("responses name an unknown test corpus: " + name);

  const auto report = dfmix::build_report(
      rf.registry, test_corpora, test_pairs, models, responses, train_table.alpha_df,
      test_table.alpha_df, stopwords, rf.registry.seed,
      args.adf_unique_words ? dfmix::AdfAveraging::kUniqueWords
                            : dfmix::AdfAveraging::kOccurrences);
  dfmix::save_report(args.out, report);
  std::cout << "report " << args.out << " methods " << report.methods.size()
            << " test sets " << test_corpora.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-domain corpus balancing: mixing, DF weighting, training, evaluation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file; explicit flags win");

  IngestArgs ingest;
  auto* cmd_i = app.add_subcommand("ingest", "Register corpora or synthesize fixtures");
  cmd_i->add_option("--out-dir", ingest.out_dir, "Output directory")->required();
  cmd_i->add_option("--synthetic", ingest.synthetic, "Synthesize DOMAINSxPAIRS, e.g. 3x200");
  cmd_i->add_option("--pairs", ingest.train_sources, "Corpus source NAME=PATH");
  cmd_i->add_option("--test", ingest.test_sources, "Test source NAME=PATH");
  cmd_i->add_option("--test-pairs", ingest.test_pairs, "Synthetic test pairs per domain");
  cmd_i->add_option("--keyword-ratio", ingest.keyword_ratio,
                    "Share of domain keywords in synthetic responses");
  cmd_i->add_option("--max-vocab", ingest.max_vocab, "Cap vocabulary (most frequent kept)");
  cmd_i->add_option("--seed", ingest.seed, "RNG seed");
  cmd_i->add_flag("--no-lowercase", ingest.no_lowercase, "Keep case");
  cmd_i->add_flag("--keep-punctuation", ingest.keep_punctuation,
                  "Keep boundary punctuation");

  MixArgs mix;
  auto* cmd_m = app.add_subcommand("mix", "Build a training order");
  cmd_m->add_option("--registry", mix.registry, "registry.json")->required();
  cmd_m->add_option("--mode", mix.mode, "concatenated|interleaved");
  cmd_m->add_option("--seed", mix.seed, "RNG seed");
  cmd_m->add_flag("--cycle", mix.cycle, "Recycle shorter corpora instead of truncating");
  cmd_m->add_option("--out", mix.out, "Order file")->required();

  DfArgs df;
  auto* cmd_d = app.add_subcommand("df", "Compute DF and alpha-DF tables");
  cmd_d->add_option("--registry", df.registry, "registry.json")->required();
  cmd_d->add_option("--scope", df.scope, "train|test pair files");
  cmd_d->add_option("--alpha", df.alpha, "Exponent base (> 1)");
  cmd_d->add_option("--seed", df.seed, "Seed recorded in the table");
  cmd_d->add_option("--out", df.out, "TSV output")->required();

  TrainArgs train;
  auto* cmd_t = app.add_subcommand("train", "Train one method");
  cmd_t->add_option("--registry", train.registry, "registry.json")->required();
  cmd_t->add_option("--order", train.order, "Order file from mix")->required();
  cmd_t->add_option("--method", train.method,
                    "concatenated|interleaved|labeled|multitask_labeled|weighted")
      ->required();
  cmd_t->add_option("--epochs", train.epochs, "Training epochs");
  cmd_t->add_option("--dim", train.dim, "Hidden dimension");
  cmd_t->add_option("--corpus-dim", train.corpus_dim, "Corpus embedding size (0 = dim/2)");
  cmd_t->add_option("--lr", train.learning_rate, "Learning rate");
  cmd_t->add_option("--clip", train.clip, "Global gradient-norm clip");
  cmd_t->add_option("--seed", train.seed, "RNG seed");
  cmd_t->add_option("--df-table", train.df_table, "DF table (weighted method)");
  cmd_t->add_option("--loss-log", train.loss_log, "Write per-epoch loss TSV");
  cmd_t->add_flag("--reshuffle-each-epoch", train.reshuffle,
                  "Re-draw the interleaved order every epoch");
  cmd_t->add_option("--out", train.out, "Checkpoint file")->required();

  GenerateArgs gen;
  auto* cmd_g = app.add_subcommand("generate", "Greedy-decode a test corpus");
  cmd_g->add_option("--registry", gen.registry, "registry.json")->required();
  cmd_g->add_option("--checkpoint", gen.checkpoint, "Trained checkpoint")->required();
  cmd_g->add_option("--test", gen.test_corpus, "Test corpus name")->required();
  cmd_g->add_option("--max-len", gen.max_len, "Maximum response length");
  cmd_g->add_flag("--labels", gen.labels, "Provide gold corpus labels (labeled method)");
  cmd_g->add_option("--out", gen.out, "Response file")->required();

  EvalArgs eval;
  auto* cmd_e = app.add_subcommand("eval", "Score responses into a report");
  cmd_e->add_option("--registry", eval.registry, "registry.json")->required();
  cmd_e->add_option("--df-train", eval.df_train, "Train-scope DF table")->required();
  cmd_e->add_option("--df-test", eval.df_test, "Test-scope DF table")->required();
  cmd_e->add_option("--stopwords", eval.stopwords, "Stop-word file")->required();
  cmd_e->add_option("--responses", eval.responses, "METHOD:CORPUS=FILE")->required();
  cmd_e->add_option("--checkpoint", eval.checkpoints, "METHOD=CKPT (for perplexity)")
      ->required();
  cmd_e->add_flag("--adf-unique-words", eval.adf_unique_words,
                  "Average alpha-DF over distinct words per response, not occurrences");
  cmd_e->add_option("--out", eval.out, "Report TSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_i->parsed()) return cmd_ingest(ingest);
    if (cmd_m->parsed()) return cmd_mix(mix);
    if (cmd_d->parsed()) return cmd_df(df);
    if (cmd_t->parsed()) return cmd_train(train);
    if (cmd_g->parsed()) return cmd_generate(gen);
    if (cmd_e->parsed()) return cmd_eval(eval);
  } catch (const dfmix::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dfmix::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const dfmix::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
