#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfmix/cells.hpp"
#include "dfmix/common.hpp"
#include "dfmix/corpus.hpp"
#include "dfmix/mixing.hpp"

namespace dfmix {

// ---------------------------------------------------------------------------
// Training methods
// ---------------------------------------------------------------------------

enum class Method {
  kConcatenated,
  kInterleaved,
  kLabeled,
  kMultitaskLabeled,
  kWeighted,
};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kConcatenated: return "concatenated";
    case Method::kInterleaved: return "interleaved";
    case Method::kLabeled: return "labeled";
    case Method::kMultitaskLabeled: return "multitask_labeled";
    case Method::kWeighted: return "weighted";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "concatenated") return Method::kConcatenated;
  if (s == "interleaved") return Method::kInterleaved;
  if (s == "labeled") return Method::kLabeled;
  if (s == "multitask_labeled") return Method::kMultitaskLabeled;
  if (s == "weighted") return Method::kWeighted;
  throw ValidationError("unknown method: " + s);
}

/// Whether the decoder sees a corpus embedding.
inline bool method_uses_embedding(Method m) {
  return m == Method::kLabeled || m == Method::kMultitaskLabeled;
}

/// Only labeled mode is told the corpus outside training.
inline bool method_takes_gold_label(Method m) { return m == Method::kLabeled; }

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ModelDims {
  int vocab_size = 0;
  int num_corpora = 0;
  Eigen::Index dim = 32;
  Eigen::Index corpus_dim = 16;
  int sos = Vocabulary::kSos;
  int eos = Vocabulary::kEos;

  bool operator==(const ModelDims&) const = default;
};

/// Every trainable array. The decoder input is the concatenation
/// [word embedding | previous attention context | corpus embedding]; modes
/// that run unlabeled feed zeros through the corpus slot, so one layout
/// serves all five methods.
template <class Cell>
struct ModelParams {
  ModelDims dims;
  Eigen::MatrixXd word_emb;      // |V| x dim
  Eigen::MatrixXd corpus_emb;    // |D| x corpus_dim
  typename Cell::Params encoder;
  typename Cell::Params decoder;
  Eigen::MatrixXd combine_w;     // dim x 2*dim
  Eigen::VectorXd combine_b;
  Eigen::MatrixXd out_w;         // |V| x dim
  Eigen::VectorXd out_b;
  Eigen::MatrixXd classifier_w;  // dim x |D|

  void resize(const ModelDims& d) {
    dims = d;
    word_emb.setZero(d.vocab_size, d.dim);
    corpus_emb.setZero(d.num_corpora, d.corpus_dim);
    encoder.resize(d.dim, d.dim);
    decoder.resize(d.dim + d.dim + d.corpus_dim, d.dim);
    combine_w.setZero(d.dim, 2 * d.dim);
    combine_b.setZero(d.dim);
    out_w.setZero(d.vocab_size, d.dim);
    out_b.setZero(d.vocab_size);
    classifier_w.setZero(d.dim, d.num_corpora);
  }

  std::vector<ParamView> views() {
    std::vector<ParamView> out;
    detail::add_view(out, "word_emb", word_emb);
    detail::add_view(out, "corpus_emb", corpus_emb);
    encoder.views("encoder", out);
    decoder.views("decoder", out);
    detail::add_view(out, "combine_w", combine_w);
    detail::add_view(out, "combine_b", combine_b);
    detail::add_view(out, "out_w", out_w);
    detail::add_view(out, "out_b", out_b);
    detail::add_view(out, "classifier_w", classifier_w);
    return out;
  }

  static ModelParams zeros(const ModelDims& d) {
    ModelParams p;
    p.resize(d);
    return p;
  }

  /// Uniform init in [-0.08, 0.08], filled in view order so the result is
  /// a pure function of (dims, seed).
  static ModelParams init(const ModelDims& d, std::uint64_t seed) {
    ModelParams p = zeros(d);
    Rng rng(seed);
    for (auto& view : p.views())
      for (Eigen::Index i = 0; i < view.size(); ++i)
        view.data[i] = rng.uniform(-0.08, 0.08);
    return p;
  }
};

using GruModel = ModelParams<GruCell>;

// ---------------------------------------------------------------------------
// Numeric helpers
// ---------------------------------------------------------------------------

inline double logsumexp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
  Eigen::VectorXd e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

/// First index attaining the maximum; invariant under shifting all logits.
inline int argmax(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Encoder and attention
// ---------------------------------------------------------------------------

template <class Cell>
struct EncodeTrace {
  Eigen::MatrixXd H;  // dim x m, one column per input token
  std::vector<typename Cell::Cache> cache;
};

template <class Cell>
EncodeTrace<Cell> encode(const ModelParams<Cell>& p, const std::vector<int>& tokens) {
  if (tokens.empty()) throw ValidationError("encode: empty token sequence");
  EncodeTrace<Cell> trace;
  trace.H.resize(p.dims.dim, static_cast<Eigen::Index>(tokens.size()));
  trace.cache.resize(tokens.size());
  Eigen::VectorXd h = Eigen::VectorXd::Zero(p.dims.dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || tokens[t] >= p.dims.vocab_size)
      throw ValidationError("encode: token id out of range: " + std::to_string(tokens[t]));
    const Eigen::VectorXd x = p.word_emb.row(tokens[t]).transpose();
    h = Cell::forward(p.encoder, x, h, &trace.cache[t]);
    trace.H.col(static_cast<Eigen::Index>(t)) = h;
  }
  return trace;
}

/// Dot-product attention, c = H softmax(H^T h). The result is a convex
/// combination of the encoder columns.
inline Eigen::VectorXd attend(const Eigen::MatrixXd& H, const Eigen::VectorXd& h,
                              Eigen::VectorXd* weights_out = nullptr) {
  if (H.cols() == 0) throw ValidationError("attend: empty encoder states");
  const Eigen::VectorXd a = softmax(H.transpose() * h);
  if (weights_out) *weights_out = a;
  return H * a;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

struct DecoderState {
  Eigen::VectorXd h;    // recurrent state
  Eigen::VectorXd ctx;  // attention context, input to the next step
};

template <class Cell>
struct StepTrace {
  typename Cell::Cache cell;
  Eigen::VectorXd x;     // assembled input
  Eigen::VectorXd h;     // cell output
  Eigen::VectorXd attn;  // attention weights over encoder columns
  Eigen::VectorXd ctx;   // fresh context c_t
  Eigen::VectorXd comb;  // tanh-combined output
};

template <class Cell>
DecoderState decoder_start(const ModelParams<Cell>& p, const Eigen::MatrixXd& H) {
  return DecoderState{H.col(H.cols() - 1), Eigen::VectorXd::Zero(p.dims.dim)};
}

/// One teacher-forced or greedy step. `corpus_embedding` may be null for
/// the modes that run unlabeled; the corpus slot is then zero, which makes
/// a zero embedding and no embedding indistinguishable by construction.
template <class Cell>
DecoderState decode_step(const ModelParams<Cell>& p, const Eigen::MatrixXd& H,
                         const DecoderState& state, int prev_token,
                         const Eigen::VectorXd* corpus_embedding,
                         Eigen::VectorXd& logits, StepTrace<Cell>* trace = nullptr) {
  if (prev_token < 0 || prev_token >= p.dims.vocab_size)
    throw ValidationError("decode_step: token id out of range");
  if (corpus_embedding && corpus_embedding->size() != p.dims.corpus_dim)
    throw ValidationError("decode_step: corpus embedding has wrong dimension");
  const auto dim = p.dims.dim;
  Eigen::VectorXd x(dim + dim + p.dims.corpus_dim);
  x.head(dim) = p.word_emb.row(prev_token).transpose();
  x.segment(dim, dim) = state.ctx;
  if (corpus_embedding)
    x.tail(p.dims.corpus_dim) = *corpus_embedding;
  else
    x.tail(p.dims.corpus_dim).setZero();

  typename Cell::Cache cache;
  const Eigen::VectorXd h = Cell::forward(p.decoder, x, state.h, &cache);
  Eigen::VectorXd attn;
  const Eigen::VectorXd ctx = attend(H, h, &attn);
  Eigen::VectorXd u(2 * dim);
  u.head(dim) = h;
  u.tail(dim) = ctx;
  const Eigen::VectorXd comb = (p.combine_w * u + p.combine_b).array().tanh().matrix();
  logits = p.out_w * comb + p.out_b;
  if (trace) *trace = {std::move(cache), std::move(x), h, std::move(attn), ctx, comb};
  return DecoderState{h, ctx};
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean over steps of w_t * cross-entropy. `token_weights` maps vocabulary
/// ids to weights; null means every step weighs 1.
inline double sequence_loss(const Eigen::MatrixXd& step_logits,
                            const std::vector<int>& targets,
                            const Eigen::VectorXd* token_weights = nullptr) {
  if (static_cast<std::size_t>(step_logits.cols()) != targets.size())
    throw ValidationError("sequence_loss: step count != target length");
  if (targets.empty()) throw ValidationError("sequence_loss: empty target");
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const int y = targets[t];
    if (y < 0 || y >= step_logits.rows())
      throw ValidationError("sequence_loss: target id out of range");
    const double w = token_weights ? (*token_weights)(y) : 1.0;
    if (w == 0.0) continue;  // zero weight contributes nothing, exactly
    const Eigen::VectorXd logits = step_logits.col(static_cast<Eigen::Index>(t));
    total += w * (logsumexp(logits) - logits(y));
  }
  return total / static_cast<double>(targets.size());
}

inline Eigen::VectorXd classifier_logits(const Eigen::MatrixXd& H,
                                         const Eigen::MatrixXd& classifier_w) {
  return classifier_w.transpose() * H.rowwise().sum();
}

/// -log softmax((sum of encoder states) . W)[target].
inline double classifier_loss(const Eigen::MatrixXd& H, int target,
                              const Eigen::MatrixXd& classifier_w) {
  if (H.cols() == 0) throw ValidationError("classifier_loss: empty encoder states");
  if (target < 0 || target >= classifier_w.cols())
    throw ValidationError("classifier_loss: target corpus out of range");
  const Eigen::VectorXd logits = classifier_logits(H, classifier_w);
  return logsumexp(logits) - logits(target);
}

struct LossBreakdown {
  double sequence = 0.0;
  double classifier = 0.0;
  double total() const { return sequence + classifier; }
};

// ---------------------------------------------------------------------------
// Whole-pair forward/backward
// ---------------------------------------------------------------------------

template <class Cell>
struct PairTrace {
  EncodeTrace<Cell> enc;
  std::vector<int> context;
  std::vector<StepTrace<Cell>> steps;
  Eigen::MatrixXd logits;    // |V| x n
  std::vector<int> inputs;   // sos, y_1 .. y_k
  std::vector<int> targets;  // y_1 .. y_k, eos
  Eigen::VectorXd cls_logits;
  int cls_pred = -1;
  int corpus_row = -1;       // embedding row used, -1 when unlabeled
};

/// Teacher-forced forward pass. `gold_corpus` picks the embedding in
/// labeled mode and is the classifier target in multitask mode; the
/// multitask decoder receives the *predicted* corpus's embedding.
template <class Cell>
PairTrace<Cell> forward_pair(const ModelParams<Cell>& p, const ContextResponsePair& pair,
                             Method method, int gold_corpus) {
  if (pair.response.empty()) throw ValidationError("forward_pair: empty response");
  PairTrace<Cell> trace;
  trace.context = pair.context;
  trace.enc = encode(p, pair.context);

  if (method == Method::kMultitaskLabeled) {
    trace.cls_logits = classifier_logits(trace.enc.H, p.classifier_w);
    trace.cls_pred = argmax(trace.cls_logits);
  }
  if (method_uses_embedding(method)) {
    trace.corpus_row = method == Method::kLabeled ? gold_corpus : trace.cls_pred;
    if (trace.corpus_row < 0 || trace.corpus_row >= p.dims.num_corpora)
      throw ValidationError("forward_pair: labeled decoding needs a valid corpus id");
  }

  trace.inputs.push_back(p.dims.sos);
  trace.inputs.insert(trace.inputs.end(), pair.response.begin(), pair.response.end());
  trace.targets = pair.response;
  trace.targets.push_back(p.dims.eos);

  const auto n = static_cast<Eigen::Index>(trace.targets.size());
  trace.logits.resize(p.dims.vocab_size, n);
  trace.steps.resize(static_cast<std::size_t>(n));
  std::optional<Eigen::VectorXd> emb;
  if (trace.corpus_row >= 0) emb = p.corpus_emb.row(trace.corpus_row).transpose();

  DecoderState state = decoder_start(p, trace.enc.H);
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::VectorXd logits;
    state = decode_step(p, trace.enc.H, state, trace.inputs[static_cast<std::size_t>(t)],
                        emb ? &*emb : nullptr, logits,
                        &trace.steps[static_cast<std::size_t>(t)]);
    trace.logits.col(t) = logits;
  }
  return trace;
}

template <class Cell>
LossBreakdown trace_loss(const PairTrace<Cell>& trace, Method method, int gold_corpus,
                         const Eigen::VectorXd* token_weights) {
  if (method == Method::kWeighted && !token_weights)
    throw ValidationError("weighted loss needs a DF weight table");
  LossBreakdown loss;
  loss.sequence = sequence_loss(trace.logits, trace.targets,
                                method == Method::kWeighted ? token_weights : nullptr);
  if (method == Method::kMultitaskLabeled) {
    if (gold_corpus < 0 || gold_corpus >= trace.cls_logits.size())
      throw ValidationError("multitask loss needs a valid gold corpus");
    loss.classifier = logsumexp(trace.cls_logits) - trace.cls_logits(gold_corpus);
  }
  return loss;
}

/// Backpropagates the full training loss of one pair, accumulating into
/// `grads` (same shapes as the parameters). Returns the loss the gradients
/// belong to.
template <class Cell>
LossBreakdown backward_pair(const ModelParams<Cell>& p, const PairTrace<Cell>& trace,
                            Method method, int gold_corpus,
                            const Eigen::VectorXd* token_weights,
                            ModelParams<Cell>& grads) {
  const LossBreakdown loss = trace_loss(trace, method, gold_corpus, token_weights);
  const auto dim = p.dims.dim;
  const auto cdim = p.dims.corpus_dim;
  const auto n = static_cast<Eigen::Index>(trace.targets.size());
  const auto m = trace.enc.H.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  Eigen::MatrixXd dH = Eigen::MatrixXd::Zero(dim, m);
  Eigen::VectorXd dh_carry = Eigen::VectorXd::Zero(dim);  // into h_t from step t+1
  Eigen::VectorXd dc_carry = Eigen::VectorXd::Zero(dim);  // into c_t via x_{t+1}
  Eigen::VectorXd dg = Eigen::VectorXd::Zero(cdim);       // corpus embedding

  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const auto& step = trace.steps[static_cast<std::size_t>(t)];
    const int y = trace.targets[static_cast<std::size_t>(t)];
    const double w = method == Method::kWeighted ? (*token_weights)(y) : 1.0;

    Eigen::VectorXd dh = dh_carry;
    Eigen::VectorXd dc = dc_carry;
    if (w != 0.0) {
      Eigen::VectorXd dlogits = softmax(trace.logits.col(t));
      dlogits(y) -= 1.0;
      dlogits *= w * inv_n;
      grads.out_w.noalias() += dlogits * step.comb.transpose();
      grads.out_b += dlogits;
      const Eigen::VectorXd dcomb = p.out_w.transpose() * dlogits;
      const Eigen::VectorXd dpre =
          dcomb.cwiseProduct((1.0 - step.comb.array().square()).matrix());
      Eigen::VectorXd u(2 * dim);
      u.head(dim) = step.h;
      u.tail(dim) = step.ctx;
      grads.combine_w.noalias() += dpre * u.transpose();
      grads.combine_b += dpre;
      dh += p.combine_w.leftCols(dim).transpose() * dpre;
      dc += p.combine_w.rightCols(dim).transpose() * dpre;
    }

    // Attention: c = H a with a = softmax(H^T h), so
    // ds = a . (da - (a.da)) is the softmax backward.
    const Eigen::VectorXd da = trace.enc.H.transpose() * dc;
    const Eigen::VectorXd ds =
        step.attn.cwiseProduct(da - Eigen::VectorXd::Constant(da.size(), step.attn.dot(da)));
    dh += trace.enc.H * ds;
    dH.noalias() += dc * step.attn.transpose();
    dH.noalias() += step.h * ds.transpose();

    Eigen::VectorXd dx, dh_prev;
    Cell::backward(p.decoder, step.cell, dh, grads.decoder, dx, dh_prev);
    grads.word_emb.row(trace.inputs[static_cast<std::size_t>(t)]) +=
        dx.head(dim).transpose();
    dc_carry = dx.segment(dim, dim);
    if (cdim > 0) dg += dx.tail(cdim);
    dh_carry = dh_prev;
  }
  // Step 0 consumed a zero context input (dc_carry dies here) and the
  // decoder's initial state was the last encoder column.
  dH.col(m - 1) += dh_carry;
  if (trace.corpus_row >= 0) grads.corpus_emb.row(trace.corpus_row) += dg.transpose();

  if (method == Method::kMultitaskLabeled) {
    Eigen::VectorXd dcls = softmax(trace.cls_logits);
    dcls(gold_corpus) -= 1.0;
    const Eigen::VectorXd hsum = trace.enc.H.rowwise().sum();
    grads.classifier_w.noalias() += hsum * dcls.transpose();
    const Eigen::VectorXd dhsum = p.classifier_w * dcls;
    dH.colwise() += dhsum;
  }

  Eigen::VectorXd dh_enc = Eigen::VectorXd::Zero(dim);
  for (Eigen::Index j = m - 1; j >= 0; --j) {
    const Eigen::VectorXd dh = dH.col(j) + dh_enc;
    Eigen::VectorXd dx, dh_prev;
    Cell::backward(p.encoder, trace.enc.cache[static_cast<std::size_t>(j)], dh,
                   grads.encoder, dx, dh_prev);
    grads.word_emb.row(trace.context[static_cast<std::size_t>(j)]) += dx.transpose();
    dh_enc = dh_prev;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  Method method = Method::kInterleaved;
  Eigen::Index dim = 32;
  Eigen::Index corpus_dim = 0;  // 0 = dim / 2
  double learning_rate = 0.5;
  double clip_norm = 5.0;
  int epochs = 10;
  std::uint64_t seed = 0;
  bool reshuffle_each_epoch = false;

  void validate() const {
    if (learning_rate <= 0.0) throw ValidationError("learning rate must be > 0");
    if (clip_norm <= 0.0) throw ValidationError("gradient clip must be > 0");
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (dim <= 0) throw ValidationError("dim must be > 0");
  }
};

struct TrainLog {
  double initial_loss = 0.0;       // mean per-pair loss before any update
  std::vector<double> epoch_loss;  // mean per-pair loss, one entry per epoch
};

template <class Cell>
double global_grad_norm(ModelParams<Cell>& grads) {
  double sq = 0.0;
  for (auto& view : grads.views())
    sq += Eigen::Map<Eigen::VectorXd>(view.data, view.size()).squaredNorm();
  return std::sqrt(sq);
}

/// Pair-at-a-time gradient descent over the mixed order, with global-norm
/// clipping. Deterministic under (config, order): reruns produce bitwise
/// identical parameters. `token_weights` is the |V| x |D| DF weight matrix
/// (column per corpus); required in weighted mode, ignored otherwise.
template <class Cell = GruCell>
ModelParams<Cell> train(const std::vector<std::vector<ContextResponsePair>>& corpora,
                        const MixedDataset& order, const ModelDims& dims,
                        const TrainConfig& config,
                        const Eigen::MatrixXd* token_weights = nullptr,
                        TrainLog* log = nullptr) {
  config.validate();
  if (order.order.empty()) throw ValidationError("train: empty dataset");
  if (config.method == Method::kWeighted) {
    if (!token_weights) throw ValidationError("train: weighted method needs DF weights");
    if (token_weights->rows() != dims.vocab_size ||
        token_weights->cols() != dims.num_corpora)
      throw ValidationError("train: DF weight matrix has wrong shape");
  }
  for (const auto& ref : order.order) {
    if (ref.corpus < 0 || static_cast<std::size_t>(ref.corpus) >= corpora.size() ||
        ref.pair >= corpora[static_cast<std::size_t>(ref.corpus)].size())
      throw ValidationError("train: order references a missing pair");
  }

  ModelParams<Cell> params = ModelParams<Cell>::init(dims, config.seed);
  ModelParams<Cell> grads = ModelParams<Cell>::zeros(dims);
  auto param_views = params.views();
  auto grad_views = grads.views();

  std::vector<std::size_t> sizes;
  for (const auto& c : corpora) sizes.push_back(c.size());

  if (log) {
    double loss_sum = 0.0;
    for (const auto& ref : order.order) {
      const auto& pair = corpora[static_cast<std::size_t>(ref.corpus)][ref.pair];
      const Eigen::VectorXd weights =
          config.method == Method::kWeighted ? token_weights->col(ref.corpus)
                                             : Eigen::VectorXd();
      const auto trace = forward_pair(params, pair, config.method, ref.corpus);
      loss_sum += trace_loss(trace, config.method, ref.corpus,
                             weights.size() ? &weights : nullptr)
                      .total();
    }
    log->initial_loss = loss_sum / static_cast<double>(order.order.size());
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const MixedDataset* epoch_order = &order;
    MixedDataset reshuffled;
    if (config.reshuffle_each_epoch && epoch > 0 && order.mode == MixMode::kInterleaved) {
      reshuffled = interleave(sizes, derive_seed(order.seed, static_cast<std::uint64_t>(epoch)));
      epoch_order = &reshuffled;
    }

    double epoch_loss = 0.0;
    std::size_t step_index = 0;
    for (const auto& ref : epoch_order->order) {
      const auto& pair = corpora[static_cast<std::size_t>(ref.corpus)][ref.pair];
      const Eigen::VectorXd weights =
          config.method == Method::kWeighted ? token_weights->col(ref.corpus)
                                             : Eigen::VectorXd();
      const auto trace = forward_pair(params, pair, config.method, ref.corpus);
      for (auto& view : grad_views)
        Eigen::Map<Eigen::VectorXd>(view.data, view.size()).setZero();
      const LossBreakdown loss =
          backward_pair(params, trace, config.method, ref.corpus,
                        weights.size() ? &weights : nullptr, grads);
      if (!std::isfinite(loss.total()))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step_index));
      epoch_loss += loss.total();

      const double norm = global_grad_norm(grads);
      const double scale =
          norm > config.clip_norm ? config.clip_norm / norm : 1.0;
      for (std::size_t v = 0; v < param_views.size(); ++v) {
        Eigen::Map<Eigen::VectorXd> pmap(param_views[v].data, param_views[v].size());
        Eigen::Map<Eigen::VectorXd> gmap(grad_views[v].data, grad_views[v].size());
        pmap -= (config.learning_rate * scale) * gmap;
      }
      ++step_index;
    }
    if (log)
      log->epoch_loss.push_back(epoch_loss /
                                static_cast<double>(epoch_order->order.size()));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

template <class Cell>
int classify(const ModelParams<Cell>& p, const std::vector<int>& context) {
  const auto enc = encode(p, context);
  return argmax(classifier_logits(enc.H, p.classifier_w));
}

/// Greedy decoding: argmax token per step until the end token or max_len.
/// Labeled mode requires `gold_corpus`; every other mode must not get one
/// (multitask predicts the corpus itself, the rest run unlabeled).
template <class Cell>
std::vector<int> generate(const ModelParams<Cell>& p, const std::vector<int>& context,
                          Method method, int gold_corpus, std::size_t max_len) {
  if (method == Method::kLabeled) {
    if (gold_corpus < 0) throw ValidationError("generate: labeled mode needs a corpus id");
    if (gold_corpus >= p.dims.num_corpora)
      throw ValidationError("generate: corpus id out of range");
  } else if (gold_corpus >= 0) {
    throw ValidationError("generate: method '" + std::string(to_string(method)) +
                          "' does not take a corpus label");
  }
  const auto enc = encode(p, context);
  int corpus_row = -1;
  if (method == Method::kLabeled) corpus_row = gold_corpus;
  if (method == Method::kMultitaskLabeled)
    corpus_row = argmax(classifier_logits(enc.H, p.classifier_w));
  std::optional<Eigen::VectorXd> emb;
  if (corpus_row >= 0) emb = p.corpus_emb.row(corpus_row).transpose();

  std::vector<int> out;
  DecoderState state = decoder_start(p, enc.H);
  int prev = p.dims.sos;
  for (std::size_t t = 0; t < max_len; ++t) {
    Eigen::VectorXd logits;
    state = decode_step(p, enc.H, state, prev, emb ? &*emb : nullptr, logits);
    const int tok = argmax(logits);
    if (tok == p.dims.eos) break;
    out.push_back(tok);
    prev = tok;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
  std::map<std::string, double> group_error;  // per parameter group
  double worst = 0.0;
};

/// Central finite differences against the analytic gradients, every
/// coefficient of every parameter group. Relative error is
/// |a - f| / max(|a| + |f|, 1e-6); the floor keeps coefficients whose true
/// gradient sits below the finite-difference noise from reading as
/// spurious relative disagreement.
template <class Cell>
GradCheckReport gradient_check(ModelParams<Cell>& params, const ContextResponsePair& pair,
                               Method method, const Eigen::VectorXd* token_weights,
                               int gold_corpus, double epsilon = 1e-5) {
  if (epsilon <= 0) throw ValidationError("gradient_check: epsilon must be > 0");
  ModelParams<Cell> grads = ModelParams<Cell>::zeros(params.dims);
  {
    const auto trace = forward_pair(params, pair, method, gold_corpus);
    backward_pair(params, trace, method, gold_corpus, token_weights, grads);
  }
  auto loss_at = [&]() {
    const auto trace = forward_pair(params, pair, method, gold_corpus);
    return trace_loss(trace, method, gold_corpus, token_weights).total();
  };

  GradCheckReport report;
  auto param_views = params.views();
  auto grad_views = grads.views();
  for (std::size_t v = 0; v < param_views.size(); ++v) {
    double group_worst = 0.0;
    for (Eigen::Index i = 0; i < param_views[v].size(); ++i) {
      double& coeff = param_views[v].data[i];
      const double saved = coeff;
      coeff = saved + epsilon;
      const double up = loss_at();
      coeff = saved - epsilon;
      const double down = loss_at();
      coeff = saved;
      const double fd = (up - down) / (2.0 * epsilon);
      const double analytic = grad_views[v].data[i];
      const double rel = std::abs(analytic - fd) /
                         std::max(std::abs(analytic) + std::abs(fd), 1e-6);
      group_worst = std::max(group_worst, rel);
    }
    report.group_error[param_views[v].name] = group_worst;
    report.worst = std::max(report.worst, group_worst);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, JSON metadata, then the parameter arrays in
// view order as 64-bit little-endian doubles. Loading validates every
// dimension against the header.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[8] = {'D', 'F', 'M', 'I', 'X', 'C', 'K', '1'};

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_double(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(out, bits);
}

inline double read_double(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

template <class Cell = GruCell>
struct Checkpoint {
  ModelParams<Cell> params;
  Method method = Method::kInterleaved;
  std::uint64_t seed = 0;
  std::string vocab_hash;
};

template <class Cell>
void save_checkpoint(const std::string& path, ModelParams<Cell>& params, Method method,
                     std::uint64_t seed, const std::string& vocab_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(detail::kCheckpointMagic, 8);
  nlohmann::json meta;
  meta["format_version"] = kFormatVersion;
  meta["cell"] = Cell::kName;
  meta["method"] = to_string(method);
  meta["seed"] = seed;
  meta["vocab_hash"] = vocab_hash;
  meta["vocab_size"] = params.dims.vocab_size;
  meta["num_corpora"] = params.dims.num_corpora;
  meta["dim"] = params.dims.dim;
  meta["corpus_dim"] = params.dims.corpus_dim;
  meta["sos"] = params.dims.sos;
  meta["eos"] = params.dims.eos;
  const std::string header = meta.dump();
  detail::write_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (auto& view : params.views()) {
    detail::write_u64(out, view.name.size());
    out.write(view.name.data(), static_cast<std::streamsize>(view.name.size()));
    detail::write_u64(out, static_cast<std::uint64_t>(view.rows));
    detail::write_u64(out, static_cast<std::uint64_t>(view.cols));
    for (Eigen::Index i = 0; i < view.size(); ++i)
      detail::write_double(out, view.data[i]);
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

template <class Cell = GruCell>
Checkpoint<Cell> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw ValidationError("not a checkpoint file: " + path);
  const std::uint64_t header_len = detail::read_u64(in);
  if (header_len > (1u << 20))
    throw ValidationError("checkpoint header is implausibly large: " + path);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  nlohmann::json meta = nlohmann::json::parse(header, nullptr, false);
  if (meta.is_discarded()) throw ValidationError("checkpoint header is corrupt: " + path);
  if (meta.value("format_version", 0u) != kFormatVersion)
    throw ValidationError("checkpoint format version mismatch: " + path);
  if (meta.value("cell", "") != Cell::kName)
    throw ValidationError("checkpoint was written with a different cell type: " + path);

  Checkpoint<Cell> ck;
  ck.method = method_from_string(meta.at("method").get<std::string>());
  ck.seed = meta.value("seed", 0ull);
  ck.vocab_hash = meta.value("vocab_hash", "");
  ModelDims dims;
  dims.vocab_size = meta.at("vocab_size").get<int>();
  dims.num_corpora = meta.at("num_corpora").get<int>();
  dims.dim = meta.at("dim").get<Eigen::Index>();
  dims.corpus_dim = meta.at("corpus_dim").get<Eigen::Index>();
  dims.sos = meta.at("sos").get<int>();
  dims.eos = meta.at("eos").get<int>();
  if (dims.vocab_size <= 0 || dims.dim <= 0 || dims.num_corpora < 0 ||
      dims.corpus_dim < 0 || dims.sos < 0 || dims.sos >= dims.vocab_size ||
      dims.eos < 0 || dims.eos >= dims.vocab_size)
    throw ValidationError("checkpoint header has inconsistent dimensions: " + path);
  ck.params.resize(dims);

  for (auto& view : ck.params.views()) {
    const std::uint64_t name_len = detail::read_u64(in);
    if (!in || name_len > 4096)
      throw ValidationError("checkpoint is truncated: " + path);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rows = static_cast<Eigen::Index>(detail::read_u64(in));
    const auto cols = static_cast<Eigen::Index>(detail::read_u64(in));
    if (!in || name != view.name || rows != view.rows || cols != view.cols)
      throw ValidationError("checkpoint array '" + name + "' does not match header dims: " +
                            path);
    for (Eigen::Index i = 0; i < view.size(); ++i)
      view.data[i] = detail::read_double(in);
  }
  if (!in) throw ValidationError("checkpoint is truncated: " + path);
  return ck;
}

}  // namespace dfmix
