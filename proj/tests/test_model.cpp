#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dfmix/corpus.hpp"
#include "dfmix/model.hpp"
#include "support/model_fixtures.hpp"
#include "support/tmpdir.hpp"

using namespace dfmix;
using testsupport::TempDir;
using testsupport::tiny_fixture;
using testsupport::token_automaton;
using Catch::Matchers::WithinAbs;

namespace {

bool params_equal(GruModel& a, GruModel& b) {
  auto va = a.views();
  auto vb = b.views();
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].size() != vb[i].size()) return false;
    for (Eigen::Index j = 0; j < va[i].size(); ++j)
      if (va[i].data[j] != vb[i].data[j]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("encode is deterministic and checks token ids") {
  auto fx = tiny_fixture();
  const auto a = encode(fx.params, fx.pair.context);
  const auto b = encode(fx.params, fx.pair.context);
  CHECK(a.H == b.H);
  CHECK(a.H.cols() == 3);
  CHECK_THROWS_AS(encode(fx.params, {}), ValidationError);
  CHECK_THROWS_AS(encode(fx.params, {99}), ValidationError);
  CHECK_THROWS_AS(encode(fx.params, {-1}), ValidationError);
}

TEST_CASE("encode of the all-zero model is zero") {
  ModelDims dims;
  dims.vocab_size = 6;
  dims.num_corpora = 2;
  dims.dim = 4;
  dims.corpus_dim = 2;
  const auto zero = GruModel::zeros(dims);
  const auto enc = encode(zero, {4, 5, 4});
  CHECK(enc.H.isZero(0.0));
}

TEST_CASE("encode with the linear test cell follows the hand recurrence") {
  // Unit weights, identity activation, 1-dim: h_t = h_{t-1} + e_t.
  ModelDims dims;
  dims.vocab_size = 2;
  dims.num_corpora = 1;
  dims.dim = 1;
  dims.corpus_dim = 1;
  dims.sos = 0;
  dims.eos = 1;
  auto params = ModelParams<LinearCell>::zeros(dims);
  params.word_emb(0, 0) = 1.0;
  params.word_emb(1, 0) = 2.0;
  params.encoder.w(0, 0) = 1.0;
  params.encoder.u(0, 0) = 1.0;
  const auto enc = encode(params, {0, 1});
  CHECK(enc.H(0, 0) == 1.0);
  CHECK(enc.H(0, 1) == 3.0);
}

TEST_CASE("attention is a convex combination of encoder columns") {
  SECTION("single column passes through") {
    Eigen::MatrixXd H(3, 1);
    H << 1.0, -2.0, 0.5;
    Eigen::VectorXd h = Eigen::VectorXd::Random(3);
    CHECK(attend(H, h) == H.col(0));
  }
  SECTION("zero query averages the columns") {
    Eigen::MatrixXd H = Eigen::MatrixXd::Random(4, 5);
    const Eigen::VectorXd c = attend(H, Eigen::VectorXd::Zero(4));
    CHECK(c.isApprox(H.rowwise().mean(), 1e-12));
  }
  SECTION("a saturated query picks out its column") {
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(4, 4);
    const Eigen::VectorXd c = attend(H, 50.0 * H.col(2));
    CHECK((c - H.col(2)).norm() < 1e-12);
  }
  SECTION("weights sum to one") {
    Eigen::MatrixXd H = Eigen::MatrixXd::Random(4, 6);
    Eigen::VectorXd weights;
    attend(H, Eigen::VectorXd::Random(4), &weights);
    CHECK_THAT(weights.sum(), WithinAbs(1.0, 1e-12));
    CHECK(weights.minCoeff() >= 0.0);
  }
}

TEST_CASE("decode_step treats a zero corpus embedding as no label") {
  auto fx = tiny_fixture();
  const auto enc = encode(fx.params, fx.pair.context);
  const auto state = decoder_start(fx.params, enc.H);
  const Eigen::VectorXd zero_emb = Eigen::VectorXd::Zero(fx.params.dims.corpus_dim);

  Eigen::VectorXd plain, labeled;
  decode_step(fx.params, enc.H, state, 4, nullptr, plain);
  decode_step(fx.params, enc.H, state, 4, &zero_emb, labeled);
  CHECK(plain == labeled);

  // Distinct embeddings steer the logits apart.
  const Eigen::VectorXd e0 = fx.params.corpus_emb.row(0).transpose();
  const Eigen::VectorXd e1 = fx.params.corpus_emb.row(1).transpose();
  Eigen::VectorXd l0, l1;
  decode_step(fx.params, enc.H, state, 4, &e0, l0);
  decode_step(fx.params, enc.H, state, 4, &e1, l1);
  CHECK((l0 - l1).norm() > 1e-8);

  Eigen::VectorXd again;
  decode_step(fx.params, enc.H, state, 4, &e0, again);
  CHECK(l0 == again);
}

TEST_CASE("classifier loss follows the softmax formula") {
  // Zero weights: uniform over |D| = 4.
  Eigen::MatrixXd H = Eigen::MatrixXd::Random(3, 5);
  CHECK_THAT(classifier_loss(H, 2, Eigen::MatrixXd::Zero(3, 4)),
             WithinAbs(std::log(4.0), 1e-12));

  // Hand case: logits [1, 0], target 0.
  Eigen::MatrixXd H1(1, 1);
  H1 << 1.0;
  Eigen::MatrixXd W(1, 2);
  W << 1.0, 0.0;
  CHECK_THAT(classifier_loss(H1, 0, W), WithinAbs(std::log(1.0 + std::exp(-1.0)), 1e-12));
  CHECK_THAT(classifier_loss(H1, 0, W), WithinAbs(0.3132616875, 1e-9));

  // A dominant target logit drives the loss to zero.
  Eigen::MatrixXd Wbig(1, 2);
  Wbig << 50.0, 0.0;
  CHECK(classifier_loss(H1, 0, Wbig) < 1e-12);

  CHECK_THROWS_AS(classifier_loss(H1, 5, W), ValidationError);
  CHECK_THROWS_AS(classifier_loss(H1, -1, W), ValidationError);
}

TEST_CASE("sequence loss applies per-target weights") {
  const int vocab = 2;
  Eigen::MatrixXd logits(vocab, 1);
  logits << 0.0, std::log(std::exp(2.0) - 1.0);  // cross-entropy of target 0 is 2
  const std::vector<int> target{0};

  CHECK_THAT(sequence_loss(logits, target), WithinAbs(2.0, 1e-12));

  Eigen::VectorXd weights(vocab);
  weights << 0.5, 1.0;
  CHECK_THAT(sequence_loss(logits, target, &weights), WithinAbs(1.0, 1e-12));

  weights(0) = 0.0;
  CHECK(sequence_loss(logits, target, &weights) == 0.0);

  Eigen::VectorXd ones = Eigen::VectorXd::Ones(vocab);
  CHECK(sequence_loss(logits, target, &ones) == sequence_loss(logits, target));

  CHECK_THROWS_AS(sequence_loss(logits, {0, 1}), ValidationError);
  CHECK_THROWS_AS(sequence_loss(logits, {5}), ValidationError);
}

TEST_CASE("multitask loss is exactly sequence plus classifier") {
  auto fx = tiny_fixture();
  const auto trace = forward_pair(fx.params, fx.pair, Method::kMultitaskLabeled,
                                  fx.pair.corpus);
  const auto loss = trace_loss(trace, Method::kMultitaskLabeled, fx.pair.corpus, nullptr);
  const double seq = sequence_loss(trace.logits, trace.targets);
  const double cls = classifier_loss(trace.enc.H, fx.pair.corpus, fx.params.classifier_w);
  CHECK_THAT(loss.sequence, WithinAbs(seq, 1e-12));
  CHECK_THAT(loss.classifier, WithinAbs(cls, 1e-12));
  CHECK_THAT(loss.total(), WithinAbs(seq + cls, 1e-12));
}

TEST_CASE("weighted loss and gradients scale linearly in the weights") {
  auto fx = tiny_fixture();
  const auto trace = forward_pair(fx.params, fx.pair, Method::kWeighted, fx.pair.corpus);

  auto grads_full = GruModel::zeros(fx.params.dims);
  const auto loss_full = backward_pair(fx.params, trace, Method::kWeighted,
                                       fx.pair.corpus, &fx.weights, grads_full);

  const Eigen::VectorXd half = 0.5 * fx.weights;
  auto grads_half = GruModel::zeros(fx.params.dims);
  const auto loss_half = backward_pair(fx.params, trace, Method::kWeighted,
                                       fx.pair.corpus, &half, grads_half);

  CHECK(loss_half.sequence == 0.5 * loss_full.sequence);
  auto vf = grads_full.views();
  auto vh = grads_half.views();
  for (std::size_t i = 0; i < vf.size(); ++i)
    for (Eigen::Index j = 0; j < vf[i].size(); ++j)
      CHECK(vh[i].data[j] == 0.5 * vf[i].data[j]);
}

TEST_CASE("weighted mode requires a weight table") {
  auto fx = tiny_fixture();
  const auto trace = forward_pair(fx.params, fx.pair, Method::kWeighted, fx.pair.corpus);
  CHECK_THROWS_AS(trace_loss(trace, Method::kWeighted, fx.pair.corpus, nullptr),
                  ValidationError);
}

TEST_CASE("labeled forward with a zero embedding equals the plain forward") {
  auto fx = tiny_fixture();
  fx.params.corpus_emb.row(fx.pair.corpus).setZero();
  const auto labeled = forward_pair(fx.params, fx.pair, Method::kLabeled, fx.pair.corpus);
  const auto plain = forward_pair(fx.params, fx.pair, Method::kInterleaved, -1);
  CHECK(labeled.logits == plain.logits);

  // With the embedding's input weights zeroed as well, even the gradients
  // coincide on every shared (and unshared) array.
  const auto dim = fx.params.dims.dim;
  const auto cdim = fx.params.dims.corpus_dim;
  fx.params.decoder.wz.rightCols(cdim).setZero();
  fx.params.decoder.wr.rightCols(cdim).setZero();
  fx.params.decoder.wn.rightCols(cdim).setZero();
  const auto t1 = forward_pair(fx.params, fx.pair, Method::kLabeled, fx.pair.corpus);
  const auto t2 = forward_pair(fx.params, fx.pair, Method::kInterleaved, -1);
  auto g1 = GruModel::zeros(fx.params.dims);
  auto g2 = GruModel::zeros(fx.params.dims);
  backward_pair(fx.params, t1, Method::kLabeled, fx.pair.corpus, nullptr, g1);
  backward_pair(fx.params, t2, Method::kInterleaved, -1, nullptr, g2);
  CHECK(params_equal(g1, g2));
  (void)dim;
}

TEST_CASE("labeled forward without a corpus id fails") {
  auto fx = tiny_fixture();
  CHECK_THROWS_AS(forward_pair(fx.params, fx.pair, Method::kLabeled, -1), ValidationError);
}

TEST_CASE("gradients match central finite differences for every method") {
  auto fx = tiny_fixture();
  const double tol = 1e-4;
  const double eps = 1e-5;

  struct Case {
    Method method;
    bool weighted;
  };
  for (const auto& c : {Case{Method::kConcatenated, false}, Case{Method::kInterleaved, false},
                        Case{Method::kLabeled, false}, Case{Method::kMultitaskLabeled, false},
                        Case{Method::kWeighted, true}}) {
    CAPTURE(to_string(c.method));
    auto report = gradient_check(fx.params, fx.pair, c.method,
                                 c.weighted ? &fx.weights : nullptr, fx.pair.corpus, eps);
    CHECK(report.worst < tol);
    // Every group was visited, embeddings and classifier included.
    CHECK(report.group_error.count("corpus_emb") == 1);
    CHECK(report.group_error.count("classifier_w") == 1);
    CHECK(report.group_error.size() == 25);
  }
}

TEST_CASE("all-zero DF weights zero the loss and its gradients") {
  auto fx = tiny_fixture();
  const Eigen::VectorXd zero_w = Eigen::VectorXd::Zero(fx.params.dims.vocab_size);
  const auto trace = forward_pair(fx.params, fx.pair, Method::kWeighted, fx.pair.corpus);
  auto grads = GruModel::zeros(fx.params.dims);
  const auto loss =
      backward_pair(fx.params, trace, Method::kWeighted, fx.pair.corpus, &zero_w, grads);
  CHECK(loss.total() == 0.0);
  for (auto& view : grads.views())
    for (Eigen::Index i = 0; i < view.size(); ++i) CHECK(view.data[i] == 0.0);

  auto report =
      gradient_check(fx.params, fx.pair, Method::kWeighted, &zero_w, fx.pair.corpus);
  CHECK(report.worst < 1e-4);
}

namespace {

/// Two tiny id corpora over the fixture vocabulary.
std::vector<std::vector<ContextResponsePair>> toy_corpora() {
  std::vector<std::vector<ContextResponsePair>> corpora(2);
  Rng rng(9);
  for (int d = 0; d < 2; ++d)
    for (int p = 0; p < 6; ++p) {
      ContextResponsePair pair;
      for (int i = 0; i < 3; ++i)
        pair.context.push_back(4 + static_cast<int>(rng.below(16)));
      for (int i = 0; i < 3; ++i)
        pair.response.push_back(4 + static_cast<int>(rng.below(16)));
      pair.corpus = d;
      corpora[d].push_back(pair);
    }
  return corpora;
}

ModelDims toy_dims() {
  ModelDims dims;
  dims.vocab_size = 20;
  dims.num_corpora = 2;
  dims.dim = 8;
  dims.corpus_dim = 4;
  return dims;
}

}  // namespace

TEST_CASE("train with zero epochs returns the seeded initialization") {
  const auto corpora = toy_corpora();
  const auto order = interleave({6, 6}, 1);
  TrainConfig config;
  config.method = Method::kInterleaved;
  config.dim = 8;
  config.corpus_dim = 4;
  config.epochs = 0;
  config.seed = 77;
  auto trained = train(corpora, order, toy_dims(), config);
  auto fresh = GruModel::init(toy_dims(), 77);
  CHECK(params_equal(trained, fresh));
}

TEST_CASE("training is bitwise deterministic under a seed") {
  const auto corpora = toy_corpora();
  const auto order = interleave({6, 6}, 1);
  TrainConfig config;
  config.method = Method::kMultitaskLabeled;
  config.dim = 8;
  config.corpus_dim = 4;
  config.epochs = 3;
  config.learning_rate = 0.2;
  config.seed = 5;
  TrainLog log1, log2;
  auto a = train(corpora, order, toy_dims(), config, nullptr, &log1);
  auto b = train(corpora, order, toy_dims(), config, nullptr, &log2);
  CHECK(params_equal(a, b));
  CHECK(log1.epoch_loss == log2.epoch_loss);
  REQUIRE(log1.epoch_loss.size() == 3);
}

TEST_CASE("training reduces the loss on a toy fixture") {
  const auto corpora = toy_corpora();
  const auto order = interleave({6, 6}, 1);
  TrainConfig config;
  config.method = Method::kInterleaved;
  config.dim = 8;
  config.corpus_dim = 4;
  config.epochs = 12;
  config.learning_rate = 0.3;
  config.seed = 3;
  TrainLog log;
  train(corpora, order, toy_dims(), config, nullptr, &log);
  CHECK(log.epoch_loss.back() < log.epoch_loss.front());
}

TEST_CASE("train validates its inputs") {
  const auto corpora = toy_corpora();
  const auto order = interleave({6, 6}, 1);
  TrainConfig config;
  config.dim = 8;
  config.corpus_dim = 4;

  TrainConfig bad_lr = config;
  bad_lr.learning_rate = 0.0;
  CHECK_THROWS_AS(train(corpora, order, toy_dims(), bad_lr), ValidationError);

  TrainConfig weighted = config;
  weighted.method = Method::kWeighted;
  CHECK_THROWS_AS(train(corpora, order, toy_dims(), weighted), ValidationError);

  MixedDataset broken = order;
  broken.order.push_back({5, 0});
  CHECK_THROWS_AS(train(corpora, broken, toy_dims(), config), ValidationError);
}

TEST_CASE("training aborts on a non-finite loss with a location") {
  const auto corpora = toy_corpora();
  const auto order = interleave({6, 6}, 1);
  TrainConfig config;
  config.method = Method::kInterleaved;
  config.dim = 8;
  config.corpus_dim = 4;
  config.epochs = 4;
  config.learning_rate = 1e300;  // guaranteed blow-up
  config.clip_norm = 1e280;
  try {
    train(corpora, order, toy_dims(), config);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("greedy decoding follows the constructed automaton") {
  // sos -> 4 -> eos over a 6-token vocabulary.
  const int sos = 2, eos = 3;
  const auto model = token_automaton(6, {{sos, 4}, {4, eos}}, sos, eos);
  const auto out = generate(model, {4, 5}, Method::kInterleaved, -1, 10);
  CHECK(out == std::vector<int>{4});

  CHECK(generate(model, {4}, Method::kInterleaved, -1, 0).empty());

  const auto again = generate(model, {4, 5}, Method::kInterleaved, -1, 10);
  CHECK(out == again);
}

TEST_CASE("generation stops at max_len when the automaton loops") {
  const int sos = 2, eos = 3;
  const auto model = token_automaton(6, {{sos, 4}, {4, 5}, {5, 4}}, sos, eos);
  const auto out = generate(model, {4}, Method::kInterleaved, -1, 7);
  CHECK(out == std::vector<int>{4, 5, 4, 5, 4, 5, 4});
}

TEST_CASE("generation validates label availability per method") {
  auto fx = tiny_fixture();
  CHECK_THROWS_AS(generate(fx.params, fx.pair.context, Method::kLabeled, -1, 5),
                  ValidationError);
  CHECK_THROWS_AS(generate(fx.params, fx.pair.context, Method::kLabeled, 9, 5),
                  ValidationError);
  CHECK_THROWS_AS(generate(fx.params, fx.pair.context, Method::kWeighted, 0, 5),
                  ValidationError);
  CHECK_THROWS_AS(generate(fx.params, fx.pair.context, Method::kMultitaskLabeled, 0, 5),
                  ValidationError);
  CHECK_NOTHROW(generate(fx.params, fx.pair.context, Method::kLabeled, 0, 5));
  CHECK_NOTHROW(generate(fx.params, fx.pair.context, Method::kMultitaskLabeled, -1, 5));
}

TEST_CASE("argmax ignores constant logit shifts") {
  Eigen::VectorXd v(4);
  v << 0.3, -1.0, 2.5, 2.4;
  CHECK(argmax(v) == 2);
  const Eigen::VectorXd shifted = v.array() + 123.0;
  CHECK(argmax(shifted) == argmax(v));
}

TEST_CASE("classify picks the classifier argmax") {
  auto fx = tiny_fixture();
  const auto enc = encode(fx.params, fx.pair.context);
  const int direct = argmax(classifier_logits(enc.H, fx.params.classifier_w));
  CHECK(classify(fx.params, fx.pair.context) == direct);
}

TEST_CASE("checkpoints round-trip bitwise and validate their header") {
  TempDir dir;
  auto fx = tiny_fixture();
  save_checkpoint(dir.file("m.ckpt"), fx.params, Method::kWeighted, 42, "cafe0123");
  auto ck = load_checkpoint(dir.file("m.ckpt"));
  CHECK(ck.method == Method::kWeighted);
  CHECK(ck.seed == 42);
  CHECK(ck.vocab_hash == "cafe0123");
  CHECK(ck.params.dims == fx.params.dims);
  CHECK(params_equal(ck.params, fx.params));

  // Identical invocations produce identical bytes.
  save_checkpoint(dir.file("m2.ckpt"), fx.params, Method::kWeighted, 42, "cafe0123");
  CHECK(testsupport::slurp(dir.file("m.ckpt")) == testsupport::slurp(dir.file("m2.ckpt")));

  dir.write("junk.ckpt", "this is not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(dir.file("junk.ckpt")), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(dir.file("missing.ckpt")), IoError);

  // Truncation is caught.
  const auto bytes = testsupport::slurp(dir.file("m.ckpt"));
  dir.write("cut.ckpt", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(dir.file("cut.ckpt")), ValidationError);
}
