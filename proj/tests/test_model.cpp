#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace acctdst;

namespace {

ModelConfig tiny_config(std::size_t d, std::size_t layers, std::size_t heads, std::size_t vocab = 24,
                        std::size_t slots = 5) {
  ModelConfig c;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = heads;
  c.max_seq_len = 32;
  c.vocab_size = vocab;
  c.n_slots = slots;
  c.dropout = 0.0;
  c.init_std = 0.3;
  return c;
}

std::vector<int> random_context(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> ids{kBos};
  while (ids.size() + 1 < n) ids.push_back(static_cast<int>(kNumSpecials + rng.below(vocab - kNumSpecials)));
  ids.push_back(kSepContext);
  return ids;
}

std::vector<int> random_target(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> ids;
  while (ids.size() < n) ids.push_back(static_cast<int>(rng.below(vocab)));
  return ids;
}

using Mat = std::vector<std::vector<double>>;

Mat get(const Param<double>& p) {
  Mat m(p.value.rows, std::vector<double>(p.value.cols));
  for (std::size_t i = 0; i < p.value.rows; ++i)
    for (std::size_t j = 0; j < p.value.cols; ++j) m[i][j] = p.value(i, j);
  return m;
}

Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat add_bias(Mat x, const Mat& b) {
  for (auto& r : x)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[0][j];
  return x;
}

Mat layer_norm(const Mat& x, const Mat& g, const Mat& b) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mean = 0, var = 0;
    for (double v : x[i]) mean += v;
    mean /= double(x[i].size());
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= double(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * g[0][j] + b[0][j];
  }
  return y;
}

/// Step-by-step recomputation of the forward pass for one layer and one head.
void reference_forward(ModelParameters<double>& p, const std::vector<int>& seq, std::size_t sep,
                       Mat& token_logits, std::vector<double>& slot_logits) {
  const std::size_t n = seq.size(), d = p.config().d_model;
  Mat x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x[i][j] = p.tok_emb().value(seq[i], j) + p.pos_emb().value(i, j);
  const auto& blk = p.blocks()[0];
  Mat a = layer_norm(x, get(p.at(blk.ln1_g)), get(p.at(blk.ln1_b)));
  Mat qkv = add_bias(matmul(a, get(p.at(blk.w_qkv))), get(p.at(blk.b_qkv)));
  Mat att(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(i + 1);
    double total = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += qkv[i][c] * qkv[j][d + c];
      w[j] = std::exp(s / std::sqrt(double(d)));
      total += w[j];
    }
    for (std::size_t j = 0; j <= i; ++j)
      for (std::size_t c = 0; c < d; ++c) att[i][c] += w[j] / total * qkv[j][2 * d + c];
  }
  Mat o = add_bias(matmul(att, get(p.at(blk.w_o))), get(p.at(blk.b_o)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] += o[i][j];
  Mat m = layer_norm(x, get(p.at(blk.ln2_g)), get(p.at(blk.ln2_b)));
  m = add_bias(matmul(m, get(p.at(blk.w_fc))), get(p.at(blk.b_fc)));
  for (auto& r : m)
    for (auto& v : r) v = 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
  m = add_bias(matmul(m, get(p.at(blk.w_proj))), get(p.at(blk.b_proj)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] += m[i][j];
  Mat h = layer_norm(x, get(p.lnf_g()), get(p.lnf_b()));
  Mat rows(h.begin() + long(sep), h.end());
  token_logits = matmul(rows, get(*p.lm_head()));
  Mat phi = {h[sep]};
  slot_logits = add_bias(matmul(phi, get(p.acc_w())), get(p.acc_b()))[0];
}

}  // namespace

TEST(Model, ForwardMatchesIndependentRecomputation) {
  ModelParameters<double> p(tiny_config(8, 1, 1));
  p.initialize(11);
  Rng rng(3);
  const auto ctx = random_context(rng, 9, 24);
  const auto tgt = random_target(rng, 6, 24);
  Tape<double> tape(false);
  auto out = forward(tape, p, ctx, tgt, Mode::kInfer);

  std::vector<int> seq = ctx;
  seq.insert(seq.end(), tgt.begin(), tgt.end() - 1);
  Mat ref_logits;
  std::vector<double> ref_slots;
  reference_forward(p, seq, ctx.size() - 1, ref_logits, ref_slots);

  const auto& logits = tape.value(out.token_logits);
  ASSERT_EQ(logits.rows, tgt.size());
  double max_diff = 0;
  for (std::size_t i = 0; i < logits.rows; ++i)
    for (std::size_t j = 0; j < logits.cols; ++j)
      max_diff = std::max(max_diff, std::abs(logits(i, j) - ref_logits[i][j]));
  const auto& sl = tape.value(out.slot_logits);
  for (std::size_t s = 0; s < sl.cols; ++s) max_diff = std::max(max_diff, std::abs(sl(0, s) - ref_slots[s]));
  EXPECT_LT(max_diff, 1e-10);
}

TEST(Model, ZeroHeadGivesOneHalf) {
  ModelParameters<double> p(tiny_config(8, 1, 2));
  p.initialize(1);
  p.acc_w().value.zero();
  p.acc_b().value.zero();
  Rng rng(1);
  const auto ctx = random_context(rng, 7, 24);
  Tape<double> tape(false);
  auto out = forward(tape, p, ctx, std::vector<int>{kBraceOpen}, Mode::kInfer);
  for (double z : tape.value(out.slot_logits).data) EXPECT_EQ(z, 0.0);
  const auto probs = sigmoid_head<double>(tape.value(out.phi).data, p.acc_w().value, p.acc_b().value);
  for (double q : probs) EXPECT_EQ(q, 0.5);
}

TEST(Model, PermutingHeadColumnsPermutesLogits) {
  ModelParameters<double> p(tiny_config(8, 1, 2));
  p.initialize(2);
  Rng rng(2);
  const auto ctx = random_context(rng, 7, 24);
  Tape<double> t1(false);
  const auto before = t1.value(forward(t1, p, ctx, std::vector<int>{kBraceOpen}, Mode::kInfer).slot_logits);
  auto& w = p.acc_w().value;
  for (std::size_t r = 0; r < w.rows; ++r) std::swap(w(r, 1), w(r, 3));
  std::swap(p.acc_b().value.data[1], p.acc_b().value.data[3]);
  Tape<double> t2(false);
  const auto after = t2.value(forward(t2, p, ctx, std::vector<int>{kBraceOpen}, Mode::kInfer).slot_logits);
  EXPECT_EQ(after.data[1], before.data[3]);
  EXPECT_EQ(after.data[3], before.data[1]);
  EXPECT_EQ(after.data[0], before.data[0]);
}

TEST(Model, CausalMasking) {
  ModelParameters<double> p(tiny_config(8, 2, 2));
  p.initialize(4);
  Rng rng(4);
  const auto ctx = random_context(rng, 8, 24);
  auto tgt = random_target(rng, 6, 24);
  Tape<double> t1(false);
  const auto a = t1.value(forward(t1, p, ctx, tgt, Mode::kInfer).token_logits);
  tgt[4] = (tgt[4] + 1) % 24;  // feeds row 5 only
  Tape<double> t2(false);
  const auto b = t2.value(forward(t2, p, ctx, tgt, Mode::kInfer).token_logits);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) EXPECT_EQ(a(i, j), b(i, j));
  bool changed = false;
  for (std::size_t j = 0; j < a.cols; ++j) changed = changed || a(5, j) != b(5, j);
  EXPECT_TRUE(changed);
}

TEST(Model, IncrementalDecoderMatchesFullForward) {
  ModelParameters<double> p(tiny_config(8, 2, 2));
  p.initialize(5);
  Rng rng(5);
  const auto ctx = random_context(rng, 8, 24);
  const auto tgt = random_target(rng, 5, 24);
  Tape<double> tape(false);
  const auto out = forward(tape, p, ctx, tgt, Mode::kInfer);
  const auto& full = tape.value(out.token_logits);
  DecoderState<double> st(p);
  st.feed(ctx);
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    const auto logits = st.logits();
    for (std::size_t j = 0; j < logits.size(); ++j) EXPECT_NEAR(logits[j], full(i, j), 1e-12);
    st.step(tgt[i]);
  }
}

TEST(Autograd, SumOfParametersHasUnitGradient) {
  ModelParameters<double> p(tiny_config(8, 1, 1));
  p.initialize(1);
  Tape<double> tape;
  std::vector<Tape<double>::Var> parts;
  for (auto& param : p.all()) parts.push_back(tape.param_sum(param));
  auto total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = tape.combine(total, 1.0, parts[i], 1.0);
  tape.backward(total);
  for (const auto& param : p.all())
    for (double g : param.grad.data) ASSERT_EQ(g, 1.0) << param.name;
}

TEST(Autograd, ZeroLambdaLeavesHeadGradientZero) {
  ModelParameters<double> p(tiny_config(8, 1, 2));
  p.initialize(9);
  Rng rng(9);
  Example ex;
  ex.context = random_context(rng, 8, 24);
  ex.target = random_target(rng, 4, 24);
  ex.labels = {1, 0, 1, 0, 0};
  Tape<double> tape;
  const auto loss = batch_loss<double>(tape, p, {&ex}, 0.0, Mode::kInfer, nullptr);
  tape.backward(loss.account);
  for (double g : p.acc_w().grad.data) EXPECT_EQ(g, 0.0);
  for (double g : p.acc_b().grad.data) EXPECT_EQ(g, 0.0);
  double other = 0;
  for (double g : p.tok_emb().grad.data) other += std::abs(g);
  EXPECT_GT(other, 0.0);
}

TEST(Autograd, GradientsMatchFiniteDifferences) {
  ModelParameters<double> p(tiny_config(8, 2, 2, 20, 4));
  p.initialize(7);
  Rng rng(7);
  std::vector<Example> exs(2);
  for (auto& ex : exs) {
    ex.context = random_context(rng, 6, 20);
    ex.target = random_target(rng, 4, 20);
    ex.labels = {1, 0, 0, 1};
  }
  const std::vector<const Example*> batch = {&exs[0], &exs[1]};
  auto loss_at = [&] {
    Tape<double> tape(false);
    return tape.scalar(batch_loss<double>(tape, p, batch, 0.25, Mode::kInfer, nullptr).account);
  };
  p.zero_grad();
  Tape<double> tape;
  tape.backward(batch_loss<double>(tape, p, batch, 0.25, Mode::kInfer, nullptr).account);
  const double h = 1e-4;
  double worst = 0;
  for (auto& param : p.all())
    for (std::size_t k = 0; k < param.value.size(); ++k) {
      const double orig = param.value.data[k];
      param.value.data[k] = orig + h;
      const double up = loss_at();
      param.value.data[k] = orig - h;
      const double down = loss_at();
      param.value.data[k] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = param.grad.data[k];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, rel);
    }
  EXPECT_LT(worst, 1e-3);
}

TEST(SlotHead, SigmoidValues) {
  EXPECT_EQ(slot_probability(0.0), 0.5);
  const double hi = slot_probability(50.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_GT(hi, 1.0 - 1e-15);
  EXPECT_TRUE(std::isfinite(slot_probability(-50.0)));
  EXPECT_NEAR(slot_probability(-1.0), 0.2689414213699951, 1e-15);
  EXPECT_NEAR(slot_probability(2.0), 0.8807970779778823, 1e-15);
}

TEST(Checkpoint, RoundTripAndGuards) {
  auto corpus = generate_synthetic_corpus(test::small_synth(10, 2));
  const auto vocab = build_vocab(corpus.train);
  auto cfg = tiny_config(8, 1, 2, vocab.size(), corpus.ontology.size());
  ModelParameters<float> p(cfg);
  p.initialize(3);
  const auto bytes = serialize_checkpoint(p, corpus.ontology, vocab, {{"k", 1}});
  const auto ck = parse_checkpoint<float>(bytes, {corpus.ontology.hash(), vocab.hash()});
  EXPECT_EQ(serialize_checkpoint(ck.params, ck.ontology, ck.vocab, ck.metadata), bytes);
  EXPECT_EQ(ck.metadata.at("k"), 1);
  const auto as_double = parse_checkpoint<double>(bytes);
  EXPECT_EQ(as_double.params.at(0).value.data[3], double(p.at(0).value.data[3]));
  try {
    parse_checkpoint<float>(bytes, {std::string("other"), std::nullopt});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "ontology_mismatch");
  }
  EXPECT_THROW(parse_checkpoint<float>("garbage"), Error);
  EXPECT_THROW(parse_checkpoint<float>(bytes.substr(0, bytes.size() - 3)), Error);
}

TEST(ModelConfig, ListsEveryProblem) {
  ModelConfig c;
  c.d_model = 10;
  c.n_heads = 4;
  c.n_layers = 0;
  c.dropout = 1.5;
  const auto bad = c.problems();
  EXPECT_EQ(bad.size(), 5u);  // heads, layers, vocab, slots, dropout
}
