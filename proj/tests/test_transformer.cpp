#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "evplan/decoding.hpp"
#include "evplan/error.hpp"
#include "evplan/optim.hpp"
#include "evplan/transformer.hpp"
#include "test_util.hpp"

using namespace evplan;
using evplan::testkit::grad_check;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat as_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.values()[i * t.cols() + j];
  return m;
}

std::vector<double> as_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<double> ref_linear(const std::vector<double>& x, const Mat& w, const std::vector<double>& b) {
  std::vector<double> y(b);
  for (std::size_t j = 0; j < y.size(); ++j)
    for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * w[i][j];
  return y;
}

std::vector<double> ref_layer_norm(const std::vector<double>& x, const std::vector<double>& g,
                                   const std::vector<double>& b) {
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * g[i] + b[i];
  return y;
}

double ref_gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

// Straight-line single-sequence forward, one position and one head at a time.
Mat reference_forward(const TransformerLM& model, const std::vector<int>& ids) {
  const auto p = model.named_parameters();
  const auto& cfg = model.config();
  const std::size_t T = ids.size(), d = cfg.width, H = cfg.heads, dh = d / H;
  auto P = [&](const std::string& name) { return p.at(name); };
  Mat tok = as_mat(P("tok_emb")), pos = as_mat(P("pos_emb"));
  Mat x(T, std::vector<double>(d));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < d; ++i) x[t][i] = tok[static_cast<std::size_t>(ids[t])][i] + pos[t][i];
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Mat q(T), k(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      auto h = ref_layer_norm(x[t], as_vec(P(pre + "ln1.gain")), as_vec(P(pre + "ln1.bias")));
      q[t] = ref_linear(h, as_mat(P(pre + "attn.wq")), as_vec(P(pre + "attn.bq")));
      k[t] = ref_linear(h, as_mat(P(pre + "attn.wk")), as_vec(P(pre + "attn.bk")));
      v[t] = ref_linear(h, as_mat(P(pre + "attn.wv")), as_vec(P(pre + "attn.bv")));
    }
    Mat next = x;
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> a(d, 0.0);
      for (std::size_t hd = 0; hd < H; ++hd) {
        std::vector<double> s(t + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= t; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += q[t][hd * dh + c] * k[j][hd * dh + c];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j <= t; ++j)
          for (std::size_t c = 0; c < dh; ++c) a[hd * dh + c] += s[j] / z * v[j][hd * dh + c];
      }
      auto o = ref_linear(a, as_mat(P(pre + "attn.wo")), as_vec(P(pre + "attn.bo")));
      for (std::size_t i = 0; i < d; ++i) next[t][i] += o[i];
      auto h2 = ref_layer_norm(next[t], as_vec(P(pre + "ln2.gain")), as_vec(P(pre + "ln2.bias")));
      auto f = ref_linear(h2, as_mat(P(pre + "mlp.w_fc")), as_vec(P(pre + "mlp.b_fc")));
      for (double& e : f) e = ref_gelu(e);
      auto g = ref_linear(f, as_mat(P(pre + "mlp.w_proj")), as_vec(P(pre + "mlp.b_proj")));
      for (std::size_t i = 0; i < d; ++i) next[t][i] += g[i];
    }
    x = next;
  }
  Mat logits(T, std::vector<double>(cfg.vocab));
  for (std::size_t t = 0; t < T; ++t) {
    auto h = ref_layer_norm(x[t], as_vec(P("ln_f.gain")), as_vec(P("ln_f.bias")));
    for (std::size_t w = 0; w < cfg.vocab; ++w)
      for (std::size_t i = 0; i < d; ++i) logits[t][w] += h[i] * tok[w][i];
  }
  return logits;
}

LmConfig tiny(std::size_t vocab, std::size_t width = 8, std::size_t layers = 2) {
  LmConfig c;
  c.layers = layers;
  c.heads = 2;
  c.width = width;
  c.ff_width = 4 * width;
  c.max_len = 16;
  c.vocab = vocab;
  return c;
}

// Larger init so the reference comparison exercises non-trivial activations.
void perturb(TransformerLM& m, std::uint64_t seed, double s) {
  Rng rng(seed);
  for (auto& [name, t] : m.named_parameters()) {
    Tensor h = t;
    for (double& v : h.values()) v += rng.normal(0.0, s);
  }
}

}  // namespace

TEST(LmConfig, Validation) {
  LmConfig c = tiny(10);
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny(0);
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Transformer, SingleBosShape) {
  TransformerLM m(tiny(11), 1);
  auto out = m.forward(TokenBatch::pack({{0}}, 2));
  EXPECT_EQ(out.logits.shape(), (Shape{1, 11}));
  for (double v : out.logits.values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(out.hidden.size(), 2u);
}

TEST(Transformer, MatchesScalarReference) {
  TransformerLM m(tiny(13), 7);
  perturb(m, 8, 0.3);
  std::vector<int> ids{1, 5, 12, 0, 7, 7};
  auto got = m.forward(TokenBatch::pack({ids}, 2)).logits;
  auto ref = reference_forward(m, ids);
  double worst = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t)
    for (std::size_t w = 0; w < 13; ++w) worst = std::max(worst, std::abs(got.values()[t * 13 + w] - ref[t][w]));
  EXPECT_LT(worst, 1e-8);
}

TEST(Transformer, Causality) {
  TransformerLM m(tiny(13), 3);
  perturb(m, 4, 0.3);
  std::vector<int> a{1, 2, 3, 4, 5, 6}, b{1, 2, 3, 9, 11, 0};
  auto la = m.forward(TokenBatch::pack({a}, 12)).logits;
  auto lb = m.forward(TokenBatch::pack({b}, 12)).logits;
  for (std::size_t i = 0; i < 3 * 13; ++i) EXPECT_EQ(la.values()[i], lb.values()[i]);
  bool differs = false;
  for (std::size_t i = 3 * 13; i < 6 * 13; ++i) differs |= la.values()[i] != lb.values()[i];
  EXPECT_TRUE(differs);
}

TEST(Transformer, BatchedEqualsSingle) {
  TransformerLM m(tiny(13), 5);
  perturb(m, 6, 0.3);
  std::vector<int> a{1, 2, 3, 4}, b{7, 8};
  auto both = m.forward(TokenBatch::pack({a, b}, 0)).logits;
  auto only_b = m.forward(TokenBatch::pack({b}, 0)).logits;
  for (std::size_t i = 0; i < 2 * 13; ++i) EXPECT_NEAR(both.values()[4 * 13 + i], only_b.values()[i], 1e-12);
}

TEST(Transformer, LengthLimit) {
  TransformerLM m(tiny(5), 1);
  std::vector<int> ids(17, 1);
  EXPECT_THROW(m.forward(TokenBatch::pack({ids}, 0)), LengthError);
  ForwardOptions opts;
  opts.position_offset = 10;
  std::vector<int> ok(6, 1), too_long(7, 1);
  EXPECT_NO_THROW(m.forward(TokenBatch::pack({ok}, 0), opts));
  EXPECT_THROW(m.forward(TokenBatch::pack({too_long}, 0), opts), LengthError);
}

TEST(Transformer, OutOfVocabRejected) {
  TransformerLM m(tiny(5), 1);
  EXPECT_THROW(m.forward(TokenBatch::pack({{1, 5}}, 0)), DimensionError);
}

TEST(LmLoss, UntrainedNearLogV) {
  const std::size_t V = 50;
  TransformerLM m(tiny(V, 16), 2);
  Rng rng(9);
  std::vector<std::vector<int>> seqs(4);
  for (auto& s : seqs)
    for (int i = 0; i < 10; ++i) s.push_back(1 + static_cast<int>(rng.below(V - 1)));
  const double loss = m.lm_loss(TokenBatch::pack(seqs, 0), 0).item();
  EXPECT_NEAR(loss, std::log(static_cast<double>(V)), 0.1 * std::log(static_cast<double>(V)));
}

TEST(LmLoss, SingleTokenVocabIsZero) {
  TransformerLM m(tiny(1), 2);
  EXPECT_NEAR(m.lm_loss(TokenBatch::pack({{0, 0, 0}}, -1), -1).item(), 0.0, 1e-15);
}

TEST(LmLoss, AllPadIsEmptyBatch) {
  TransformerLM m(tiny(5), 2);
  EXPECT_THROW(m.lm_loss(TokenBatch::pack({{0, 0, 0}}, 0), 0), EmptyBatchError);
  EXPECT_THROW(m.lm_loss(TokenBatch::pack({{3}}, 0), 0), EmptyBatchError);
}

TEST(LmLoss, GradientMatchesFiniteDifferences) {
  TransformerLM m(tiny(9, 8), 11);
  perturb(m, 12, 0.2);
  auto batch = TokenBatch::pack({{1, 4, 2, 8}, {3, 3, 7}}, 0);
  auto r = grad_check([&] { return m.lm_loss(batch, 0); }, m.parameters(), 6);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GT(r.checked, 50u);
}

TEST(Transformer, MemoryAndOverrideHooks) {
  TransformerLM m(tiny(9), 11);
  perturb(m, 13, 0.2);
  auto batch = TokenBatch::pack({{1, 2, 3}}, 0);
  auto plain = m.forward(batch).logits;
  // identity override changes nothing
  ForwardOptions same;
  same.override_layer = 1;
  same.attention_override = [](const Tensor& a, const Tensor&) { return a; };
  auto with_id = m.forward(batch, same).logits;
  for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_EQ(plain.values()[i], with_id.values()[i]);
  // memory on one layer changes the output
  Rng rng(14);
  ForwardOptions mem;
  mem.memory.resize(2);
  mem.memory[0] = {testkit::random_tensor({2, 8}, rng, false), testkit::random_tensor({2, 8}, rng, false)};
  mem.position_offset = 2;
  auto with_mem = m.forward(batch, mem).logits;
  bool differs = false;
  for (std::size_t i = 0; i < plain.size(); ++i) differs |= plain.values()[i] != with_mem.values()[i];
  EXPECT_TRUE(differs);
}

TEST(Transformer, StateRoundTrip) {
  TransformerLM m(tiny(9), 11);
  perturb(m, 15, 0.2);
  auto copy = TransformerLM::from_state(m.state());
  auto batch = TokenBatch::pack({{1, 2, 3}}, 0);
  auto a = m.forward(batch).logits, b = copy.forward(batch).logits;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
  EXPECT_EQ(checksum(m.named_parameters()), checksum(copy.named_parameters()));
  auto c = m.clone();
  perturb(c, 16, 0.1);
  EXPECT_NE(checksum(m.named_parameters()), checksum(c.named_parameters()));
}

TEST(Transformer, TrainingReducesLoss) {
  TransformerLM m(tiny(7, 16), 3);
  auto batch = TokenBatch::pack({{1, 2, 3, 4, 5, 6}, {1, 3, 5, 2, 4, 6}}, 0);
  auto params = m.parameters();
  AdamWState st({1e-2, 0.9, 0.999, 1e-8, 0.0}, params);
  const double first = m.lm_loss(batch, 0).item();
  for (int step = 0; step < 60; ++step) {
    zero_grads(params);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(m.lm_loss(batch, 0));
    adamw_step(params, st);
  }
  EXPECT_LT(m.lm_loss(batch, 0).item(), 0.3 * first);
}

// decoding

namespace {

// 3 tokens; next-token log-probabilities depend only on the previous token.
NextLogitsFn markov_table(const std::vector<std::vector<double>>& probs) {
  return [probs](const std::vector<std::vector<int>>& prefixes) {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) {
      std::vector<double> row;
      for (double q : probs[static_cast<std::size_t>(p.back())]) row.push_back(std::log(q));
      out.push_back(row);
    }
    return out;
  };
}

}  // namespace

TEST(Decode, BeamMatchesExhaustiveEnumeration) {
  const std::vector<std::vector<double>> probs{{0.1, 0.5, 0.4}, {0.45, 0.1, 0.45}, {0.3, 0.3, 0.4}};
  auto next = markov_table(probs);
  std::map<double, std::vector<int>, std::greater<>> all;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) {
        const double lp = std::log(probs[0][static_cast<std::size_t>(a)]) +
                          std::log(probs[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]) +
                          std::log(probs[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)]);
        all.emplace(lp, std::vector<int>{a, b, c});
      }
  DecodeParams p;
  p.strategy = DecodeStrategy::beam_topk;
  p.beam_width = 2;
  p.num_return = 2;
  p.top_k = 5;
  p.max_new = 3;
  std::vector<int> prefix{0};
  auto beams = decode(prefix, p, next);
  ASSERT_EQ(beams.size(), 2u);
  auto it = all.begin();
  EXPECT_EQ(beams[0].tokens, it->second);
  EXPECT_NEAR(beams[0].log_prob, it->first, 1e-12);
  ++it;
  EXPECT_EQ(beams[1].tokens, it->second);
}

TEST(Decode, AllMassOnEos) {
  auto next = [](const std::vector<std::vector<int>>& prefixes) {
    return std::vector<std::vector<double>>(prefixes.size(), std::vector<double>{-50, -50, 50});
  };
  std::vector<int> prefix{0};
  for (auto s : {DecodeStrategy::greedy, DecodeStrategy::beam_topk, DecodeStrategy::topk_sample}) {
    DecodeParams p;
    p.strategy = s;
    p.eos_id = 2;
    auto out = decode(prefix, p, next);
    ASSERT_FALSE(out.empty());
    EXPECT_EQ(out[0].tokens, std::vector<int>{2});
    EXPECT_TRUE(out[0].finished);
  }
}

TEST(Decode, EmptyPrefixRejected) {
  DecodeParams p;
  EXPECT_THROW(decode(std::vector<int>{}, p, markov_table({{1.0}})), UsageError);
  p.max_new = 0;
  EXPECT_THROW(decode(std::vector<int>{0}, p, markov_table({{1.0}})), UsageError);
}

TEST(Decode, GreedyDeterministicAndLocallyOptimal) {
  TransformerLM m(tiny(12, 16), 21);
  perturb(m, 22, 0.3);
  auto next = lm_next_logits(m, 0);
  DecodeParams p;
  p.max_new = 6;
  std::vector<int> prefix{1};
  auto a = decode(prefix, p, next), b = decode(prefix, p, next);
  EXPECT_EQ(a[0].tokens, b[0].tokens);
  // each greedy token is the argmax of its step
  std::vector<int> ctx = prefix;
  for (int tok : a[0].tokens) {
    auto lp = log_softmax(next({ctx})[0]);
    for (double v : lp) EXPECT_LE(v, lp[static_cast<std::size_t>(tok)]);
    ctx.push_back(tok);
  }
}

TEST(Decode, SamplingDeterministicGivenSeed) {
  TransformerLM m(tiny(12, 16), 23);
  perturb(m, 24, 0.5);
  auto next = lm_next_logits(m, 0);
  DecodeParams p;
  p.strategy = DecodeStrategy::topk_sample;
  p.max_new = 8;
  p.num_return = 3;
  p.seed = 5;
  std::vector<int> prefix{1};
  auto a = decode(prefix, p, next), b = decode(prefix, p, next);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[i].tokens);
  p.strategy = DecodeStrategy::beam_topk;
  auto c = decode(prefix, p, next), d = decode(prefix, p, next);
  ASSERT_EQ(c.size(), 3u);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c[i].tokens, d[i].tokens);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GE(c[i - 1].score, c[i].score);
}
