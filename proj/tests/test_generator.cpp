#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "evplan/generator.hpp"
#include "evplan/toy.hpp"
#include "test_util.hpp"

using namespace evplan;

namespace {

std::vector<GeneratorExample> examples_from(const toy::VerbalizationSet& set) {
  std::vector<GeneratorExample> out;
  for (std::size_t i = 0; i < set.instances.size(); ++i) {
    const auto& inst = set.instances[i];
    out.push_back({context_text(inst), inst.target,
                   TransitionPath::joined(set.gold[i].observed, set.gold[i].continuation)});
  }
  return out;
}

Tokenizer corpus_tokenizer(const std::vector<GeneratorExample>& ex) {
  std::vector<std::string> texts;
  for (const auto& e : ex) {
    texts.push_back(e.context + " " + e.target);
    texts.push_back(serialize_path(*e.path));
  }
  return Tokenizer::train(texts, 400, path_specials(toy::atomic_relations()));
}

LmConfig small_config(std::size_t vocab, std::size_t width = 16) {
  LmConfig c;
  c.layers = 2;
  c.heads = 2;
  c.width = width;
  c.ff_width = 2 * width;
  c.max_len = 64;
  c.vocab = vocab;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  return worst;
}

TokenBatch text_batch(const Tokenizer& tok, const std::vector<GeneratorExample>& ex) {
  std::vector<std::vector<int>> seqs;
  for (const auto& e : ex) seqs.push_back(encode_generator_example(tok, e.context, e.target, 64).ids);
  return TokenBatch::pack(seqs, tok.pad());
}

std::vector<TransitionPath> paths(const std::vector<GeneratorExample>& ex) {
  std::vector<TransitionPath> out;
  for (const auto& e : ex) out.push_back(*e.path);
  return out;
}

}  // namespace

TEST(EventQuery, IdentityFusionReproducesPathFreeModel) {
  auto ex = examples_from(toy::verbalization_corpus(6, 3, 1));
  auto tok = corpus_tokenizer(ex);
  TransformerLM lm(small_config(tok.size()), 2);
  PathAwareGenerator gen(lm, tok, true, {}, 5);
  gen.query_layer()->set_identity_fusion();
  auto tb = text_batch(tok, ex);
  auto plain = lm.forward(tb).logits;
  EXPECT_LT(max_abs_diff(gen.forward(tb, paths(ex), true).logits, plain), 1e-6);
  EXPECT_LT(max_abs_diff(gen.forward(tb, paths(ex), false).logits, plain), 1e-6);
}

TEST(EventQuery, PathChangesLogitsAndAttentionNormalizes) {
  auto ex = examples_from(toy::verbalization_corpus(4, 3, 2));
  auto tok = corpus_tokenizer(ex);
  QueryLayerConfig qc;
  qc.fusion_layers = 2;
  PathAwareGenerator gen(TransformerLM(small_config(tok.size()), 3), tok, true, qc, 7);
  auto tb = text_batch(tok, ex);
  auto p = paths(ex);
  auto a = gen.forward(tb, p).logits;
  std::swap(p[0], p[1]);
  p[0].steps.back().event = "kim cry outside";
  auto b = gen.forward(tb, p).logits;
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
  EXPECT_EQ(a.cols(), tok.size());

  const auto* q = gen.query_layer();
  auto table = gen.backbone().named_parameters().at("tok_emb");
  std::vector<std::vector<int>> ids;
  std::vector<std::size_t> lens;
  for (const auto& path : p) {
    ids.push_back(encode_path_ids(tok, path, 64));
    lens.push_back(ids.back().size());
  }
  auto pb = TokenBatch::pack(ids, tok.pad());
  Tensor enc = q->encode_path(table, pb, lens);
  ASSERT_EQ(enc.cols(), gen.backbone().config().width);
  Tensor hidden(Shape{tb.batch * tb.length, enc.cols()});
  Rng rng(1, 1);
  for (double& v : hidden.values()) v = rng.normal();
  auto w = q->path_attention_weights(hidden, enc, tb.batch, lens);
  const std::size_t rows = w.size() / pb.length;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < pb.length; ++j) s += w[r * pb.length + j];
    ASSERT_NEAR(s, 1.0, 1e-6);
  }
  // fused width equals the replaced attention width
  EXPECT_EQ(q->fuse(hidden, hidden).cols(), enc.cols());
}

TEST(EventQuery, LossGradientMatchesFiniteDifferences) {
  auto ex = examples_from(toy::verbalization_corpus(3, 2, 3));
  auto tok = corpus_tokenizer(ex);
  QueryLayerConfig qc;
  qc.fusion_layers = 2;
  PathAwareGenerator gen(TransformerLM(small_config(tok.size()), 4), tok, true, qc, 9);
  auto params = gen.parameters();
  for (auto& t : params) t.set_requires_grad(true);
  auto gc = testkit::grad_check([&] { return gen.loss(ex); }, params, 6, 1e-4);
  EXPECT_LT(gc.max_rel_error, 1e-4);
  EXPECT_GT(gc.checked, 150u);

  // gradients reach the path encoder and the shared embedding rows of path tokens
  for (auto& t : params) t.clear_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(gen.loss(ex));
  }
  double enc_norm = 0.0;
  auto qp = gen.query_layer()->parameters();
  for (double g : qp.at("enc.wq").grad()) enc_norm += g * g;
  EXPECT_GT(enc_norm, 0.0);
}

TEST(Generator, MissingGoldPathNamesInstance) {
  auto ex = examples_from(toy::verbalization_corpus(3, 2, 3));
  auto tok = corpus_tokenizer(ex);
  PathAwareGenerator gen(TransformerLM(small_config(tok.size()), 4), tok, true, {}, 9);
  ex[1].path.reset();
  try {
    gen.loss(ex);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("instance 1"), std::string::npos);
  }
  // the plain fine-tuned model ignores paths
  PathAwareGenerator plain(TransformerLM(small_config(tok.size()), 4), tok, false, {}, 9);
  EXPECT_TRUE(std::isfinite(plain.loss(ex).item()));
}

TEST(Generator, EmptyPathFallsBackToNoEvent) {
  auto ex = examples_from(toy::verbalization_corpus(3, 2, 3));
  auto tok = corpus_tokenizer(ex);
  EXPECT_EQ(encode_path_ids(tok, TransitionPath{}, 64), std::vector<int>{tok.noevt()});
  PathAwareGenerator gen(TransformerLM(small_config(tok.size()), 4), tok, true, {}, 9);
  DecodeParams dp;
  dp.max_new = 6;
  EXPECT_EQ(gen.generate(ex[0].context, TransitionPath{}, dp).size(), 1u);
}

TEST(Generator, OverfitsFiftyInstancesAndGreedyIsDeterministic) {
  auto ex = examples_from(toy::verbalization_corpus(50, 10, 4));
  auto tok = corpus_tokenizer(ex);
  PathAwareGenerator gen(TransformerLM(small_config(tok.size(), 32), 6), tok, true, {}, 2);
  GeneratorTrainOptions o;
  o.optim.learning_rate = 3e-3;
  o.batch = 10;
  o.max_steps = 300;
  auto rep = gen.train(ex, {}, o);
  ASSERT_EQ(rep.steps, 300u);
  auto mean = [&](std::size_t from, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = from; i < from + n; ++i) s += rep.losses[i];
    return s / static_cast<double>(n);
  };
  // smoothed over 25-step windows
  for (std::size_t w = 25; w + 25 <= 150; w += 25) EXPECT_LT(mean(w, 25), mean(w - 25, 25));
  EXPECT_LT(gen.evaluate_loss(ex), 0.1);
  DecodeParams dp;
  dp.max_new = 12;
  auto a = gen.generate(ex[0].context, *ex[0].path, dp);
  auto b = gen.generate(ex[0].context, *ex[0].path, dp);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0], ex[0].target);
}

TEST(Generator, TrainsWithNoEventPaths) {
  auto ex = examples_from(toy::verbalization_corpus(12, 3, 5));
  auto tok = corpus_tokenizer(ex);
  for (auto& e : ex) e.path = TransitionPath{std::string(tokens::noevt), {}, std::nullopt};
  PathAwareGenerator gen(TransformerLM(small_config(tok.size()), 6), tok, true, {}, 2);
  GeneratorTrainOptions o;
  o.batch = 4;
  o.max_steps = 6;
  auto rep = gen.train(ex, ex, o);
  EXPECT_EQ(rep.losses.size(), rep.steps);
  for (double l : rep.losses) EXPECT_TRUE(std::isfinite(l));
  EXPECT_TRUE(rep.best_valid_loss.has_value());
}

TEST(Generator, CheckpointRoundTrip) {
  auto ex = examples_from(toy::verbalization_corpus(4, 2, 6));
  auto tok = corpus_tokenizer(ex);
  QueryLayerConfig qc;
  qc.fusion_layers = 2;
  PathAwareGenerator gen(TransformerLM(small_config(tok.size()), 6), tok, true, qc, 2);
  auto file = std::filesystem::temp_directory_path() / "evplan_generator_roundtrip.ckpt";
  save_checkpoint(file, gen.state());
  auto back = PathAwareGenerator::from_state(load_checkpoint(file), tok);
  std::filesystem::remove(file);
  ASSERT_TRUE(back.path_aware());
  EXPECT_EQ(back.query_layer()->config().fusion_layers, 2u);
  auto tb = text_batch(tok, ex);
  EXPECT_EQ(max_abs_diff(gen.forward(tb, paths(ex)).logits, back.forward(tb, paths(ex)).logits), 0.0);

  PathAwareGenerator plain(TransformerLM(small_config(tok.size()), 6), tok, false, {}, 2);
  auto back_plain = PathAwareGenerator::from_state(plain.state(), tok);
  EXPECT_FALSE(back_plain.path_aware());
}
