#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "evplan/lm_training.hpp"
#include "evplan/metrics.hpp"
#include "evplan/rng.hpp"

using namespace evplan;

namespace {

// Direct counting: every candidate n-gram occurrence is matched against a
// consumable multiset of reference n-grams.
double counting_bleu(const std::vector<std::string>& cands, const std::vector<std::string>& refs, std::size_t max_n) {
  double log_p = 0.0;
  std::size_t c_len = 0, r_len = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    c_len += whitespace_tokens(cands[i]).size();
    r_len += whitespace_tokens(refs[i]).size();
  }
  for (std::size_t n = 1; n <= max_n; ++n) {
    double hit = 0, tot = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      auto c = whitespace_tokens(cands[i]);
      auto r = whitespace_tokens(refs[i]);
      std::vector<std::vector<std::string>> pool;
      for (std::size_t k = 0; k + n <= r.size(); ++k) pool.emplace_back(r.begin() + k, r.begin() + k + n);
      for (std::size_t k = 0; k + n <= c.size(); ++k) {
        std::vector<std::string> g(c.begin() + k, c.begin() + k + n);
        tot += 1;
        auto it = std::find(pool.begin(), pool.end(), g);
        if (it != pool.end()) {
          hit += 1;
          pool.erase(it);
        }
      }
    }
    if (hit == 0) return 0.0;
    log_p += std::log(hit / tot);
  }
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - double(r_len) / double(c_len));
  return bp * std::exp(log_p / double(max_n));
}

std::string random_sentence(Rng& rng) {
  static const std::vector<std::string> words{"the", "cat", "dog", "sat", "on", "a", "mat", "ran"};
  std::string s;
  const std::size_t n = 2 + rng.below(6);
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + words[rng.below(words.size())];
  return s;
}

}  // namespace

TEST(Bleu, IdentityAndClipping) {
  std::vector<std::string> s{"the cat sat on the mat", "a dog ran"};
  EXPECT_DOUBLE_EQ(bleu(s, s, 1), 1.0);
  EXPECT_DOUBLE_EQ(bleu(s, s, 4), 1.0);
  EXPECT_NEAR(bleu({"the the the"}, {"the cat"}, 1), 1.0 / 3.0, 1e-9);
  // shorter candidate gets the brevity penalty
  EXPECT_NEAR(bleu({"the cat"}, {"the cat sat on"}, 1), std::exp(1.0 - 2.0), 1e-12);
}

TEST(Bleu, MatchesCountingOracleOnRandomPairs) {
  Rng rng(9, 1);
  std::vector<std::string> c, r;
  for (int i = 0; i < 20; ++i) {
    c.push_back(random_sentence(rng));
    r.push_back(random_sentence(rng));
  }
  for (std::size_t n : {1u, 2u, 4u}) EXPECT_NEAR(bleu(c, r, n), counting_bleu(c, r, n), 1e-9) << n;
  for (int i = 0; i < 20; ++i) {
    std::vector<std::string> c1{c[i]}, r1{r[i]};
    EXPECT_NEAR(bleu(c1, r1, 2), counting_bleu(c1, r1, 2), 1e-9);
  }
}

TEST(Bleu, Errors) {
  EXPECT_THROW(bleu({}, {}, 1), DataError);
  EXPECT_THROW(bleu({"a"}, {"a", "b"}, 1), DataError);
}

TEST(Dist, HandEnumeratedValues) {
  EXPECT_DOUBLE_EQ(dist({"the cat", "the dog"}, 1), 0.75);
  EXPECT_NEAR(dist({"a a a"}, 1), 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(dist({"x y z w"}, 1), 1.0);
  EXPECT_DOUBLE_EQ(dist({"the cat", "the cat"}, 2), 0.5);
  EXPECT_THROW(dist({"one", "two"}, 2), MetricError);
  EXPECT_THROW(dist({}, 1), DataError);
}

TEST(Grouping, StopWordsAndContentLength) {
  EXPECT_GE(stop_words().size(), 140u);
  EXPECT_LE(stop_words().size(), 160u);
  EXPECT_EQ(content_length("The cat sat on the mat ."), 3u);
}

TEST(Grouping, AllEqualLengthsFillOneBucket) {
  std::vector<std::string> refs(10, "alex won money .");
  auto reps = grouped_report(refs, refs, {}, Grouping::target_length);
  ASSERT_EQ(reps.size(), 5u);
  EXPECT_EQ(reps[0].candidates, 10u);
  EXPECT_FALSE(reps[0].empty);
  for (int g = 1; g < 5; ++g) EXPECT_TRUE(reps[g].empty);
  EXPECT_THROW(grouped_report({"a"}, {"a"}, {}, Grouping::target_length), DataError);
}

TEST(Grouping, BucketsMatchExhaustiveQuintiles) {
  Rng rng(4, 2);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::size_t> len(5 + rng.below(40));
    for (auto& x : len) x = rng.below(20);
    auto got = length_buckets(len);
    auto sorted = len;
    std::sort(sorted.begin(), sorted.end());
    const double N = static_cast<double>(len.size());
    for (std::size_t i = 0; i < len.size(); ++i) {
      // smallest k whose rank-ceil(kN/5) value is at least len[i]
      int expect = 5;
      for (int k = 1; k <= 5; ++k) {
        const auto rank = static_cast<std::size_t>(std::ceil(k * N / 5.0));
        if (len[i] <= sorted[rank - 1]) {
          expect = k;
          break;
        }
      }
      ASSERT_EQ(got[i], expect);
    }
    // every bucket bound is respected and buckets are ordered by length
    for (std::size_t i = 0; i < len.size(); ++i)
      for (std::size_t j = 0; j < len.size(); ++j)
        if (len[i] < len[j]) ASSERT_LE(got[i], got[j]);
  }
}

TEST(Grouping, SentenceCountGroups) {
  std::vector<std::string> c{"a b", "a c", "a b", "x"}, r{"a b", "a b", "a b", "y"};
  auto reps = grouped_report(c, r, {1, 1, 3, 4}, Grouping::input_sentences);
  ASSERT_EQ(reps.size(), 4u);
  EXPECT_EQ(reps[0].candidates, 2u);
  EXPECT_TRUE(reps[1].empty);
  EXPECT_DOUBLE_EQ(reps[2].metrics.at("bleu1"), 1.0);
  EXPECT_DOUBLE_EQ(reps[3].metrics.at("bleu1"), 0.0);
  EXPECT_THROW(grouped_report(c, r, {1, 1, 5, 4}, Grouping::input_sentences), DataError);
  EXPECT_EQ(parse_grouping("sent"), Grouping::input_sentences);
  EXPECT_THROW(parse_grouping("words"), UsageError);
}

TEST(Report, AllMetricsAndJson) {
  auto rep = evaluate_texts({"the cat sat", "a dog ran far"}, {"the cat sat", "a dog ran"}, 3.5);
  for (const char* k : {"bleu1", "bleu2", "bleu4", "dist1", "dist2", "perplexity"}) EXPECT_TRUE(rep.metrics.count(k)) << k;
  for (const auto& [k, v] : rep.metrics)
    if (k != "perplexity") EXPECT_TRUE(v >= 0.0 && v <= 1.0) << k;
  EXPECT_NE(rep.to_json().find("\"bleu1\""), std::string::npos);
  EXPECT_NE(format_table({rep}).find("bleu4"), std::string::npos);
}

TEST(Perplexity, EqualsExpOfLossAndUniformModel) {
  std::vector<std::string> texts{"alex won money .", "sam ate lunch today ."};
  auto tok = Tokenizer::train(texts, 300, path_specials({}));
  LmConfig c;
  c.layers = 1;
  c.heads = 2;
  c.width = 8;
  c.ff_width = 16;
  c.max_len = 32;
  c.vocab = tok.size();
  TransformerLM lm(c, 3);
  std::vector<std::vector<int>> seqs;
  for (const auto& t : texts) seqs.push_back(encode_lm_text(tok, t, c.max_len));
  auto batch = TokenBatch::pack(seqs, tok.pad());
  EXPECT_NEAR(perplexity(lm, tok, texts), std::exp(lm.lm_loss(batch, tok.pad()).item()), 1e-9);

  // all-zero parameters give uniform next-token distributions
  for (auto p : lm.parameters()) p.assign(std::vector<double>(p.size(), 0.0));
  EXPECT_NEAR(perplexity(lm, tok, texts), static_cast<double>(tok.size()), 1e-6);
}
