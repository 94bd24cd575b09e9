#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "evplan/error.hpp"
#include "evplan/rng.hpp"
#include "evplan/tokenizer.hpp"

using namespace evplan;

namespace {

// Naive reference trainer: words are vectors of symbol strings, pair counts
// are recomputed from scratch, the winner is the most frequent pair with
// ties going to the smaller merged string and then the smaller left part.
std::vector<std::pair<std::string, std::string>> reference_merges(const std::vector<std::string>& corpus,
                                                                  std::size_t n_merges) {
  std::map<std::string, long long> counts;
  for (const auto& doc : corpus)
    for (const auto& chunk : pretokenize(doc)) ++counts[chunk];
  std::vector<std::pair<std::vector<std::string>, long long>> words;
  for (const auto& [w, c] : counts) {
    std::vector<std::string> syms;
    for (char ch : w) syms.emplace_back(1, ch);
    words.emplace_back(syms, c);
  }
  std::vector<std::pair<std::string, std::string>> merges;
  for (std::size_t m = 0; m < n_merges; ++m) {
    std::map<std::pair<std::string, std::string>, long long> pc;
    for (const auto& [syms, c] : words)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) pc[{syms[i], syms[i + 1]}] += c;
    if (pc.empty()) break;
    std::pair<std::string, std::string> best;
    long long best_c = -1;
    for (const auto& [p, c] : pc) {
      const std::string merged = p.first + p.second;
      const std::string best_merged = best.first + best.second;
      if (c > best_c || (c == best_c && (merged < best_merged || (merged == best_merged && p.first < best.first)))) {
        best = p;
        best_c = c;
      }
    }
    merges.push_back(best);
    for (auto& [syms, c] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
          next.push_back(best.first + best.second);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = next;
    }
  }
  return merges;
}

std::vector<std::string> toy_corpus() {
  return {"john gets laid off and john is close to retirement.",
          "the bride and groom entered, the audience cheered.",
          "alex started working out; alex got in good shape."};
}

}  // namespace

TEST(Pretokenize, SplitsWordsPunctuationAndSpaces) {
  auto chunks = pretokenize("hi there,  you!");
  std::vector<std::string> expected{"hi", " there", ",", " ", " you", "!"};
  EXPECT_EQ(chunks, expected);
}

TEST(Bpe, SinglePairCorpus) {
  std::vector<std::string> corpus{"aaaa"};
  auto tok = Tokenizer::train(corpus, 256 + 1, {});
  ASSERT_EQ(tok.merges().size(), 1u);
  EXPECT_EQ(tok.token(tok.merges()[0].left), "a");
  EXPECT_EQ(tok.token(tok.merges()[0].right), "a");
  EXPECT_EQ(tok.token(tok.merges()[0].result), "aa");
}

TEST(Bpe, ReservedSpecialIsOneId) {
  std::vector<std::string> corpus{"[xAttr] hello"};
  std::vector<std::string> specials{"[xAttr]"};
  auto tok = Tokenizer::train(corpus, 300, specials);
  auto ids = tok.encode("[xAttr]");
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_EQ(tok.decode(ids), "[xAttr]");
}

TEST(Bpe, MergeSequenceMatchesReference) {
  auto corpus = toy_corpus();
  auto tok = Tokenizer::train(corpus, 256 + 40, {});
  auto ref = reference_merges(corpus, 40);
  ASSERT_EQ(tok.merges().size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_EQ(tok.token(tok.merges()[i].left), ref[i].first) << "merge " << i;
    EXPECT_EQ(tok.token(tok.merges()[i].right), ref[i].second) << "merge " << i;
  }
}

TEST(Bpe, VocabNeverExceedsTarget) {
  auto corpus = toy_corpus();
  auto specials = control_tokens();
  auto tok = Tokenizer::train(corpus, 300, specials);
  EXPECT_LE(tok.size(), 300u);
}

TEST(Bpe, EmptyCorpusRejected) {
  std::vector<std::string> corpus{"", ""};
  EXPECT_THROW(Tokenizer::train(corpus, 300, {}), DataError);
}

TEST(Bpe, SingleByteSpecialCollides) {
  std::vector<std::string> corpus{"abc"};
  std::vector<std::string> specials{"a"};
  EXPECT_THROW(Tokenizer::train(corpus, 300, specials), ConfigError);
  std::vector<std::string> dup{"[A]", "[A]"};
  EXPECT_THROW(Tokenizer::train(corpus, 300, dup), ConfigError);
}

TEST(Bpe, TargetBelowBaseRejected) {
  std::vector<std::string> corpus{"abc"};
  EXPECT_THROW(Tokenizer::train(corpus, 100, {}), ConfigError);
}

TEST(Codec, EmptyRoundTrip) {
  auto corpus = toy_corpus();
  auto tok = Tokenizer::train(corpus, 300, {});
  EXPECT_TRUE(tok.encode("").empty());
  EXPECT_EQ(tok.decode(std::vector<int>{}), "");
}

TEST(Codec, SpecialsSurviveRoundTrip) {
  auto specials = control_tokens();
  specials.push_back("[xEffect]");
  specials.push_back("[_xEffect]");
  auto corpus = toy_corpus();
  auto tok = Tokenizer::train(corpus, 320, specials);
  auto ids = tok.encode("[xEffect]");
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_EQ(tok.decode(ids), "[xEffect]");
  // longest match wins over a shorter prefix-free candidate
  auto rev = tok.encode("[_xEffect]");
  ASSERT_EQ(rev.size(), 1u);
  const std::string text = "[BOS] alex works out [xEffect] alex gets fit [SEP][EOS]";
  EXPECT_EQ(tok.decode(tok.encode(text)), text);
}

TEST(Codec, RandomSubstringsRoundTrip) {
  auto corpus = toy_corpus();
  auto tok = Tokenizer::train(corpus, 330, control_tokens());
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto& doc = corpus[rng.below(corpus.size())];
    const std::size_t a = rng.below(doc.size());
    const std::size_t len = 1 + rng.below(doc.size() - a);
    const std::string s = doc.substr(a, len);
    EXPECT_EQ(tok.decode(tok.encode(s)), s);
  }
}

TEST(Codec, ArbitraryBytesRoundTrip) {
  auto corpus = toy_corpus();
  auto tok = Tokenizer::train(corpus, 330, control_tokens());
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::string s;
    const std::size_t n = rng.below(40);
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>(rng.below(256)));
    EXPECT_EQ(tok.decode(tok.encode(s)), s);
  }
}

TEST(Codec, EncodingIndependentOfCallOrder) {
  auto corpus = toy_corpus();
  auto tok = Tokenizer::train(corpus, 330, {});
  auto first = tok.encode("the audience cheered");
  tok.encode("something else entirely");
  EXPECT_EQ(tok.encode("the audience cheered"), first);
}

TEST(Codec, UnknownIdRejected) {
  auto corpus = toy_corpus();
  auto tok = Tokenizer::train(corpus, 300, {});
  std::vector<int> bad{static_cast<int>(tok.size())};
  EXPECT_THROW(tok.decode(bad), DataError);
}

TEST(VocabFile, RoundTripReproducesBijection) {
  auto corpus = toy_corpus();
  auto specials = control_tokens();
  specials.push_back("[oEffect]");
  auto tok = Tokenizer::train(corpus, 340, specials);
  std::stringstream ss;
  tok.write(ss);
  auto back = Tokenizer::read(ss);
  ASSERT_EQ(back.size(), tok.size());
  for (std::size_t i = 0; i < tok.size(); ++i) EXPECT_EQ(back.token(static_cast<int>(i)), tok.token(static_cast<int>(i)));
  EXPECT_EQ(back.encode(corpus[1]), tok.encode(corpus[1]));
}

TEST(VocabFile, CorruptFileReportsLine) {
  std::stringstream ss("evplan-bpe 1\nspecials 1\n[A]\nbytes 12\n");
  try {
    Tokenizer::read(ss);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}
