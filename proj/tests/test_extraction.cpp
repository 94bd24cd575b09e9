#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "evplan/extraction.hpp"
#include "evplan/relation_classifier.hpp"
#include "evplan/rng.hpp"
#include "evplan/tokenizer.hpp"

using namespace evplan;

namespace {

RelationFn lookup(std::map<std::pair<std::string, std::string>, std::string> table) {
  return [table](const std::string& a, const std::string& b) {
    auto it = table.find({a, b});
    return it == table.end() ? std::string("xEffect") : it->second;
  };
}

// Relation is fixed by a keyword in the tail; heads and fillers are noise.
std::vector<Triple> keyword_triples(std::size_t n, std::uint64_t seed) {
  const std::vector<std::pair<std::string, std::string>> rules{
      {"xAttr", "kind"}, {"xWant", "eat"}, {"oReact", "happy"}, {"xEffect", "falls"}};
  const std::vector<std::string> names{"alex", "sam", "john", "mary", "lee", "kim"};
  const std::vector<std::string> fillers{"the", "park", "today", "house", "car", "very", "quickly", "book"};
  Rng rng(seed);
  std::vector<Triple> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rule = rules[rng.below(rules.size())];
    std::string head = names[rng.below(names.size())] + " " + fillers[rng.below(fillers.size())] + " " +
                       fillers[rng.below(fillers.size())];
    std::string tail = names[rng.below(names.size())] + " " + fillers[rng.below(fillers.size())] + " " + rule.second +
                       " " + fillers[rng.below(fillers.size())];
    out.push_back({head, rule.first, tail});
  }
  return out;
}

}  // namespace

TEST(Extract, BrideSentenceHasAudienceCheer) {
  auto ev = extract_events("When the bride and groom entered, the audience cheered");
  EXPECT_NE(std::find(ev.begin(), ev.end(), "audience cheer"), ev.end());
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0], "bride and groom enter");
}

TEST(Extract, EmptySentenceIsNoEvent) {
  EXPECT_EQ(extract_events("   "), std::vector<std::string>{std::string(tokens::noevt)});
  EXPECT_EQ(extract_events("ok !"), std::vector<std::string>{std::string(tokens::noevt)});
}

TEST(Extract, LowercaseAndDeterministic) {
  const std::string s = "John got laid off from his company. He decided to start a business.";
  auto a = extract_events(s), b = extract_events(s);
  EXPECT_EQ(a, b);
  ASSERT_FALSE(a.empty());
  for (const auto& e : a) EXPECT_EQ(e, normalize_event(e));
  EXPECT_EQ(a[0].rfind("john get", 0), 0u) << a[0];
}

TEST(Extract, Lemmatizer) {
  EXPECT_EQ(lemmatize_verb("cheered"), std::optional<std::string>("cheer"));
  EXPECT_EQ(lemmatize_verb("went"), std::optional<std::string>("go"));
  EXPECT_FALSE(lemmatize_verb("table").has_value());
}

TEST(Corpus, PreExtractedEventsPassThrough) {
  CorpusInstance inst{{"thank you so much!"}, "no problem.", std::vector<std::vector<std::string>>{{"thank you"}, {"no problem"}}};
  auto ev = instance_events(inst);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0], std::vector<std::string>{"thank you"});
}

TEST(Corpus, LineRoundTrip) {
  CorpusInstance inst{{"a b c.", "d e."}, "f g.", std::vector<std::vector<std::string>>{{"a b", "b c"}, {"d e"}, {"f g"}}};
  const auto line = format_corpus_line(inst);
  auto back = parse_corpus_line(line);
  EXPECT_EQ(back.context, inst.context);
  EXPECT_EQ(back.target, inst.target);
  EXPECT_EQ(back.events, inst.events);
  auto plain = parse_corpus_line("one. ||| two.\tthree.");
  EXPECT_EQ(plain.context.size(), 2u);
  EXPECT_FALSE(plain.events.has_value());
}

TEST(Corpus, MalformedLines) {
  EXPECT_THROW(parse_corpus_line("no tab here", 7), ParseError);
  EXPECT_THROW(parse_corpus_line("ctx\t", 1), ParseError);
  EXPECT_THROW(parse_corpus_line("ctx\ttgt\tonly one", 1), ParseError);
}

TEST(InstancePath, MinimalCase) {
  CorpusInstance inst{{"x"}, "y", std::vector<std::vector<std::string>>{{"a"}, {"b"}}};
  auto pair = build_instance_path(inst, lookup({{{"a", "b"}, "xWant"}}));
  EXPECT_EQ(pair.observed.hops(), 0u);
  ASSERT_EQ(pair.continuation.size(), 1u);
  EXPECT_EQ(pair.continuation[0], (PathStep{"xWant", "b"}));
}

TEST(InstancePath, DialogueFixture) {
  CorpusInstance inst{{"my husband lost a job but i'm hoping he can find a full time job soon.", "He will , I have faith.",
                       "thank you so much!"},
                      "No problem. What kind of work does he do?",
                      std::vector<std::vector<std::string>>{
                          {"my husband lost job", "i hope he find job"}, {"i have faith"}, {"thank you"}, {"what work he do"}}};
  auto rel = lookup({{{"my husband lost job", "i hope he find job"}, "xAttr"},
                     {{"i hope he find job", "i have faith"}, "oReact"},
                     {{"i have faith", "thank you"}, "xReact"},
                     {{"thank you", "what work he do"}, "oReact"}});
  auto pair = build_instance_path(inst, rel);
  EXPECT_EQ(pair.observed.hops(), 3u);
  EXPECT_EQ(pair.observed.last_event(), "thank you");
  ASSERT_EQ(pair.continuation.size(), 1u);
  EXPECT_EQ(pair.continuation[0], (PathStep{"oReact", "what work he do"}));
  auto full = TransitionPath::joined(pair.observed, pair.continuation);
  EXPECT_EQ(full.hops(), 4u);
  EXPECT_EQ(serialize_path(full, PathStyle::human),
            "my husband lost job xAttr i hope he find job oReact i have faith xReact thank you oReact what work he do");
}

TEST(InstancePath, AlternationOn500Instances) {
  const std::vector<std::string> subj{"i", "he", "she", "they", "john", "my friend"};
  const std::vector<std::string> verbs{"went", "ate", "felt", "wanted", "decided", "played", "lost", "found"};
  const std::vector<std::string> objs{"home", "lunch", "happy", "a game", "the keys", "", "tired"};
  Rng rng(77);
  auto sentence = [&] {
    if (rng.below(10) == 0) return std::string("wow!");
    std::string s = subj[rng.below(subj.size())] + " " + verbs[rng.below(verbs.size())] + " " + objs[rng.below(objs.size())];
    if (rng.below(3) == 0) s += ", and " + subj[rng.below(subj.size())] + " " + verbs[rng.below(verbs.size())];
    return s + ".";
  };
  auto rel = [](const std::string& a, const std::string& b) { return (a.size() + b.size()) % 2 ? "xWant" : "oReact"; };
  for (int i = 0; i < 500; ++i) {
    CorpusInstance inst;
    const auto n = 1 + rng.below(4);
    for (std::size_t k = 0; k < n; ++k) inst.context.push_back(sentence());
    inst.target = sentence();
    auto inst2 = parse_corpus_line(format_corpus_line(inst));
    auto pair = build_instance_path(inst2, rel);
    ASSERT_FALSE(pair.continuation.empty());
    const std::string line = serialize_path(pair.observed) + " " + serialize_continuation(pair.continuation);
    auto parsed = parse_path(line);
    EXPECT_EQ(parsed.hops(), pair.observed.hops() + pair.continuation.size()) << line;
    EXPECT_EQ(parse_continuation(serialize_continuation(pair.continuation)), pair.continuation);
  }
}

TEST(RelCls, SeparableKeywordData) {
  auto data = keyword_triples(800, 3);
  RelClsConfig cfg;
  cfg.seed = 5;
  cfg.epochs = 15;
  RelClsReport rep;
  auto c = RelationClassifier::train(data, cfg, &rep);
  EXPECT_EQ(rep.n_train + rep.n_valid + rep.n_test, 800u);
  EXPECT_EQ(rep.n_test, 40u);
  EXPECT_GE(rep.test_accuracy, 0.95);
  auto fresh = keyword_triples(400, 99);
  EXPECT_GE(c.accuracy(fresh), 0.95);
  auto p = c.classify("alex the park", "sam very kind today");
  EXPECT_EQ(p.label, "xAttr");
  auto probs = c.probabilities({Triple{"alex the park", "", "sam very kind today"}});
  double total = 0;
  for (double v : probs[0]) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(p.probability, *std::max_element(probs[0].begin(), probs[0].end()));
}

TEST(RelCls, DeterministicAndPersisted) {
  auto data = keyword_triples(200, 4);
  RelClsConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 9;
  auto a = RelationClassifier::train(data, cfg), b = RelationClassifier::train(data, cfg);
  for (int i = 0; i < 20; ++i) {
    auto pa = a.classify(data[i].head, data[i].tail), pb = b.classify(data[i].head, data[i].tail);
    EXPECT_EQ(pa.label, pb.label);
    EXPECT_EQ(pa.probability, pb.probability);
    EXPECT_EQ(pa.label, a.classify(data[i].head, data[i].tail).label);
  }
  auto dir = std::filesystem::temp_directory_path() / "evplan_relcls_test";
  std::filesystem::create_directories(dir);
  a.save(dir / "cls.bin");
  auto c = RelationClassifier::load(dir / "cls.bin");
  EXPECT_EQ(c.labels(), a.labels());
  for (int i = 0; i < 20; ++i) EXPECT_EQ(c.classify(data[i].head, data[i].tail).probability, a.classify(data[i].head, data[i].tail).probability);
  std::filesystem::remove_all(dir);
}

TEST(RelCls, TableOneAdjacencyFixture) {
  // Retirement-style tails carry xAttr; everything else is spread over other labels.
  std::vector<Triple> data;
  const std::vector<std::string> heads{"john get laid off", "john lose job", "mary get fired", "sam quit work"};
  const std::vector<std::string> attr_tails{"john is close to retirement", "mary is close to retirement",
                                            "sam is old", "john is close to age"};
  const std::vector<std::pair<std::string, std::string>> others{
      {"xWant", "john want new job"}, {"xReact", "john feel sad"}, {"oReact", "boss feel relieved"}};
  for (int rep = 0; rep < 10; ++rep) {
    for (const auto& h : heads) {
      for (const auto& t : attr_tails) data.push_back({h, "xAttr", t});
      for (const auto& [r, t] : others) data.push_back({h, r, t});
    }
  }
  RelClsConfig cfg;
  cfg.seed = 1;
  cfg.epochs = 10;
  auto c = RelationClassifier::train(data, cfg);
  EXPECT_EQ(c.classify("john get laid off", "john is close to retirement").label, "xAttr");
}

TEST(RelCls, Errors) {
  std::vector<Triple> one;
  for (int i = 0; i < 30; ++i) one.push_back({"a " + std::to_string(i), "xAttr", "b"});
  EXPECT_THROW(RelationClassifier::train(one, RelClsConfig{}), DegenerateTrainingError);
  std::vector<Triple> rev = one;
  for (auto& t : rev) t.relation = "_xAttr";
  rev.insert(rev.end(), one.begin(), one.end());
  EXPECT_THROW(RelationClassifier::train(rev, RelClsConfig{}), DegenerateTrainingError);
  RelationClassifier untrained;
  EXPECT_THROW(untrained.classify("a", "b"), UsageError);
}
