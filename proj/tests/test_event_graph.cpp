#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "evplan/event_graph.hpp"
#include "evplan/path.hpp"
#include "evplan/rng.hpp"

using namespace evplan;

namespace {

const std::vector<std::string> kNine{"oEffect", "oReact", "oWant", "xAttr", "xEffect",
                                     "xIntent", "xNeed",  "xReact", "xWant"};

// Duplicate-free graph over `events` events using all nine labels.
EventGraph nine_relation_graph(std::size_t events, std::size_t edges, std::uint64_t seed) {
  EventGraph g;
  Rng rng(seed);
  while (g.edge_count() < edges) {
    const auto h = rng.below(events), t = rng.below(events);
    const auto& r = kNine[g.edge_count() < kNine.size() ? g.edge_count() : rng.below(kNine.size())];
    g.add("personx event " + std::to_string(h), r, "personx event " + std::to_string(t));
  }
  return g;
}

}  // namespace

TEST(Graph, EmptyFile) {
  std::stringstream in("");
  auto g = EventGraph::read(in);
  EXPECT_EQ(g.edge_count(), 0u);
  EXPECT_TRUE(g.relations().empty());
  auto a = g.augment_reverse();
  EXPECT_EQ(a.edge_count(), 0u);
}

TEST(Graph, OutDegreeAndDedup) {
  std::stringstream in("a\txAttr\tb\na\txWant\tc\nA \txAttr\t b\na\toReact\td\n\n");
  auto g = EventGraph::read(in);
  EXPECT_EQ(g.out_degree("a"), 3u);
  EXPECT_EQ(g.edge_count(), 3u);
  EXPECT_EQ(g.relations().size(), 3u);
}

TEST(Graph, NormalizesEvents) {
  EXPECT_EQ(normalize_event("  John   Gets\tLaid Off "), "john gets laid off");
}

TEST(Graph, MalformedLineReportsLineNumber) {
  std::stringstream in("a\txAttr\tb\nbroken line\n");
  try {
    EventGraph::read(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::stringstream empty_rel("a\t\tb\n");
  EXPECT_THROW(EventGraph::read(empty_rel), ParseError);
}

TEST(Graph, NineRelationsObserved) {
  auto g = nine_relation_graph(30, 80, 1);
  EXPECT_EQ(g.relations().size(), 9u);
}

TEST(Augment, AddsReverseEdge) {
  EventGraph g;
  g.add("A", "xAttr", "B");
  auto a = g.augment_reverse();
  EXPECT_TRUE(a.has_edge("b", "_xAttr", "a"));
  EXPECT_EQ(a.edge_count(), 2u);
}

TEST(Augment, DoublesAndIsIdempotent) {
  auto g = nine_relation_graph(30, 120, 2);
  auto once = g.augment_reverse();
  EXPECT_EQ(once.edge_count(), 2 * g.edge_count());
  EXPECT_EQ(once.relations().size(), 18u);
  EXPECT_TRUE(once.reverse_closed());
  auto twice = once.augment_reverse();
  EXPECT_EQ(twice.edge_count(), once.edge_count());
  for (const auto& t : once.triples()) EXPECT_TRUE(twice.has_edge(t.head, t.relation, t.tail));
}

TEST(Augment, SurvivesFileRoundTrip) {
  auto once = nine_relation_graph(20, 50, 3).augment_reverse();
  std::stringstream ss;
  once.write(ss);
  auto back = EventGraph::read(ss);
  EXPECT_EQ(back.augment_reverse().edge_count(), once.edge_count());
}

TEST(Augment, UnderscoreLabelCollides) {
  EventGraph g;
  g.add("a", "_weird", "b");
  EXPECT_THROW(g.augment_reverse(), LabelCollisionError);
}

TEST(Sample, SingleEdgeOneHop) {
  EventGraph g;
  g.add("a", "xAttr", "b");
  SampleOptions o;
  o.n_paths = 5;
  o.hop_min = o.hop_max = 1;
  for (const auto& p : sample_paths(g, o)) {
    EXPECT_EQ(p.start, "a");
    ASSERT_EQ(p.hops(), 1u);
    EXPECT_EQ(p.steps[0], (PathStep{"xAttr", "b"}));
  }
}

TEST(Sample, NoEdgesIsError) {
  EventGraph g;
  EXPECT_THROW(sample_paths(g, SampleOptions{}), SamplingError);
  EventGraph one;
  one.add("a", "r", "b");
  SampleOptions bad;
  bad.hop_min = 3;
  bad.hop_max = 2;
  EXPECT_THROW(sample_paths(one, bad), UsageError);
}

TEST(Sample, WalksAreValidAndSeeded) {
  auto g = nine_relation_graph(40, 150, 4).augment_reverse();
  SampleOptions o;
  o.n_paths = 500;
  o.seed = 11;
  auto a = sample_paths(g, o), b = sample_paths(g, o);
  ASSERT_EQ(a.size(), 500u);
  EXPECT_EQ(a, b);
  std::set<std::size_t> hops;
  for (const auto& p : a) {
    EXPECT_TRUE(is_valid_walk(g, p)) << serialize_path(p);
    EXPECT_GE(p.hops(), 1u);
    EXPECT_LE(p.hops(), 5u);
    hops.insert(p.hops());
    for (std::size_t i = 1; i < p.steps.size(); ++i) {
      const std::string& before = i >= 2 ? p.steps[i - 2].event : p.start;
      const bool backtrack =
          p.steps[i].event == before && p.steps[i].relation == reverse_relation(p.steps[i - 1].relation);
      EXPECT_FALSE(backtrack);
    }
  }
  EXPECT_EQ(hops.size(), 5u);
  o.seed = 12;
  EXPECT_NE(sample_paths(g, o), a);
}

TEST(Split, ExactSizes) {
  auto s = split_sizes(20);
  EXPECT_EQ(s.train, 18u);
  EXPECT_EQ(s.valid, 1u);
  EXPECT_EQ(s.test, 1u);
  s = split_sizes(40);
  EXPECT_EQ(s.train, 36u);
  EXPECT_EQ(s.valid, 2u);
  s = split_sizes(10000);
  EXPECT_EQ(s.train, 9000u);
  EXPECT_EQ(s.valid, 500u);
  EXPECT_EQ(s.test, 500u);
  s = split_sizes(23);
  EXPECT_EQ(s.train + s.valid + s.test, 23u);
}

TEST(Split, DisjointAndExhaustive) {
  std::vector<TransitionPath> paths;
  for (int i = 0; i < 47; ++i) paths.push_back({"e" + std::to_string(i), {{"xAttr", "x"}}, {}});
  auto sp = split_paths(paths, 5);
  EXPECT_EQ(sp.train.size() + sp.valid.size() + sp.test.size(), 47u);
  std::set<std::string> seen;
  for (const auto* part : {&sp.train, &sp.valid, &sp.test})
    for (const auto& p : *part) EXPECT_TRUE(seen.insert(p.start).second);
  EXPECT_EQ(seen.size(), 47u);
  std::vector<TransitionPath> few(paths.begin(), paths.begin() + 19);
  EXPECT_THROW(split_paths(few, 1), DataError);
}

TEST(PathText, OneHopRoundTrip) {
  const std::string line = "john get laid off [xAttr] john is close to retirement";
  auto p = parse_path(line);
  EXPECT_EQ(p.hops(), 1u);
  EXPECT_EQ(serialize_path(p), line);
  EXPECT_EQ(serialize_path(p, PathStyle::human), "john get laid off xAttr john is close to retirement");
}

TEST(PathText, StoryPathHasFourHops) {
  const std::string story =
      "john get laid off xAttr john is close to retirement xReact john feel bored and listless xReact john decide "
      "start business xEffect john have a company";
  std::set<std::string> labels(kNine.begin(), kNine.end());
  auto p = parse_path(story, labels);
  EXPECT_EQ(p.hops(), 4u);
  EXPECT_EQ(p.last_event(), "john have a company");
  EXPECT_EQ(serialize_path(p, PathStyle::human), story);
}

TEST(PathText, AlternationErrors) {
  EXPECT_THROW(parse_path("a [xAttr] [oReact] b"), ParseError);
  EXPECT_THROW(parse_path("[xAttr] b"), ParseError);
  EXPECT_THROW(parse_path("a [xAttr]"), ParseError);
  EXPECT_THROW(parse_path(""), ParseError);
  EXPECT_THROW(parse_continuation("b [xAttr] c"), ParseError);
  EXPECT_TRUE(parse_continuation("").empty());
}

TEST(PathText, SampledPathsRoundTrip) {
  auto g = nine_relation_graph(40, 150, 6).augment_reverse();
  SampleOptions o;
  o.n_paths = 200;
  o.seed = 3;
  for (const auto& p : sample_paths(g, o)) {
    const std::string line = serialize_path(p);
    EXPECT_EQ(parse_path(line), p);
    EXPECT_EQ(serialize_path(parse_path(line)), line);
  }
}

TEST(PathText, RepairTruncatesAtLastValidBoundary) {
  auto r = repair_continuation("[xEffect] alex gets fit [xWant] [oReact] junk");
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (PathStep{"xEffect", "alex gets fit"}));
  EXPECT_TRUE(repair_continuation("alex [xEffect] b").empty());
  auto stop = repair_continuation("[xEffect] a b [EOS] [xWant] c");
  ASSERT_EQ(stop.size(), 1u);
  EXPECT_EQ(stop[0].event, "a b");
  auto dangling = repair_continuation("[xEffect] a [xWant]");
  ASSERT_EQ(dangling.size(), 1u);
}

TEST(PathText, SplitForPlanning) {
  auto p = parse_path("a [r1] b [r2] c [r3] d");
  auto pair = split_for_planning(p);
  EXPECT_EQ(pair.observed.hops(), 1u);
  EXPECT_EQ(pair.continuation.size(), 2u);
  auto joined = TransitionPath::joined(pair.observed, pair.continuation);
  EXPECT_EQ(joined.steps, p.steps);
  EXPECT_EQ(joined.split, std::optional<std::size_t>(1));
  auto one = split_for_planning(parse_path("a [r1] b"));
  EXPECT_EQ(one.observed.hops(), 0u);
  EXPECT_EQ(one.continuation.size(), 1u);
}

TEST(PathFiles, PairsRoundTrip) {
  auto dir = std::filesystem::temp_directory_path() / "evplan_pairs_test";
  std::filesystem::create_directories(dir);
  std::vector<PathPair> pairs{{parse_path("a [xAttr] b"), parse_continuation("[oReact] c [xWant] d")},
                              {parse_path("[NOEVT]"), parse_continuation("[xEffect] e")}};
  write_path_pairs(dir / "p.tsv", pairs);
  auto back = read_path_pairs(dir / "p.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].observed, pairs[0].observed);
  EXPECT_EQ(back[1].continuation, pairs[1].continuation);
  std::filesystem::remove_all(dir);
}
