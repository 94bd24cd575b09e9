#include "evplan/toy.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "evplan/rng.hpp"
#include "evplan/tokenizer.hpp"

namespace evplan::toy {

namespace {

struct Verb {
  const char* base;
  const char* past;
  const char* relation;
};

// two verbs per relation; every past form lemmatizes back to its base
const std::vector<Verb>& verbs() {
  static const std::vector<Verb> v{
      {"cheer", "cheered", "oEffect"}, {"laugh", "laughed", "oEffect"}, {"smile", "smiled", "oReact"},
      {"cry", "cried", "oReact"},      {"help", "helped", "oWant"},     {"call", "called", "oWant"},
      {"feel", "felt", "xAttr"},       {"seem", "seemed", "xAttr"},     {"win", "won", "xEffect"},
      {"lose", "lost", "xEffect"},     {"plan", "planned", "xIntent"},  {"hope", "hoped", "xIntent"},
      {"buy", "bought", "xNeed"},      {"borrow", "borrowed", "xNeed"}, {"relax", "relaxed", "xReact"},
      {"worry", "worried", "xReact"},  {"visit", "visited", "xWant"},   {"eat", "ate", "xWant"}};
  return v;
}

const std::vector<std::string> kNames{"alex", "sam", "kim", "lee", "max", "jo"};
const std::vector<std::string> kObjects{"home", "lunch", "money", "music", "dinner", "coffee", "games", "outside"};

const Verb* find_verb(const std::string& base) {
  for (const auto& v : verbs())
    if (base == v.base) return &v;
  return nullptr;
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

const std::vector<std::string>& atomic_relations() {
  static const std::vector<std::string> r{"oEffect", "oReact", "oWant", "xAttr", "xEffect",
                                          "xIntent", "xNeed",  "xReact", "xWant"};
  return r;
}

std::string relation_for(const std::string& event) {
  auto w = words(event);
  if (w.size() >= 2)
    if (const Verb* v = find_verb(w[1])) return v->relation;
  return "xEffect";
}

std::string verbalize(const std::string& event) {
  auto w = words(event);
  if (w.size() >= 2)
    if (const Verb* v = find_verb(w[1])) w[1] = v->past;
  std::string out;
  for (const auto& x : w) out += x + " ";
  return out + ".";
}

std::vector<std::string> events(std::size_t n, std::uint64_t seed) {
  std::vector<std::string> all;
  for (const auto& name : kNames)
    for (const auto& v : verbs())
      for (const auto& o : kObjects) all.push_back(name + " " + v.base + " " + o);
  Rng rng(seed, 0x70e7);
  rng.shuffle(std::span<std::string>(all));
  if (n > all.size()) throw UsageError("toy world has only " + std::to_string(all.size()) + " distinct events");
  all.resize(n);
  return all;
}

EventGraph world_graph(std::size_t n_events, std::size_t out_degree, std::uint64_t seed) {
  if (n_events < 2 || out_degree == 0 || out_degree >= n_events) {
    throw UsageError("world graph needs n_events >= 2 and 0 < out_degree < n_events");
  }
  auto ev = events(n_events, seed);
  EventGraph g;
  Rng rng(seed, 0x6a9f);
  for (std::size_t h = 0; h < ev.size(); ++h) {
    std::set<std::size_t> tails;
    while (tails.size() < out_degree) {
      const auto t = rng.below(ev.size());
      if (t != h) tails.insert(t);
    }
    for (auto t : tails) g.add(ev[h], relation_for(ev[t]), ev[t]);
  }
  return g;
}

TransitionGrammar transition_grammar(std::size_t n_rules, std::size_t continuation_hops, std::uint64_t seed) {
  if (n_rules == 0 || continuation_hops == 0) throw UsageError("grammar needs rules and continuation hops");
  const std::size_t n = std::max<std::size_t>(2 * n_rules, 8);
  auto ev = events(n, seed);
  // one random cycle through every event: each event has a single successor
  std::vector<std::size_t> next(n);
  for (std::size_t i = 0; i < n; ++i) next[i] = (i + 1) % n;
  TransitionGrammar gr;
  for (std::size_t i = 0; i < n; ++i) gr.graph.add(ev[i], relation_for(ev[next[i]]), ev[next[i]]);
  std::vector<std::size_t> starts(n);
  for (std::size_t i = 0; i < n; ++i) starts[i] = i;
  Rng rng(seed, 0x6a3a);
  rng.shuffle(std::span<std::size_t>(starts));
  for (std::size_t r = 0; r < n_rules; ++r) {
    std::size_t e = starts[r];
    PathPair p;
    p.observed.start = ev[e];
    e = next[e];
    p.observed.steps.push_back({relation_for(ev[e]), ev[e]});
    for (std::size_t h = 0; h < continuation_hops; ++h) {
      e = next[e];
      p.continuation.push_back({relation_for(ev[e]), ev[e]});
    }
    gr.rules.push_back(std::move(p));
  }
  return gr;
}

std::vector<std::string> grammar_walk_texts(const TransitionGrammar& grammar, std::size_t n, std::uint64_t seed) {
  const auto& g = grammar.graph;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, 0x3a17 + i);
    int e = static_cast<int>(rng.below(g.event_count()));
    const std::size_t hops = 2 + rng.below(4);
    const std::size_t sep_at = rng.below(hops + 1);  // == hops: no separator
    std::string text = g.event(e);
    for (std::size_t h = 0; h < hops; ++h) {
      if (h + 1 == sep_at) text += " " + std::string(tokens::sep);
      const auto& edge = g.out_edges(e).front();
      text += " " + relation_token(g.relation(edge.relation)) + " " + g.event(edge.tail);
      e = edge.tail;
    }
    out.push_back(text);
  }
  return out;
}

VerbalizationSet verbalization_corpus(std::size_t n, std::size_t n_targets, std::uint64_t seed) {
  if (n_targets == 0) throw UsageError("verbalization corpus needs at least one target event");
  auto ev = events(n_targets + 24, seed);
  std::vector<std::string> targets(ev.begin(), ev.begin() + static_cast<std::ptrdiff_t>(n_targets));
  std::vector<std::string> contexts(ev.begin() + static_cast<std::ptrdiff_t>(n_targets), ev.end());
  VerbalizationSet set;
  Rng rng(seed, 0xb0ba);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = contexts[rng.below(contexts.size())];
    const auto& t = targets[rng.below(targets.size())];
    CorpusInstance inst{{verbalize(c)}, verbalize(t), std::vector<std::vector<std::string>>{{c}, {t}}};
    set.gold.push_back({TransitionPath{c, {}, std::nullopt}, {{relation_for(t), t}}});
    set.instances.push_back(std::move(inst));
  }
  return set;
}

std::vector<CorpusInstance> story_corpus(const EventGraph& graph, std::size_t n, std::uint64_t seed) {
  std::vector<int> starts;
  for (int e = 0; e < static_cast<int>(graph.event_count()); ++e)
    if (!graph.out_edges(e).empty()) starts.push_back(e);
  if (starts.empty()) throw DataError("story corpus needs a graph with edges");
  std::vector<CorpusInstance> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, 0x5709 + i);
    const std::size_t n_ctx = 1 + rng.below(4);
    int e = starts[rng.below(starts.size())];
    std::vector<std::string> chain{graph.event(e)};
    while (chain.size() < n_ctx + 1) {
      std::vector<EventGraph::Edge> fwd;
      for (const auto& edge : graph.out_edges(e))
        if (!is_reverse_relation(graph.relation(edge.relation))) fwd.push_back(edge);
      if (fwd.empty()) break;
      e = fwd[rng.below(fwd.size())].tail;
      chain.push_back(graph.event(e));
    }
    if (chain.size() < 2) continue;
    CorpusInstance inst;
    for (std::size_t k = 0; k + 1 < chain.size(); ++k) inst.context.push_back(verbalize(chain[k]));
    inst.target = verbalize(chain.back());
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace evplan::toy
