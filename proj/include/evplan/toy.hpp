#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evplan/event_graph.hpp"
#include "evplan/extraction.hpp"
#include "evplan/path.hpp"

namespace evplan::toy {

/// The nine ATOMIC relation labels.
const std::vector<std::string>& atomic_relations();

/// Relation implied by the verb of a toy event's tail.
std::string relation_for(const std::string& event);

/// "alex buy coffee" -> "alex bought coffee ."
std::string verbalize(const std::string& event);

/// Events "<name> <verb> <object>" in a fixed pseudo-random order.
std::vector<std::string> events(std::size_t n, std::uint64_t seed);

/// Duplicate-free graph: each event gets `out_degree` successors and the
/// relation of an edge is relation_for(tail), so all nine labels appear
/// once there are enough events.
EventGraph world_graph(std::size_t n_events, std::size_t out_degree, std::uint64_t seed);

/// Deterministic transition system: every event has exactly one successor.
/// Each rule pairs a one-hop r_x (e0 -> e1) with the next `continuation_hops`
/// hops from e1.
struct TransitionGrammar {
  EventGraph graph;
  std::vector<PathPair> rules;
};
TransitionGrammar transition_grammar(std::size_t n_rules, std::size_t continuation_hops, std::uint64_t seed);

/// Language-model text over grammar walks, "e0 [r] e1 ..." with an optional
/// [SEP] at one event boundary.
std::vector<std::string> grammar_walk_texts(const TransitionGrammar& grammar, std::size_t n, std::uint64_t seed);

/// Instances whose target verbalizes the last event of r_y; the context
/// sentence is drawn independently of the target.
struct VerbalizationSet {
  std::vector<CorpusInstance> instances;
  std::vector<PathPair> gold;
};
VerbalizationSet verbalization_corpus(std::size_t n, std::size_t n_targets, std::uint64_t seed);

/// Stories as forward walks over a world graph: 1..4 context sentences and
/// one target sentence, each verbalizing one event.
std::vector<CorpusInstance> story_corpus(const EventGraph& graph, std::size_t n, std::uint64_t seed);

}  // namespace evplan::toy
