#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evplan/error.hpp"
#include "evplan/path.hpp"

namespace evplan {

class LabelCollisionError : public DataError {
 public:
  using DataError::DataError;
};

class SamplingError : public DataError {
 public:
  using DataError::DataError;
};

/// Lowercase, whitespace collapsed and trimmed.
std::string normalize_event(std::string_view text);

bool is_reverse_relation(std::string_view label);
/// "xAttr" <-> "_xAttr"
std::string reverse_relation(std::string_view label);

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;
};

/// Directed labeled multigraph over normalized events. Duplicate triples
/// are dropped on insertion; edges keep insertion order.
class EventGraph {
 public:
  struct Edge {
    int relation;
    int tail;
  };

  static EventGraph read(std::istream& in);
  static EventGraph load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

  /// Returns false when the (normalized) triple was already present.
  bool add(std::string_view head, std::string_view relation, std::string_view tail);

  /// Adds (t, _r, h) for every (h, r, t). A graph that is already closed
  /// under reversal comes back unchanged; any other use of "_" labels is a
  /// collision.
  EventGraph augment_reverse() const;
  bool reverse_closed() const;

  std::size_t edge_count() const { return edge_count_; }
  std::size_t event_count() const { return events_.size(); }
  /// Distinct labels in first-seen order.
  const std::vector<std::string>& relations() const { return relations_; }
  std::vector<std::string> forward_relations() const;
  const std::string& event(int id) const { return events_.at(static_cast<std::size_t>(id)); }
  const std::string& relation(int id) const { return relations_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find_event(std::string_view text) const;
  std::optional<int> find_relation(std::string_view label) const;
  const std::vector<Edge>& out_edges(int event) const { return out_.at(static_cast<std::size_t>(event)); }
  std::size_t out_degree(std::string_view event) const;
  bool has_edge(std::string_view head, std::string_view relation, std::string_view tail) const;
  std::vector<Triple> triples() const;

 private:
  int intern_event(const std::string& e);
  int intern_relation(const std::string& r);

  std::vector<std::string> events_;
  std::unordered_map<std::string, int> event_ids_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, int> relation_ids_;
  std::vector<std::vector<Edge>> out_;
  std::size_t edge_count_ = 0;
};

struct SampleOptions {
  std::size_t n_paths = 10000;
  std::size_t hop_min = 1;
  std::size_t hop_max = 5;
  std::uint64_t seed = 0;
  std::size_t max_restarts = 10;
};

/// Seeded random walks. Attempt a draws from Rng(seed, a): a uniform start
/// among events with outgoing edges, a uniform hop target, then uniform
/// edges, never stepping straight back over the reverse of the edge just
/// taken. A dead end restarts the walk (up to max_restarts); after that the
/// attempt is skipped and the next attempt index is used.
std::vector<TransitionPath> sample_paths(const EventGraph& graph, const SampleOptions& opts);

/// Every consecutive (event, relation, event) of the path is an edge.
bool is_valid_walk(const EventGraph& graph, const TransitionPath& path);

struct SplitSizes {
  std::size_t train, valid, test;
};
/// Floor of n*w_i/sum(w), leftovers handed out by largest remainder (ties to
/// the earlier part).
SplitSizes split_sizes(std::size_t n, std::size_t w_train = 18, std::size_t w_valid = 1, std::size_t w_test = 1);

template <typename T>
struct Splits {
  std::vector<T> train, valid, test;
};

/// Seeded shuffle, then cut by split_sizes. Needs at least 20 items.
Splits<TransitionPath> split_paths(const std::vector<TransitionPath>& paths, std::uint64_t seed);

}  // namespace evplan
