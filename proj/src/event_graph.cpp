#include "evplan/event_graph.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "evplan/rng.hpp"

namespace evplan {

std::string normalize_event(std::string_view text) {
  std::string out;
  bool space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool is_reverse_relation(std::string_view label) { return !label.empty() && label.front() == '_'; }

std::string reverse_relation(std::string_view label) {
  return is_reverse_relation(label) ? std::string(label.substr(1)) : "_" + std::string(label);
}

int EventGraph::intern_event(const std::string& e) {
  auto [it, inserted] = event_ids_.emplace(e, static_cast<int>(events_.size()));
  if (inserted) {
    events_.push_back(e);
    out_.emplace_back();
  }
  return it->second;
}

int EventGraph::intern_relation(const std::string& r) {
  auto [it, inserted] = relation_ids_.emplace(r, static_cast<int>(relations_.size()));
  if (inserted) relations_.push_back(r);
  return it->second;
}

bool EventGraph::add(std::string_view head, std::string_view relation, std::string_view tail) {
  const std::string h = normalize_event(head), t = normalize_event(tail);
  std::string r(relation);
  r.erase(0, r.find_first_not_of(" \t"));
  r.erase(r.find_last_not_of(" \t") + 1);
  if (h.empty() || t.empty()) throw DataError("triple has an empty event");
  if (r.empty() || r == "_") throw DataError("triple has an empty relation label");
  const int hi = intern_event(h), ri = intern_relation(r), ti = intern_event(t);
  for (const auto& e : out_[static_cast<std::size_t>(hi)]) {
    if (e.relation == ri && e.tail == ti) return false;
  }
  out_[static_cast<std::size_t>(hi)].push_back({ri, ti});
  ++edge_count_;
  return true;
}

EventGraph EventGraph::read(std::istream& in) {
  EventGraph g;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3) {
      throw ParseError("expected head<TAB>relation<TAB>tail, got " + std::to_string(fields.size()) + " fields", n);
    }
    try {
      g.add(fields[0], fields[1], fields[2]);
    } catch (const DataError& e) {
      throw ParseError(e.what(), n);
    }
  }
  return g;
}

EventGraph EventGraph::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open graph file " + path.string());
  return read(in);
}

void EventGraph::write(std::ostream& out) const {
  for (const auto& t : triples()) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
}

void EventGraph::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write(out);
}

std::vector<Triple> EventGraph::triples() const {
  std::vector<Triple> out;
  out.reserve(edge_count_);
  for (std::size_t h = 0; h < out_.size(); ++h) {
    for (const auto& e : out_[h]) {
      out.push_back({events_[h], relations_[static_cast<std::size_t>(e.relation)], events_[static_cast<std::size_t>(e.tail)]});
    }
  }
  return out;
}

bool EventGraph::reverse_closed() const {
  for (const auto& t : triples()) {
    if (!has_edge(t.tail, reverse_relation(t.relation), t.head)) return false;
  }
  return true;
}

EventGraph EventGraph::augment_reverse() const {
  const bool has_reverse_labels = std::any_of(relations_.begin(), relations_.end(),
                                              [](const std::string& r) { return is_reverse_relation(r); });
  if (has_reverse_labels) {
    if (reverse_closed()) return *this;
    for (const auto& r : relations_) {
      if (is_reverse_relation(r)) {
        throw LabelCollisionError("relation label '" + r +
                                  "' already uses the reserved '_' prefix in a graph that is not reverse-augmented");
      }
    }
  }
  EventGraph g = *this;
  for (const auto& t : triples()) g.add(t.tail, reverse_relation(t.relation), t.head);
  return g;
}

std::vector<std::string> EventGraph::forward_relations() const {
  std::vector<std::string> out;
  for (const auto& r : relations_)
    if (!is_reverse_relation(r)) out.push_back(r);
  return out;
}

std::optional<int> EventGraph::find_event(std::string_view text) const {
  auto it = event_ids_.find(normalize_event(text));
  if (it == event_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> EventGraph::find_relation(std::string_view label) const {
  auto it = relation_ids_.find(std::string(label));
  if (it == relation_ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t EventGraph::out_degree(std::string_view event) const {
  auto id = find_event(event);
  return id ? out_[static_cast<std::size_t>(*id)].size() : 0;
}

bool EventGraph::has_edge(std::string_view head, std::string_view relation, std::string_view tail) const {
  auto h = find_event(head), t = find_event(tail);
  auto r = find_relation(relation);
  if (!h || !t || !r) return false;
  for (const auto& e : out_[static_cast<std::size_t>(*h)]) {
    if (e.relation == *r && e.tail == *t) return true;
  }
  return false;
}

bool is_valid_walk(const EventGraph& graph, const TransitionPath& path) {
  std::string cur = path.start;
  for (const auto& s : path.steps) {
    if (!graph.has_edge(cur, s.relation, s.event)) return false;
    cur = s.event;
  }
  return true;
}

std::vector<TransitionPath> sample_paths(const EventGraph& graph, const SampleOptions& opts) {
  if (opts.hop_min < 1 || opts.hop_min > opts.hop_max) {
    throw UsageError("hop bounds must satisfy 1 <= min <= max, got [" + std::to_string(opts.hop_min) + ", " +
                     std::to_string(opts.hop_max) + "]");
  }
  if (graph.edge_count() == 0) throw SamplingError("cannot sample paths from a graph with no edges");
  std::vector<int> starts;
  for (std::size_t e = 0; e < graph.event_count(); ++e) {
    if (!graph.out_edges(static_cast<int>(e)).empty()) starts.push_back(static_cast<int>(e));
  }
  // reverse relation id per relation id, -1 when absent
  std::vector<int> rev(graph.relations().size(), -1);
  for (std::size_t r = 0; r < rev.size(); ++r) {
    if (auto id = graph.find_relation(reverse_relation(graph.relation(static_cast<int>(r))))) rev[r] = *id;
  }

  std::vector<TransitionPath> paths;
  paths.reserve(opts.n_paths);
  const std::size_t max_attempts = 50 * opts.n_paths + 1000;
  std::vector<EventGraph::Edge> options;
  for (std::size_t attempt = 0; paths.size() < opts.n_paths; ++attempt) {
    if (attempt >= max_attempts) {
      throw SamplingError("only " + std::to_string(paths.size()) + " of " + std::to_string(opts.n_paths) +
                          " walks reached their hop target; the graph is too sparse for hop range [" +
                          std::to_string(opts.hop_min) + ", " + std::to_string(opts.hop_max) + "]");
    }
    Rng rng(opts.seed, attempt);
    const auto hops = static_cast<std::size_t>(
        rng.between(static_cast<long long>(opts.hop_min), static_cast<long long>(opts.hop_max)));
    for (std::size_t restart = 0; restart <= opts.max_restarts; ++restart) {
      int cur = starts[rng.below(starts.size())];
      TransitionPath p;
      p.start = graph.event(cur);
      int prev = -1, prev_rel = -1;
      while (p.steps.size() < hops) {
        options.clear();
        for (const auto& e : graph.out_edges(cur)) {
          const bool backtrack = prev_rel >= 0 && e.tail == prev && e.relation == rev[static_cast<std::size_t>(prev_rel)];
          if (!backtrack) options.push_back(e);
        }
        if (options.empty()) break;
        const auto& e = options[rng.below(options.size())];
        p.steps.push_back({graph.relation(e.relation), graph.event(e.tail)});
        prev = cur;
        prev_rel = e.relation;
        cur = e.tail;
      }
      if (p.steps.size() == hops) {
        paths.push_back(std::move(p));
        break;
      }
    }
  }
  return paths;
}

SplitSizes split_sizes(std::size_t n, std::size_t w_train, std::size_t w_valid, std::size_t w_test) {
  const std::size_t w[3] = {w_train, w_valid, w_test};
  const std::size_t total = w_train + w_valid + w_test;
  if (total == 0) throw UsageError("split weights must not all be zero");
  std::size_t size[3], rem[3], used = 0;
  for (int i = 0; i < 3; ++i) {
    size[i] = n * w[i] / total;
    rem[i] = n * w[i] % total;
    used += size[i];
  }
  for (std::size_t left = n - used; left > 0; --left) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++size[best];
    rem[best] = 0;
  }
  return {size[0], size[1], size[2]};
}

Splits<TransitionPath> split_paths(const std::vector<TransitionPath>& paths, std::uint64_t seed) {
  if (paths.size() < 20) {
    throw DataError("need at least 20 paths for an 18:1:1 split, got " + std::to_string(paths.size()));
  }
  std::vector<std::size_t> order(paths.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed, 0x5917);
  rng.shuffle(std::span<std::size_t>(order));
  const SplitSizes s = split_sizes(paths.size());
  Splits<TransitionPath> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& p = paths[order[i]];
    if (i < s.train) {
      out.train.push_back(p);
    } else if (i < s.train + s.valid) {
      out.valid.push_back(p);
    } else {
      out.test.push_back(p);
    }
  }
  return out;
}

}  // namespace evplan
