#include "evplan/path.hpp"

#include <fstream>
#include <sstream>

#include "evplan/error.hpp"
#include "evplan/tokenizer.hpp"

namespace evplan {

namespace {

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

bool bracketed(const std::string& w) { return w.size() > 2 && w.front() == '[' && w.back() == ']'; }

enum class WordKind { event, relation, stop };

WordKind kind_of(const std::string& w) {
  if (w == tokens::noevt) return WordKind::event;
  if (is_control_token(w)) return WordKind::stop;
  return bracketed(w) ? WordKind::relation : WordKind::event;
}

std::string strip_brackets(const std::string& w) { return w.substr(1, w.size() - 2); }

// Groups words into alternating items; returns false on an alternation fault.
struct Item {
  bool relation;
  std::string text;
};

template <typename Classify>
std::vector<Item> group(const std::vector<std::string>& ws, Classify classify) {
  std::vector<Item> items;
  for (const auto& w : ws) {
    auto [is_rel, label] = classify(w);
    if (is_rel) {
      items.push_back({true, label});
    } else if (!items.empty() && !items.back().relation) {
      items.back().text += ' ' + w;
    } else {
      items.push_back({false, w});
    }
  }
  return items;
}

TransitionPath from_items(const std::vector<Item>& items) {
  if (items.empty()) throw ParseError("empty path");
  if (items.front().relation) throw ParseError("path must start with an event, found relation '" + items.front().text + "'");
  TransitionPath p;
  p.start = items.front().text;
  for (std::size_t i = 1; i < items.size(); i += 2) {
    if (!items[i].relation) throw ParseError("alternation violated near '" + items[i].text + "'");
    if (i + 1 >= items.size()) throw ParseError("path ends with relation '" + items[i].text + "'");
    if (items[i + 1].relation) {
      throw ParseError("adjacent relations '" + items[i].text + "' and '" + items[i + 1].text + "'");
    }
    p.steps.push_back({items[i].text, items[i + 1].text});
  }
  return p;
}

std::pair<bool, std::string> model_classify(const std::string& w) {
  switch (kind_of(w)) {
    case WordKind::relation: return {true, strip_brackets(w)};
    case WordKind::stop: throw ParseError("control token " + w + " inside a path");
    case WordKind::event: break;
  }
  return {false, w};
}

std::string render_relation(const std::string& label, PathStyle style) {
  return style == PathStyle::model ? relation_token(label) : label;
}

}  // namespace

TransitionPath TransitionPath::observed() const {
  TransitionPath p;
  p.start = start;
  const std::size_t k = split.value_or(steps.size());
  p.steps.assign(steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(k));
  return p;
}

std::vector<PathStep> TransitionPath::continuation() const {
  const std::size_t k = split.value_or(steps.size());
  return {steps.begin() + static_cast<std::ptrdiff_t>(k), steps.end()};
}

TransitionPath TransitionPath::joined(const TransitionPath& observed, const std::vector<PathStep>& continuation) {
  TransitionPath p;
  p.start = observed.start;
  p.steps = observed.steps;
  p.split = observed.steps.size();
  p.steps.insert(p.steps.end(), continuation.begin(), continuation.end());
  return p;
}

std::string serialize_path(const TransitionPath& path, PathStyle style) {
  std::string out = path.start;
  for (const auto& s : path.steps) out += ' ' + render_relation(s.relation, style) + ' ' + s.event;
  return out;
}

std::string serialize_continuation(const std::vector<PathStep>& steps, PathStyle style) {
  std::string out;
  for (const auto& s : steps) {
    if (!out.empty()) out += ' ';
    out += render_relation(s.relation, style) + ' ' + s.event;
  }
  return out;
}

TransitionPath parse_path(std::string_view line) { return from_items(group(words(line), model_classify)); }

TransitionPath parse_path(std::string_view line, const std::set<std::string>& relations) {
  return from_items(group(words(line), [&](const std::string& w) {
    return std::pair<bool, std::string>{relations.count(w) != 0, w};
  }));
}

std::vector<PathStep> parse_continuation(std::string_view line) {
  auto items = group(words(line), model_classify);
  if (items.empty()) return {};
  if (!items.front().relation) throw ParseError("continuation must start with a relation, found '" + items.front().text + "'");
  // reuse the path parser by prefixing a placeholder start event
  items.insert(items.begin(), Item{false, std::string(tokens::noevt)});
  return from_items(items).steps;
}

std::vector<PathStep> repair_continuation(std::string_view text) {
  std::vector<PathStep> out;
  std::optional<std::string> pending_relation;
  std::string event;
  auto flush = [&] {
    if (pending_relation && !event.empty()) out.push_back({*pending_relation, event});
    pending_relation.reset();
    event.clear();
  };
  for (const auto& w : words(text)) {
    const WordKind k = kind_of(w);
    if (k == WordKind::stop) break;
    if (k == WordKind::relation) {
      if (pending_relation && event.empty()) break;  // two relations in a row
      flush();
      pending_relation = strip_brackets(w);
    } else {
      if (!pending_relation) break;  // event before any relation
      event += event.empty() ? w : ' ' + w;
    }
  }
  flush();
  return out;
}

PathPair split_for_planning(const TransitionPath& path) {
  if (path.steps.empty()) throw DataError("cannot split a 0-hop path into a planning pair");
  TransitionPath p = path;
  p.split = path.hops() / 2;
  return {p.observed(), p.continuation()};
}

std::vector<PathPair> read_path_pairs(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open path-pair file " + file.string());
  std::vector<PathPair> pairs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected 'r_x<TAB>r_y'", n);
    try {
      pairs.push_back({parse_path(line.substr(0, tab)), parse_continuation(line.substr(tab + 1))});
    } catch (const ParseError& e) {
      throw ParseError(e.what(), n);
    }
  }
  return pairs;
}

void write_path_pairs(const std::filesystem::path& file, const std::vector<PathPair>& pairs) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  for (const auto& p : pairs) out << serialize_path(p.observed) << '\t' << serialize_continuation(p.continuation) << '\n';
}

std::vector<TransitionPath> read_paths(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open path file " + file.string());
  std::vector<TransitionPath> paths;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      paths.push_back(parse_path(line));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), n);
    }
  }
  return paths;
}

void write_paths(const std::filesystem::path& file, const std::vector<TransitionPath>& paths) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  for (const auto& p : paths) out << serialize_path(p) << '\n';
}

}  // namespace evplan
