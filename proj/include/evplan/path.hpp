#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace evplan {

struct PathStep {
  std::string relation;  // bare label, e.g. "xAttr" or "_xAttr"
  std::string event;
  bool operator==(const PathStep&) const = default;
};

/// e0 rel1 e1 ... rel_h e_h. When split is set, the first *split steps form
/// the observed prefix r_x and the remaining steps the continuation r_y.
struct TransitionPath {
  std::string start;
  std::vector<PathStep> steps;
  std::optional<std::size_t> split;

  std::size_t hops() const { return steps.size(); }
  const std::string& last_event() const { return steps.empty() ? start : steps.back().event; }
  TransitionPath observed() const;
  std::vector<PathStep> continuation() const;
  /// r_x followed by the given continuation, with split at the boundary.
  static TransitionPath joined(const TransitionPath& observed, const std::vector<PathStep>& continuation);
  bool operator==(const TransitionPath&) const = default;
};

enum class PathStyle {
  model,  // relations as bracketed special tokens: "a [xAttr] b"
  human,  // bare labels: "a xAttr b"
};

std::string serialize_path(const TransitionPath& path, PathStyle style = PathStyle::model);
std::string serialize_continuation(const std::vector<PathStep>& steps, PathStyle style = PathStyle::model);

/// Model-style parse: any bracketed word other than a control token is a relation.
TransitionPath parse_path(std::string_view line);
/// Human-style parse: a word is a relation when it appears in `relations`.
TransitionPath parse_path(std::string_view line, const std::set<std::string>& relations);
std::vector<PathStep> parse_continuation(std::string_view line);

/// Longest relation-led prefix of a decoded continuation whose events are
/// nonempty; everything from the first alternation violation on is dropped.
std::vector<PathStep> repair_continuation(std::string_view text);

/// Two-column planner pairs: "r_x TAB r_y" per line, model style.
struct PathPair {
  TransitionPath observed;
  std::vector<PathStep> continuation;
};
std::vector<PathPair> read_path_pairs(const std::filesystem::path& file);
void write_path_pairs(const std::filesystem::path& file, const std::vector<PathPair>& pairs);

/// One model-style path per line.
std::vector<TransitionPath> read_paths(const std::filesystem::path& file);
void write_paths(const std::filesystem::path& file, const std::vector<TransitionPath>& paths);

/// Planner pair from a sampled path: r_x keeps the first hops/2 steps, r_y
/// the rest, so r_y is never empty.
PathPair split_for_planning(const TransitionPath& path);

}  // namespace evplan
