#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evplan/path.hpp"

namespace evplan {

/// Base form of a known verb ("cheered" -> "cheer", "went" -> "go"), or
/// nullopt when the word is not in the bundled verb list.
std::optional<std::string> lemmatize_verb(std::string_view word);

bool is_subject_word(std::string_view word);

/// Subject-verb(-complement) events of one sentence, left to right. Clauses
/// split on punctuation, subordinators and clause-initial "and"; a clause
/// without a verb yields nothing. A sentence with no event yields [NOEVT].
std::vector<std::string> extract_events(std::string_view sentence);

/// One corpus record: context sentences, target sentence and optionally
/// pre-extracted events for each context sentence followed by the target.
///
/// Line layout: context sentences joined by " ||| ", TAB, target, and an
/// optional TAB + events field where sentences are separated by " ||| "
/// and events within a sentence by " ;; ".
struct CorpusInstance {
  std::vector<std::string> context;
  std::string target;
  std::optional<std::vector<std::vector<std::string>>> events;
};

CorpusInstance parse_corpus_line(std::string_view line, std::size_t line_no = 0);
std::string format_corpus_line(const CorpusInstance& instance);
std::vector<CorpusInstance> read_corpus(const std::filesystem::path& file);
void write_corpus(const std::filesystem::path& file, const std::vector<CorpusInstance>& corpus);

/// Context text as fed to the generator: sentences joined by single spaces.
std::string context_text(const CorpusInstance& instance);

/// Events per sentence (context sentences, then the target): pre-extracted
/// lists pass through untouched, other sentences go through extract_events.
std::vector<std::vector<std::string>> instance_events(const CorpusInstance& instance);

/// Relation label predicted for an ordered event pair.
using RelationFn = std::function<std::string(const std::string& from, const std::string& to)>;

/// r_x chains the context events with predicted relations; r_y starts with
/// the relation from the last context event into the first target event.
PathPair build_instance_path(const CorpusInstance& instance, const RelationFn& relation);

}  // namespace evplan
