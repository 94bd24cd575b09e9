#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "evplan/error.hpp"

namespace evplan {

/// A metric with no defined value on the given input (e.g. no n-grams at all).
class MetricError : public DataError {
 public:
  using DataError::DataError;
};

std::vector<std::string> whitespace_tokens(std::string_view text);

/// Corpus BLEU: clipped n-gram precisions of orders 1..max_n, uniform
/// geometric mean, brevity penalty, no smoothing.
double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, std::size_t max_n);

/// Distinct n-grams over all candidates divided by the total n-gram count.
double dist(const std::vector<std::string>& candidates, std::size_t n);

/// Bundled English stop-word list (lowercase).
const std::set<std::string>& stop_words();
/// Tokens that are not stop words or bare punctuation.
std::size_t content_length(std::string_view text);

/// Quintile buckets 1..5 over content lengths: with the lengths sorted,
/// bucket k's upper bound is the value at rank ceil(k*N/5), and a length
/// belongs to the first bucket whose bound it does not exceed.
std::vector<int> length_buckets(const std::vector<std::size_t>& lengths);

struct EvalReport {
  std::map<std::string, double> metrics;
  std::optional<std::string> group_by;
  std::optional<int> group;
  std::size_t candidates = 0;
  std::size_t references = 0;
  bool empty = false;

  std::string to_json() const;
};

/// BLEU-1/2/4 and DIST-1/2, plus perplexity when given.
EvalReport evaluate_texts(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
                          std::optional<double> perplexity = std::nullopt);

enum class Grouping { target_length, input_sentences };
Grouping parse_grouping(const std::string& name);

/// One report per group (1..5 length buckets, or 1..4 context sentences),
/// each with BLEU-1 and the group size; groups without members are flagged empty.
std::vector<EvalReport> grouped_report(const std::vector<std::string>& candidates,
                                       const std::vector<std::string>& references,
                                       const std::vector<std::size_t>& context_sentences, Grouping grouping);

/// Plain-text table of reports.
std::string format_table(const std::vector<EvalReport>& reports);

}  // namespace evplan
