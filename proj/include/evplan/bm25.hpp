#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evplan/error.hpp"
#include "evplan/path.hpp"

namespace evplan {

class RetrievalError : public DataError {
 public:
  using DataError::DataError;
};

/// Lowercase alphanumeric runs; relation markers and punctuation are dropped.
std::vector<std::string> bm25_tokenize(std::string_view text);

/// Okapi BM25 over a fixed document list:
///   idf(t) = max(0, ln((N - df + 0.5) / (df + 0.5)))
///   score(q, d) = sum over query tokens of idf * tf*(k1+1) / (tf + k1*(1 - b + b*|d|/avgdl))
class Bm25Index {
 public:
  struct Hit {
    std::size_t doc;
    double score;
  };

  Bm25Index() = default;
  explicit Bm25Index(const std::vector<std::string>& documents, double k1 = 1.2, double b = 0.75);

  std::size_t size() const { return docs_.size(); }
  std::size_t document_frequency(const std::string& term) const;
  double idf(const std::string& term) const;
  double average_length() const { return avgdl_; }
  double score(const std::vector<std::string>& query_terms, std::size_t doc) const;
  /// Top k by score, ties by document order.
  std::vector<Hit> search(std::string_view query, std::size_t k) const;

 private:
  double k1_ = 1.2, b_ = 0.75, avgdl_ = 0.0;
  std::vector<std::unordered_map<std::string, std::size_t>> docs_;
  std::vector<std::size_t> lengths_;
  std::unordered_map<std::string, std::size_t> df_;
};

/// Retrieval planner: indexes the event words of each training r_x and
/// returns the stored continuation of the best matches.
class RetrievalPlanner {
 public:
  explicit RetrievalPlanner(std::vector<PathPair> pairs, double k1 = 1.2, double b = 0.75);

  static std::string document_text(const TransitionPath& observed);
  std::vector<Bm25Index::Hit> search(std::string_view context, std::size_t k) const;
  std::vector<std::vector<PathStep>> plan(std::string_view context, std::size_t k) const;
  const std::vector<PathPair>& pairs() const { return pairs_; }
  const Bm25Index& index() const { return index_; }

  void save(const std::filesystem::path& file) const { write_path_pairs(file, pairs_); }
  static RetrievalPlanner load(const std::filesystem::path& file) { return RetrievalPlanner(read_path_pairs(file)); }

 private:
  std::vector<PathPair> pairs_;
  Bm25Index index_;
};

}  // namespace evplan
