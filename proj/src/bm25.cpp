#include "evplan/bm25.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "evplan/error.hpp"

namespace evplan {

std::vector<std::string> bm25_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  bool bracket = false;
  auto flush = [&] {
    if (!cur.empty() && !bracket) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (ch == '[') {
      flush();
      bracket = true;
    } else if (ch == ']') {
      cur.clear();
      bracket = false;
    } else if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

Bm25Index::Bm25Index(const std::vector<std::string>& documents, double k1, double b) : k1_(k1), b_(b) {
  double total = 0.0;
  for (const auto& d : documents) {
    std::unordered_map<std::string, std::size_t> tf;
    auto toks = bm25_tokenize(d);
    for (const auto& t : toks) ++tf[t];
    for (const auto& [t, n] : tf) ++df_[t];
    lengths_.push_back(toks.size());
    total += static_cast<double>(toks.size());
    docs_.push_back(std::move(tf));
  }
  avgdl_ = docs_.empty() ? 0.0 : total / static_cast<double>(docs_.size());
}

std::size_t Bm25Index::document_frequency(const std::string& term) const {
  auto it = df_.find(term);
  return it == df_.end() ? 0 : it->second;
}

double Bm25Index::idf(const std::string& term) const {
  const double n = static_cast<double>(docs_.size());
  const double df = static_cast<double>(document_frequency(term));
  return std::max(0.0, std::log((n - df + 0.5) / (df + 0.5)));
}

double Bm25Index::score(const std::vector<std::string>& query_terms, std::size_t doc) const {
  const auto& tf = docs_.at(doc);
  const double norm = avgdl_ > 0.0 ? static_cast<double>(lengths_[doc]) / avgdl_ : 0.0;
  double s = 0.0;
  for (const auto& q : query_terms) {
    auto it = tf.find(q);
    if (it == tf.end()) continue;
    const double f = static_cast<double>(it->second);
    s += idf(q) * f * (k1_ + 1.0) / (f + k1_ * (1.0 - b_ + b_ * norm));
  }
  return s;
}

std::vector<Bm25Index::Hit> Bm25Index::search(std::string_view query, std::size_t k) const {
  if (docs_.empty()) throw RetrievalError("BM25 index is empty (run build-index on a nonempty path file)");
  auto terms = bm25_tokenize(query);
  if (terms.empty()) throw RetrievalError("BM25 query has no indexable words: '" + std::string(query) + "'");
  std::vector<Hit> hits;
  hits.reserve(docs_.size());
  for (std::size_t d = 0; d < docs_.size(); ++d) hits.push_back({d, score(terms, d)});
  const std::size_t n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(),
                    [](const Hit& a, const Hit& b) { return a.score != b.score ? a.score > b.score : a.doc < b.doc; });
  hits.resize(n);
  return hits;
}

RetrievalPlanner::RetrievalPlanner(std::vector<PathPair> pairs, double k1, double b) : pairs_(std::move(pairs)) {
  std::vector<std::string> docs;
  docs.reserve(pairs_.size());
  for (const auto& p : pairs_) docs.push_back(document_text(p.observed));
  index_ = Bm25Index(docs, k1, b);
}

std::string RetrievalPlanner::document_text(const TransitionPath& observed) {
  std::string text = observed.start;
  for (const auto& s : observed.steps) text += " " + s.event;
  return text;
}

std::vector<Bm25Index::Hit> RetrievalPlanner::search(std::string_view context, std::size_t k) const {
  return index_.search(context, k);
}

std::vector<std::vector<PathStep>> RetrievalPlanner::plan(std::string_view context, std::size_t k) const {
  std::vector<std::vector<PathStep>> out;
  for (const auto& h : search(context, k)) out.push_back(pairs_[h.doc].continuation);
  return out;
}

}  // namespace evplan
