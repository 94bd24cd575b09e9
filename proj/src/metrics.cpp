#include "evplan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace evplan {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[Ngram(toks.begin() + i, toks.begin() + i + n)];
  return counts;
}

bool is_punctuation(const std::string& w) {
  return std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::ispunct(c); });
}

}  // namespace

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, std::size_t max_n) {
  if (candidates.empty()) throw DataError("BLEU needs at least one candidate");
  if (candidates.size() != references.size()) {
    throw DataError("BLEU got " + std::to_string(candidates.size()) + " candidates for " +
                    std::to_string(references.size()) + " references");
  }
  if (max_n == 0) throw UsageError("BLEU order must be positive");
  std::vector<std::size_t> matched(max_n, 0), total(max_n, 0);
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto c = whitespace_tokens(candidates[i]);
    auto r = whitespace_tokens(references[i]);
    cand_len += c.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto cc = ngram_counts(c, n);
      auto rc = ngram_counts(r, n);
      for (const auto& [g, k] : cc) {
        auto it = rc.find(g);
        matched[n - 1] += std::min(k, it == rc.end() ? std::size_t{0} : it->second);
        total[n - 1] += k;
      }
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (matched[n] == 0 || total[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

double dist(const std::vector<std::string>& candidates, std::size_t n) {
  if (candidates.empty()) throw DataError("DIST needs at least one candidate");
  if (n == 0) throw UsageError("DIST order must be positive");
  std::set<Ngram> distinct;
  std::size_t total = 0;
  for (const auto& c : candidates) {
    for (const auto& [g, k] : ngram_counts(whitespace_tokens(c), n)) {
      distinct.insert(g);
      total += k;
    }
  }
  if (total == 0) throw MetricError("DIST-" + std::to_string(n) + " is undefined: every candidate is shorter than " +
                                    std::to_string(n) + " tokens");
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

const std::set<std::string>& stop_words() {
  static const std::set<std::string> words{
      "a",       "about",   "above",  "after",   "again",  "against", "all",     "am",     "an",      "and",
      "any",     "are",     "as",     "at",      "be",     "because", "been",    "before", "being",   "below",
      "between", "both",    "but",    "by",      "can",    "could",   "did",     "do",     "does",    "doing",
      "down",    "during",  "each",   "few",     "for",    "from",    "further", "had",    "has",     "have",
      "having",  "he",      "her",    "here",    "hers",   "herself", "him",     "himself", "his",    "how",
      "i",       "if",      "in",     "into",    "is",     "it",      "its",     "itself", "just",    "me",
      "more",    "most",    "my",     "myself",  "no",     "nor",     "not",     "now",    "of",      "off",
      "on",      "once",    "only",   "or",      "other",  "our",     "ours",    "ourselves", "out",  "over",
      "own",     "same",    "she",    "should",  "so",     "some",    "such",    "than",   "that",    "the",
      "their",   "theirs",  "them",   "themselves", "then", "there",  "these",   "they",   "this",    "those",
      "through", "to",      "too",    "under",   "until",  "up",      "very",    "was",    "we",      "were",
      "what",    "when",    "where",  "which",   "while",  "who",     "whom",    "why",    "will",    "with",
      "would",   "you",     "your",   "yours",   "yourself", "yourselves", "also", "an",   "around",  "away",
      "back",    "came",    "get",    "got",     "go",     "going",   "went",    "one",    "onto",    "really",
      "said",    "say",     "still",  "us",      "upon",   "well",    "yet",     "ever",   "even",    "much",
      "many",    "may",     "might",  "must",    "shall",  "since",   "though",  "toward", "within",  "without"};
  return words;
}

std::size_t content_length(std::string_view text) {
  std::size_t n = 0;
  for (auto w : whitespace_tokens(text)) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (!is_punctuation(w) && !stop_words().count(w)) ++n;
  }
  return n;
}

std::vector<int> length_buckets(const std::vector<std::size_t>& lengths) {
  if (lengths.empty()) return {};
  auto sorted = lengths;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t N = sorted.size();
  std::size_t bound[5];
  for (std::size_t k = 1; k <= 5; ++k) bound[k - 1] = sorted[(k * N + 4) / 5 - 1];
  std::vector<int> out;
  for (auto x : lengths) {
    int b = 1;
    while (b < 5 && x > bound[b - 1]) ++b;
    out.push_back(b);
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : metrics) j["metrics"][k] = v;
  if (group_by) j["group_by"] = *group_by;
  if (group) j["group"] = *group;
  j["candidates"] = candidates;
  j["references"] = references;
  if (empty) j["empty"] = true;
  return j.dump();
}

EvalReport evaluate_texts(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
                          std::optional<double> perplexity) {
  EvalReport r;
  r.candidates = candidates.size();
  r.references = references.size();
  r.metrics["bleu1"] = bleu(candidates, references, 1);
  r.metrics["bleu2"] = bleu(candidates, references, 2);
  r.metrics["bleu4"] = bleu(candidates, references, 4);
  r.metrics["dist1"] = dist(candidates, 1);
  r.metrics["dist2"] = dist(candidates, 2);
  if (perplexity) r.metrics["perplexity"] = *perplexity;
  return r;
}

Grouping parse_grouping(const std::string& name) {
  if (name == "len" || name == "target_length") return Grouping::target_length;
  if (name == "sent" || name == "input_sentences") return Grouping::input_sentences;
  throw UsageError("unknown grouping '" + name + "' (expected len or sent)");
}

std::vector<EvalReport> grouped_report(const std::vector<std::string>& candidates,
                                       const std::vector<std::string>& references,
                                       const std::vector<std::size_t>& context_sentences, Grouping grouping) {
  if (candidates.size() != references.size()) throw DataError("grouped report needs aligned candidates and references");
  const int groups = grouping == Grouping::target_length ? 5 : 4;
  if (candidates.size() < static_cast<std::size_t>(groups)) {
    throw DataError("grouped report needs at least " + std::to_string(groups) + " instances, got " +
                    std::to_string(candidates.size()));
  }
  std::vector<int> key;
  if (grouping == Grouping::target_length) {
    std::vector<std::size_t> lengths;
    for (const auto& r : references) lengths.push_back(content_length(r));
    key = length_buckets(lengths);
  } else {
    if (context_sentences.size() != candidates.size()) throw DataError("grouped report needs a sentence count per instance");
    for (auto n : context_sentences) {
      if (n < 1 || n > 4) throw DataError("input sentence count " + std::to_string(n) + " outside 1..4");
      key.push_back(static_cast<int>(n));
    }
  }
  std::vector<EvalReport> out;
  for (int g = 1; g <= groups; ++g) {
    std::vector<std::string> c, r;
    for (std::size_t i = 0; i < key.size(); ++i) {
      if (key[i] == g) {
        c.push_back(candidates[i]);
        r.push_back(references[i]);
      }
    }
    EvalReport rep;
    rep.group_by = grouping == Grouping::target_length ? "len" : "sent";
    rep.group = g;
    rep.candidates = c.size();
    rep.references = r.size();
    rep.empty = c.empty();
    if (!c.empty()) rep.metrics["bleu1"] = bleu(c, r, 1);
    out.push_back(std::move(rep));
  }
  return out;
}

std::string format_table(const std::vector<EvalReport>& reports) {
  std::set<std::string> names;
  for (const auto& r : reports)
    for (const auto& [k, v] : r.metrics) names.insert(k);
  std::ostringstream out;
  out << std::left << std::setw(8) << "group" << std::setw(8) << "n";
  for (const auto& n : names) out << std::setw(12) << n;
  out << '\n';
  for (const auto& r : reports) {
    out << std::setw(8) << (r.group ? std::to_string(*r.group) : std::string("all")) << std::setw(8) << r.candidates;
    for (const auto& n : names) {
      auto it = r.metrics.find(n);
      std::ostringstream cell;
      if (it == r.metrics.end()) {
        cell << "-";
      } else if (n == "perplexity") {
        cell << std::fixed << std::setprecision(3) << it->second;
      } else {
        cell << std::fixed << std::setprecision(2) << it->second * 100.0;
      }
      out << std::setw(12) << cell.str();
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace evplan
