#include "evplan/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "evplan/error.hpp"

namespace evplan {

namespace {

std::uint64_t pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

enum class ByteClass { space, word, other };

ByteClass classify(unsigned char c) {
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') return ByteClass::space;
  if (std::isalnum(c) || c >= 0x80) return ByteClass::word;
  return ByteClass::other;
}

std::string escape(std::string_view s) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : s) {
    if (c > 0x20 && c < 0x7f && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      out += "\\x";
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 15]);
    }
  }
  return out;
}

std::string unescape(std::string_view s, std::size_t line) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 3 >= s.size()) throw ParseError("truncated escape", line);
    if (s[i + 1] != 'x') throw ParseError("bad escape", line);
    const std::string hex(s.substr(i + 2, 2));
    out.push_back(static_cast<char>(std::stoi(hex, nullptr, 16)));
    i += 3;
  }
  return out;
}

// Splits text into alternating plain segments and special-token matches
// (longest match wins).
template <typename OnText, typename OnSpecial>
void split_specials(std::string_view text, const std::vector<std::string>& specials, OnText on_text,
                    OnSpecial on_special) {
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    int best = -1;
    std::size_t best_len = 0;
    for (std::size_t s = 0; s < specials.size(); ++s) {
      const auto& sp = specials[s];
      if (sp.size() > best_len && text.compare(i, sp.size(), sp) == 0) {
        best = static_cast<int>(s);
        best_len = sp.size();
      }
    }
    if (best < 0) {
      ++i;
      continue;
    }
    if (i > start) on_text(text.substr(start, i - start));
    on_special(best);
    i += best_len;
    start = i;
  }
  if (start < text.size()) on_text(text.substr(start));
}

}  // namespace

std::vector<std::string> control_tokens() {
  return {std::string(tokens::bos), std::string(tokens::eos), std::string(tokens::pad), std::string(tokens::sep),
          std::string(tokens::noevt)};
}

std::string relation_token(std::string_view label) { return "[" + std::string(label) + "]"; }

std::vector<std::string> path_specials(std::span<const std::string> forward_relations) {
  auto out = control_tokens();
  for (const auto& r : forward_relations) {
    out.push_back(relation_token(r));
    out.push_back(relation_token("_" + r));
  }
  return out;
}

bool is_control_token(std::string_view token) {
  return token == tokens::bos || token == tokens::eos || token == tokens::pad || token == tokens::sep ||
         token == tokens::noevt;
}

std::vector<std::string> pretokenize(std::string_view text) {
  std::vector<std::string> chunks;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto cls = [&](std::size_t k) { return classify(static_cast<unsigned char>(text[k])); };
  while (i < n) {
    const std::size_t start = i;
    if (text[i] == ' ' && i + 1 < n && cls(i + 1) != ByteClass::space) {
      ++i;
    }
    const ByteClass c = cls(i);
    if (c == ByteClass::space) {
      std::size_t j = i;
      while (j < n && cls(j) == ByteClass::space) ++j;
      // leave a trailing single space to lead the next word
      if (j < n && j - i > 1 && text[j - 1] == ' ') --j;
      i = j;
    } else {
      while (i < n && cls(i) == c) ++i;
    }
    chunks.emplace_back(text.substr(start, i - start));
  }
  return chunks;
}

void Tokenizer::init_base(std::span<const std::string> specials) {
  std::set<std::string> seen;
  for (const auto& s : specials) {
    if (s.empty()) throw ConfigError("special tokens must be nonempty");
    if (s.size() == 1) throw ConfigError("special token '" + s + "' collides with a base byte symbol");
    if (!seen.insert(s).second) throw ConfigError("duplicate special token '" + s + "'");
  }
  specials_.assign(specials.begin(), specials.end());
  tokens_.clear();
  for (std::size_t i = 0; i < specials_.size(); ++i) {
    tokens_.push_back(specials_[i]);
    special_ids_[specials_[i]] = static_cast<int>(i);
  }
  for (int b = 0; b < 256; ++b) {
    std::string s(1, static_cast<char>(b));
    token_ids_[s] = static_cast<int>(tokens_.size());
    tokens_.push_back(std::move(s));
  }
}

void Tokenizer::add_merge(int left, int right) {
  std::string merged = tokens_.at(static_cast<std::size_t>(left)) + tokens_.at(static_cast<std::size_t>(right));
  int result;
  if (auto it = token_ids_.find(merged); it != token_ids_.end()) {
    result = it->second;
  } else {
    result = static_cast<int>(tokens_.size());
    token_ids_[merged] = result;
    tokens_.push_back(std::move(merged));
  }
  merge_rank_[pair_key(left, right)] = merges_.size();
  merges_.push_back(MergeRule{left, right, result});
}

Tokenizer Tokenizer::train(std::span<const std::string> corpus, std::size_t target_size,
                           std::span<const std::string> specials) {
  Tokenizer tok;
  tok.init_base(specials);
  if (target_size < tok.tokens_.size()) {
    throw ConfigError("target vocabulary size " + std::to_string(target_size) + " is below the " +
                      std::to_string(tok.tokens_.size()) + " base symbols and specials");
  }
  std::map<std::string, long long> word_counts;
  bool any_text = false;
  for (const auto& doc : corpus) {
    split_specials(
        doc, tok.specials_,
        [&](std::string_view piece) {
          for (auto& chunk : pretokenize(piece)) {
            any_text = true;
            ++word_counts[chunk];
          }
        },
        [](int) {});
  }
  if (!any_text) throw DataError("cannot train a tokenizer on an empty corpus");

  struct Word {
    std::vector<int> symbols;
    long long count;
  };
  std::vector<Word> words;
  for (const auto& [w, c] : word_counts) {
    Word word{{}, c};
    for (unsigned char b : w) word.symbols.push_back(tok.byte_id(b));
    words.push_back(std::move(word));
  }

  std::set<std::string> special_set(tok.specials_.begin(), tok.specials_.end());
  while (tok.tokens_.size() < target_size) {
    std::map<std::pair<int, int>, long long> counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
    }
    const std::pair<int, int>* best = nullptr;
    long long best_count = 0;
    std::string best_merged;
    for (const auto& [pair, c] : counts) {
      std::string merged = tok.tokens_[static_cast<std::size_t>(pair.first)] +
                           tok.tokens_[static_cast<std::size_t>(pair.second)];
      if (special_set.count(merged) != 0) continue;
      const bool better =
          best == nullptr || c > best_count ||
          (c == best_count &&
           (merged < best_merged ||
            (merged == best_merged &&
             tok.tokens_[static_cast<std::size_t>(pair.first)] < tok.tokens_[static_cast<std::size_t>(best->first)])));
      if (better) {
        best = &pair;
        best_count = c;
        best_merged = std::move(merged);
      }
    }
    if (best == nullptr) break;
    const auto [left, right] = *best;
    tok.add_merge(left, right);
    const int result = tok.merges_.back().result;
    for (auto& w : words) {
      std::vector<int> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
          next.push_back(result);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
  }
  return tok;
}

std::vector<int> Tokenizer::encode_chunk(std::string_view chunk) const {
  std::vector<int> symbols;
  symbols.reserve(chunk.size());
  for (unsigned char b : chunk) symbols.push_back(byte_id(b));
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != merge_rank_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const MergeRule& rule = merges_[best_rank];
    std::vector<int> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == rule.left && symbols[i + 1] == rule.right) {
        next.push_back(rule.result);
        ++i;
      } else {
        next.push_back(symbols[i]);
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  split_specials(
      text, specials_,
      [&](std::string_view piece) {
        for (const auto& chunk : pretokenize(piece)) {
          auto part = encode_chunk(chunk);
          ids.insert(ids.end(), part.begin(), part.end());
        }
      },
      [&](int s) { ids.push_back(s); });
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += token(id);
  return out;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " is not in the vocabulary (size " +
                    std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Tokenizer::find_special(std::string_view token) const {
  auto it = special_ids_.find(std::string(token));
  if (it == special_ids_.end()) return std::nullopt;
  return it->second;
}

int Tokenizer::special_id(std::string_view token) const {
  auto id = find_special(token);
  if (!id) throw UsageError("'" + std::string(token) + "' is not a reserved special token");
  return *id;
}

void Tokenizer::write(std::ostream& out) const {
  out << "evplan-bpe 1\n";
  out << "specials " << specials_.size() << '\n';
  for (const auto& s : specials_) out << escape(s) << '\n';
  out << "bytes 256\n";
  for (int b = 0; b < 256; ++b) out << escape(std::string(1, static_cast<char>(b))) << '\n';
  out << "merges " << merges_.size() << '\n';
  for (const auto& m : merges_) {
    out << escape(tokens_[static_cast<std::size_t>(m.left)]) << ' ' << escape(tokens_[static_cast<std::size_t>(m.right)])
        << '\n';
  }
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write(out);
}

Tokenizer Tokenizer::read(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::string {
    if (!std::getline(in, line)) throw ParseError("unexpected end of vocab file", line_no + 1);
    ++line_no;
    return line;
  };
  auto section_count = [&](const std::string& name) {
    const std::string header = next();
    std::istringstream ss(header);
    std::string word;
    std::size_t count = 0;
    if (!(ss >> word >> count) || word != name) throw ParseError("expected '" + name + " <count>'", line_no);
    return count;
  };
  if (next() != "evplan-bpe 1") throw ParseError("not an evplan BPE vocabulary", line_no);
  std::vector<std::string> specials(section_count("specials"));
  for (auto& s : specials) s = unescape(next(), line_no);
  Tokenizer tok;
  tok.init_base(specials);
  if (section_count("bytes") != 256) throw ParseError("byte section must list 256 symbols", line_no);
  for (int b = 0; b < 256; ++b) {
    if (unescape(next(), line_no) != std::string(1, static_cast<char>(b))) {
      throw ParseError("byte symbols out of order", line_no);
    }
  }
  const std::size_t merges = section_count("merges");
  for (std::size_t m = 0; m < merges; ++m) {
    const std::string rule = next();
    const auto space = rule.find(' ');
    if (space == std::string::npos) throw ParseError("merge rule needs 'left right'", line_no);
    auto left = tok.token_ids_.find(unescape(rule.substr(0, space), line_no));
    auto right = tok.token_ids_.find(unescape(rule.substr(space + 1), line_no));
    if (left == tok.token_ids_.end() || right == tok.token_ids_.end()) {
      throw ParseError("merge rule refers to an unknown symbol", line_no);
    }
    tok.add_merge(left->second, right->second);
  }
  return tok;
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocab " + path.string());
  return read(in);
}

}  // namespace evplan
