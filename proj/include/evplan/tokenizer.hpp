#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace evplan {

namespace tokens {
inline constexpr std::string_view bos = "[BOS]";
inline constexpr std::string_view eos = "[EOS]";
inline constexpr std::string_view pad = "[PAD]";
inline constexpr std::string_view sep = "[SEP]";
inline constexpr std::string_view noevt = "[NOEVT]";
}  // namespace tokens

/// [BOS], [EOS], [PAD], [SEP], [NOEVT]
std::vector<std::string> control_tokens();
/// "xAttr" -> "[xAttr]"
std::string relation_token(std::string_view label);
bool is_control_token(std::string_view token);
/// Control tokens followed by "[r]" and "[_r]" for each forward label.
std::vector<std::string> path_specials(std::span<const std::string> forward_relations);

/// GPT-2 style pre-split: a chunk is an optional single leading space plus a
/// run of letters/digits, or of other non-space bytes, or a whitespace run.
std::vector<std::string> pretokenize(std::string_view text);

struct MergeRule {
  int left;
  int right;
  int result;
};

/// Byte-level BPE vocabulary. Ids are laid out as specials, then the 256
/// byte symbols, then merge outputs. Immutable after construction.
class Tokenizer {
 public:
  /// Greedy BPE: repeatedly merge the most frequent adjacent pair (ties go
  /// to the lexicographically smaller merged string) until the vocabulary
  /// reaches target_size or no pair is left.
  static Tokenizer train(std::span<const std::string> corpus, std::size_t target_size,
                         std::span<const std::string> specials);

  static Tokenizer read(std::istream& in);
  static Tokenizer load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  std::optional<int> find_special(std::string_view token) const;
  /// Id of a special token; throws UsageError if it is not reserved.
  int special_id(std::string_view token) const;
  bool is_special(int id) const { return id >= 0 && static_cast<std::size_t>(id) < specials_.size(); }
  int byte_id(unsigned char byte) const { return static_cast<int>(specials_.size()) + byte; }

  std::span<const std::string> specials() const { return specials_; }
  std::span<const MergeRule> merges() const { return merges_; }

  int bos() const { return special_id(tokens::bos); }
  int eos() const { return special_id(tokens::eos); }
  int pad() const { return special_id(tokens::pad); }
  int sep() const { return special_id(tokens::sep); }
  int noevt() const { return special_id(tokens::noevt); }

 private:
  Tokenizer() = default;
  void init_base(std::span<const std::string> specials);
  void add_merge(int left, int right);
  std::vector<int> encode_chunk(std::string_view chunk) const;

  std::vector<std::string> specials_;
  std::vector<std::string> tokens_;
  std::vector<MergeRule> merges_;
  std::unordered_map<std::string, int> special_ids_;
  std::unordered_map<std::string, int> token_ids_;  // non-special tokens
  std::unordered_map<std::uint64_t, std::size_t> merge_rank_;
};

}  // namespace evplan
