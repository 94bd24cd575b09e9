#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evplan/transformer.hpp"

namespace evplan {

enum class DecodeStrategy { greedy, beam_topk, topk_sample };

DecodeStrategy parse_strategy(const std::string& name);
std::string strategy_name(DecodeStrategy s);

struct DecodeParams {
  DecodeStrategy strategy = DecodeStrategy::greedy;
  std::size_t beam_width = 3;
  std::size_t top_k = 5;
  double temperature = 0.7;
  std::size_t max_new = 32;
  std::uint64_t seed = 0;
  /// Generation stops once this token is emitted; negative disables.
  int eos_id = -1;
  /// Hypotheses to return (beam_topk: at most beam_width; topk_sample: independent draws).
  std::size_t num_return = 1;
};

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens only, including a final eos
  double log_prob = 0.0;    // untempered model log-probability
  double score = 0.0;       // log_prob per generated token
  bool finished = false;
};

/// Logits of the next token after each prefix.
using NextLogitsFn = std::function<std::vector<std::vector<double>>(const std::vector<std::vector<int>>& prefixes)>;

std::vector<double> log_softmax(std::span<const double> logits);

/// Greedy: argmax each step. beam_topk: each live beam proposes top_k
/// distinct tokens sampled without replacement at the given temperature
/// (Gumbel top-k), candidates are ranked by untempered log-probability and
/// the best beam_width survive; results are sorted by mean log-probability.
/// topk_sample: ancestral sampling restricted to the top_k tokens.
std::vector<Hypothesis> decode(std::span<const int> prefix, const DecodeParams& params, const NextLogitsFn& next);

/// Adapter running a full forward pass per step (no key/value cache).
NextLogitsFn lm_next_logits(const TransformerLM& model, int pad_id, ForwardOptions base = {});

}  // namespace evplan
