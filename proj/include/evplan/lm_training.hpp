#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evplan/optim.hpp"
#include "evplan/tokenizer.hpp"
#include "evplan/transformer.hpp"

namespace evplan {

struct LmTrainOptions {
  AdamWConfig optim{1e-3, 0.9, 0.999, 1e-8, 0.0};
  std::size_t batch = 16;
  std::size_t steps = 500;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::function<void(std::size_t step, double loss)> on_step;
};

/// [BOS] text [EOS], cut to max_len tokens.
std::vector<int> encode_lm_text(const Tokenizer& tok, const std::string& text, std::size_t max_len);

/// Plain next-token training on shuffled texts; returns the per-step losses.
std::vector<double> train_lm(TransformerLM& model, const Tokenizer& tok, const std::vector<std::string>& texts,
                             const LmTrainOptions& opts);

/// exp of the token-weighted mean next-token loss over non-pad positions.
double perplexity(const TransformerLM& model, const Tokenizer& tok, const std::vector<std::string>& texts);

}  // namespace evplan
