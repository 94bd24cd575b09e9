#include "evplan/lm_training.hpp"

#include <algorithm>
#include <cmath>

#include "evplan/autodiff.hpp"
#include "evplan/error.hpp"
#include "evplan/rng.hpp"

namespace evplan {

std::vector<int> encode_lm_text(const Tokenizer& tok, const std::string& text, std::size_t max_len) {
  std::vector<int> ids{tok.bos()};
  auto body = tok.encode(text);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(tok.eos());
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

std::vector<double> train_lm(TransformerLM& model, const Tokenizer& tok, const std::vector<std::string>& texts,
                             const LmTrainOptions& opts) {
  if (texts.empty()) throw DataError("language-model training needs at least one text");
  if (opts.batch == 0) throw UsageError("language-model batch size must be positive");
  std::vector<std::vector<int>> seqs;
  for (const auto& t : texts) seqs.push_back(encode_lm_text(tok, t, model.config().max_len));
  model.set_trainable(true);
  auto params = model.parameters();
  AdamWState state(opts.optim, params);
  std::vector<std::size_t> order(seqs.size());
  std::vector<double> losses;
  std::size_t step = 0;
  for (std::size_t epoch = 0; step < opts.steps; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(opts.seed, 0x1a00 + epoch);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < order.size() && step < opts.steps; s += opts.batch) {
      std::vector<std::vector<int>> mb;
      for (std::size_t i = s; i < std::min(order.size(), s + opts.batch); ++i) mb.push_back(seqs[order[i]]);
      zero_grads(params);
      double value;
      {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = model.lm_loss(TokenBatch::pack(mb, tok.pad()), tok.pad());
        value = loss.item();
        if (!std::isfinite(value)) throw NumericalError("language-model loss is not finite at step " + std::to_string(step));
        tape.backward(loss);
      }
      if (opts.clip_norm > 0.0) clip_grad_norm(params, opts.clip_norm);
      adamw_step(params, state);
      ++step;
      losses.push_back(value);
      if (opts.on_step) opts.on_step(step, value);
    }
  }
  for (auto& p : params) p.clear_grad();
  return losses;
}

double perplexity(const TransformerLM& model, const Tokenizer& tok, const std::vector<std::string>& texts) {
  if (texts.empty()) throw DataError("perplexity over an empty corpus");
  double total = 0.0;
  std::size_t count = 0;
  const std::size_t chunk = 32;
  for (std::size_t s = 0; s < texts.size(); s += chunk) {
    std::vector<std::vector<int>> seqs;
    std::size_t n = 0;
    for (std::size_t i = s; i < std::min(texts.size(), s + chunk); ++i) {
      seqs.push_back(encode_lm_text(tok, texts[i], model.config().max_len));
      n += seqs.back().size() - 1;
    }
    if (n == 0) continue;
    total += model.lm_loss(TokenBatch::pack(seqs, tok.pad()), tok.pad()).item() * static_cast<double>(n);
    count += n;
  }
  if (count == 0) throw EmptyBatchError("perplexity: no predictable tokens");
  return std::exp(total / static_cast<double>(count));
}

}  // namespace evplan
